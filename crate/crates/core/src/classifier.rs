//! Sentence scorer used to estimate benefits: logistic regression over hashed
//! token 1–2-grams, optionally with averaged word embeddings.

use std::collections::HashMap;
use std::fs::File;
use std::hash::{Hash, Hasher};
use std::io::{BufRead, BufReader};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rustc_hash::FxHasher;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocId, DocSet, Sentence};
use crate::error::{Error, Result};
use crate::hierarchy::Benefit;

pub const RESCORE_THRESHOLD: f64 = 0.3;
pub const RESCORE_PERIOD: u8 = 3;
const SNAPSHOT_VERSION: u32 = 1;

/// Probability that a sentence is positive.
pub trait Scorer: Send + Sync {
    fn score(&self, sentence: &Sentence) -> f64;
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerConfig {
    /// Hashed feature space has `2^dim_bits` slots.
    pub dim_bits: u32,
    /// Sampled negatives per positive.
    pub negative_ratio: f64,
    pub epochs: usize,
    pub learning_rate: f64,
    pub l2: f64,
    pub seed: u64,
}

impl Default for ScorerConfig {
    fn default() -> Self {
        ScorerConfig {
            dim_bits: 18,
            negative_ratio: 3.0,
            epochs: 8,
            learning_rate: 0.5,
            l2: 0.03,
            seed: 0,
        }
    }
}

/// Word vectors read from `token v1 v2 ... vd` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Embeddings {
    dim: usize,
    vectors: HashMap<String, Vec<f32>>,
}

impl Embeddings {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(BufReader::new(file))
    }

    pub fn read(reader: impl BufRead) -> Result<Self> {
        let mut dim = 0;
        let mut vectors = HashMap::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line.map_err(|e| Error::Malformed {
                line: i + 1,
                message: e.to_string(),
            })?;
            let mut parts = line.split_whitespace();
            let Some(token) = parts.next() else {
                continue;
            };
            let v: Vec<f32> = parts
                .map(str::parse)
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::Malformed {
                    line: i + 1,
                    message: format!("bad vector component: {e}"),
                })?;
            if dim == 0 {
                dim = v.len();
            }
            if v.len() != dim || dim == 0 {
                return Err(Error::Malformed {
                    line: i + 1,
                    message: format!("expected {dim} components, found {}", v.len()),
                });
            }
            vectors.insert(token.to_lowercase(), v);
        }
        Ok(Embeddings { dim, vectors })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn average(&self, tokens: &[String]) -> Vec<f64> {
        let mut acc = vec![0.0; self.dim];
        let mut n = 0;
        for t in tokens {
            if let Some(v) = self.vectors.get(t) {
                for (a, x) in acc.iter_mut().zip(v) {
                    *a += *x as f64;
                }
                n += 1;
            }
        }
        if n > 0 {
            acc.iter_mut().for_each(|a| *a /= n as f64);
        }
        acc
    }
}

fn hash_feature(parts: &[&str], mask: u64) -> u32 {
    let mut h = FxHasher::default();
    parts.len().hash(&mut h);
    for p in parts {
        p.hash(&mut h);
    }
    (h.finish() & mask) as u32
}

/// L2-normalized hashed unigram and bigram counts, sorted by slot.
pub fn features(tokens: &[String], dim_bits: u32) -> Vec<(u32, f64)> {
    let mask = (1u64 << dim_bits) - 1;
    let mut slots: Vec<u32> = Vec::with_capacity(tokens.len() * 2 + 1);
    for (i, t) in tokens.iter().enumerate() {
        slots.push(hash_feature(&[t], mask));
        if i + 1 < tokens.len() {
            slots.push(hash_feature(&[t, &tokens[i + 1]], mask));
        }
    }
    slots.sort_unstable();
    let mut out: Vec<(u32, f64)> = Vec::with_capacity(slots.len());
    for s in slots {
        match out.last_mut() {
            Some((slot, c)) if *slot == s => *c += 1.0,
            _ => out.push((s, 1.0)),
        }
    }
    let norm = out.iter().map(|(_, c)| c * c).sum::<f64>().sqrt();
    if norm > 0.0 {
        out.iter_mut().for_each(|(_, c)| *c /= norm);
    }
    out
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug)]
pub struct LinearScorer {
    dim_bits: u32,
    weights: Vec<f64>,
    bias: f64,
    embeddings: Option<Arc<Embeddings>>,
    embedding_weights: Vec<f64>,
}

impl LinearScorer {
    fn logit(&self, feats: &[(u32, f64)], emb: Option<&[f64]>) -> f64 {
        let mut z = self.bias;
        for &(i, x) in feats {
            z += self.weights[i as usize] * x;
        }
        if let Some(e) = emb {
            z += self.embedding_weights.iter().zip(e).map(|(w, x)| w * x).sum::<f64>();
        }
        z
    }

    pub fn snapshot(&self) -> ScorerSnapshot {
        ScorerSnapshot {
            v: SNAPSHOT_VERSION,
            dim_bits: self.dim_bits,
            bias: self.bias,
            weights: self
                .weights
                .iter()
                .enumerate()
                .filter(|(_, w)| **w != 0.0)
                .map(|(i, w)| (i as u32, *w))
                .collect(),
            embedding_weights: self.embedding_weights.clone(),
        }
    }

    /// Restores a scorer; embedding weights need the same embeddings back.
    pub fn from_snapshot(snap: &ScorerSnapshot, embeddings: Option<Arc<Embeddings>>) -> Result<Self> {
        if snap.v != SNAPSHOT_VERSION {
            return Err(Error::Version {
                found: snap.v,
                expected: SNAPSHOT_VERSION,
            });
        }
        let dim = embeddings.as_ref().map_or(0, |e| e.dim());
        if dim != snap.embedding_weights.len() {
            return Err(Error::Config("embedding dimension does not match the snapshot".into()));
        }
        let mut weights = vec![0.0; 1 << snap.dim_bits];
        for &(i, w) in &snap.weights {
            *weights
                .get_mut(i as usize)
                .ok_or_else(|| Error::Config(format!("weight slot {i} out of range")))? = w;
        }
        Ok(LinearScorer {
            dim_bits: snap.dim_bits,
            weights,
            bias: snap.bias,
            embeddings,
            embedding_weights: snap.embedding_weights.clone(),
        })
    }
}

impl Scorer for LinearScorer {
    fn score(&self, sentence: &Sentence) -> f64 {
        let feats = features(&sentence.tokens, self.dim_bits);
        let emb = self.embeddings.as_ref().map(|e| e.average(&sentence.tokens));
        sigmoid(self.logit(&feats, emb.as_deref()))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScorerSnapshot {
    pub v: u32,
    pub dim_bits: u32,
    pub bias: f64,
    /// Non-zero weights by slot.
    pub weights: Vec<(u32, f64)>,
    pub embedding_weights: Vec<f64>,
}

/// Seeds the sampling stream of training round `round`.
pub fn round_rng(seed: u64, round: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ round.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

/// Trains on `positives` against `negative_ratio·|positives|` sentences drawn
/// uniformly from the rest. With `pool`, both sides are restricted to it.
pub fn train(
    corpus: &Corpus,
    positives: &DocSet,
    pool: Option<&DocSet>,
    config: &ScorerConfig,
    round: u64,
    embeddings: Option<Arc<Embeddings>>,
) -> Result<LinearScorer> {
    let in_pool = |d: usize| pool.is_none_or(|p| p.contains(d));
    let pos: Vec<DocId> = positives
        .ones()
        .filter(|&d| d < corpus.len() && in_pool(d))
        .map(|d| d as DocId)
        .collect();
    if pos.is_empty() {
        return Err(Error::NoPositives);
    }
    let mut rng = round_rng(config.seed, round);
    let rest: Vec<DocId> = (0..corpus.len())
        .filter(|&d| !positives.contains(d) && in_pool(d))
        .map(|d| d as DocId)
        .collect();
    let wanted = ((pos.len() as f64 * config.negative_ratio).round() as usize).min(rest.len());
    let neg: Vec<DocId> = rand::seq::index::sample(&mut rng, rest.len(), wanted)
        .into_iter()
        .map(|i| rest[i])
        .collect();

    let mut examples: Vec<(Vec<(u32, f64)>, Option<Vec<f64>>, f64)> = pos
        .iter()
        .map(|&d| (d, 1.0))
        .chain(neg.iter().map(|&d| (d, 0.0)))
        .map(|(d, y)| {
            let s = corpus.get(d);
            let emb = embeddings.as_ref().map(|e| e.average(&s.tokens));
            (features(&s.tokens, config.dim_bits), emb, y)
        })
        .collect();

    let mut model = LinearScorer {
        dim_bits: config.dim_bits,
        weights: vec![0.0; 1 << config.dim_bits],
        bias: 0.0,
        embedding_weights: vec![0.0; embeddings.as_ref().map_or(0, |e| e.dim())],
        embeddings,
    };
    // balance the classes so the decision threshold stays near 0.5
    let n_pos = pos.len() as f64;
    let n_neg = neg.len().max(1) as f64;
    let (w_pos, w_neg) = if neg.is_empty() {
        (1.0, 1.0)
    } else {
        ((n_pos + n_neg) / (2.0 * n_pos), (n_pos + n_neg) / (2.0 * n_neg))
    };
    for epoch in 0..config.epochs {
        examples.shuffle(&mut rng);
        let lr = config.learning_rate / (1.0 + epoch as f64 * 0.5);
        for (feats, emb, y) in &examples {
            let p = sigmoid(model.logit(feats, emb.as_deref()));
            let g = (p - y) * if *y > 0.5 { w_pos } else { w_neg };
            for &(i, x) in feats {
                let w = &mut model.weights[i as usize];
                *w -= lr * (g * x + config.l2 * *w);
            }
            if let Some(e) = emb {
                for (w, x) in model.embedding_weights.iter_mut().zip(e) {
                    *w -= lr * (g * x + config.l2 * *w);
                }
            }
            model.bias -= lr * g;
        }
    }
    Ok(model)
}

/// Cached per-sentence scores with lazy refreshing: a sentence is rescored
/// when its score exceeds the threshold or it has gone unrefreshed for a
/// full period.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreCache {
    scores: Vec<f64>,
    staleness: Vec<u8>,
    fresh: bool,
    pub threshold: f64,
    pub period: u8,
}

impl ScoreCache {
    pub fn new(n: usize) -> Self {
        ScoreCache {
            scores: vec![0.0; n],
            staleness: vec![0; n],
            fresh: true,
            threshold: RESCORE_THRESHOLD,
            period: RESCORE_PERIOD,
        }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn score(&self, d: DocId) -> f64 {
        self.scores[d as usize]
    }

    pub fn staleness(&self, d: DocId) -> u8 {
        self.staleness[d as usize]
    }

    /// Overrides one entry; for tests and replay.
    pub fn set(&mut self, d: DocId, score: f64, staleness: u8) {
        self.scores[d as usize] = score;
        self.staleness[d as usize] = staleness;
        self.fresh = false;
    }

    /// Refreshes the cache; returns how many sentences were rescored.
    pub fn score_all(&mut self, scorer: &dyn Scorer, corpus: &Corpus, lazy: bool) -> usize {
        let full = !lazy || self.fresh;
        self.fresh = false;
        let mut rescored = 0;
        for (d, s) in corpus.sentences().iter().enumerate() {
            let due = full
                || self.scores[d] > self.threshold
                || self.staleness[d] + 1 >= self.period;
            if due {
                self.scores[d] = scorer.score(s);
                self.staleness[d] = 0;
                rescored += 1;
            } else {
                self.staleness[d] += 1;
            }
        }
        rescored
    }

    /// Sentences scored at or above `cut`.
    pub fn predicted(&self, cut: f64) -> DocSet {
        let mut set = DocSet::with_capacity(self.scores.len());
        set.extend(
            self.scores
                .iter()
                .enumerate()
                .filter(|(_, s)| **s >= cut)
                .map(|(i, _)| i),
        );
        set
    }
}

/// Summed and average score over covered sentences outside `positives`.
pub fn benefit(coverage: &[DocId], positives: &DocSet, cache: &ScoreCache) -> Benefit {
    let mut total = 0.0;
    let mut n = 0usize;
    for &d in coverage {
        if !positives.contains(d as usize) {
            total += cache.score(d);
            n += 1;
        }
    }
    Benefit {
        total,
        average: if n == 0 { 0.0 } else { total / n as f64 },
        new_count: n,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed(f64);

    impl Scorer for Fixed {
        fn score(&self, _: &Sentence) -> f64 {
            self.0
        }
    }

    fn corpus(n: usize) -> Corpus {
        Corpus::new((0..n).map(|i| Sentence::new(i as u64, format!("s {i}"))).collect()).unwrap()
    }

    #[test]
    fn benefit_arithmetic() {
        let mut cache = ScoreCache::new(3);
        cache.set(0, 0.9, 0);
        cache.set(1, 0.7, 0);
        cache.set(2, 0.2, 0);
        let mut p = DocSet::with_capacity(3);
        p.insert(2);
        let b = benefit(&[0, 1, 2], &p, &cache);
        assert!((b.total - 1.6).abs() < 1e-12);
        assert!((b.average - 0.8).abs() < 1e-12);
        assert_eq!(benefit(&[2], &p, &cache), Benefit::default());
    }

    #[test]
    fn low_score_waits_for_its_period() {
        let c = corpus(2);
        let mut cache = ScoreCache::new(2);
        cache.set(0, 0.1, 1);
        cache.set(1, 0.5, 0);
        let rescored = cache.score_all(&Fixed(0.6), &c, true);
        assert_eq!(rescored, 1);
        assert_eq!(cache.score(0), 0.1);
        assert_eq!(cache.staleness(0), 2);
        assert_eq!(cache.score(1), 0.6);
        cache.score_all(&Fixed(0.6), &c, true);
        assert_eq!(cache.score(0), 0.6);
        assert_eq!(cache.staleness(0), 0);
    }

    #[test]
    fn fresh_cache_is_fully_scored() {
        let c = corpus(4);
        let mut cache = ScoreCache::new(4);
        assert_eq!(cache.score_all(&Fixed(0.1), &c, true), 4);
    }

    #[test]
    fn no_positives_is_an_error() {
        let c = corpus(4);
        let p = c.empty_set();
        assert!(matches!(
            train(&c, &p, None, &ScorerConfig::default(), 0, None),
            Err(Error::NoPositives)
        ));
    }

    #[test]
    fn embeddings_parse_and_reject_ragged_rows() {
        let e = Embeddings::read("a 1 0\nb 0 1\n".as_bytes()).unwrap();
        assert_eq!(e.dim(), 2);
        assert!(Embeddings::read("a 1 0\nb 0\n".as_bytes()).is_err());
    }
}
