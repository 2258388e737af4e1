//! Desk-scale experiments on synthetic corpora with planted rules: corpus
//! generation, strategy comparisons, the active-learning and keyword
//! baselines, and parameter sweeps.

use std::collections::BTreeMap;
use std::sync::Arc;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Zipf};
use serde::{Deserialize, Serialize};

use crate::classifier::{self, Scorer, ScorerConfig};
use crate::corpus::{Corpus, DocId, DocSet, Sentence};
use crate::engine::{self, ClassifierMetrics, CurvePoint, Seed, Session, SessionConfig};
use crate::error::{Error, Result};
use crate::index::SketchIndex;
use crate::oracle::SimulatedOracle;
use crate::traversal::Strategy;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_sentences: usize,
    pub vocab_size: usize,
    pub n_planted: usize,
    pub min_phrase_len: usize,
    pub max_phrase_len: usize,
    pub positive_rate: f64,
    /// Share of a planted phrase's occurrences that fall in negatives.
    pub noise: f64,
    /// Chance that a positive carries a second planted phrase.
    pub overlap: f64,
    /// Words that lean positive without deciding the label; each positive
    /// carries two to four of them.
    pub topic_words: usize,
    /// Chance that a negative carries one topic word.
    pub topic_leak: f64,
    pub min_len: usize,
    pub max_len: usize,
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_sentences: 10_000,
            vocab_size: 2_000,
            n_planted: 8,
            min_phrase_len: 2,
            max_phrase_len: 4,
            positive_rate: 0.05,
            noise: 0.1,
            overlap: 0.3,
            topic_words: 10,
            topic_leak: 0.1,
            min_len: 6,
            max_len: 14,
            zipf_exponent: 1.07,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Plant {
    pub phrase: String,
    /// Gold positives carrying the phrase.
    pub positives: usize,
    /// Negatives carrying the phrase.
    pub negatives: usize,
}

impl Plant {
    pub fn precision(&self) -> f64 {
        self.positives as f64 / (self.positives + self.negatives).max(1) as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantManifest {
    pub spec: SyntheticSpec,
    pub plants: Vec<Plant>,
    pub positives: usize,
}

/// Expected precision of a plant: negatives are planted at
/// `round(m·noise/(1−noise))` for `m` positive occurrences.
pub fn expected_precision(positives: usize, noise: f64) -> f64 {
    let neg = noise_count(positives, noise);
    positives as f64 / (positives + neg).max(1) as f64
}

fn noise_count(positives: usize, noise: f64) -> usize {
    if noise <= 0.0 {
        0
    } else {
        (positives as f64 * noise / (1.0 - noise)).round() as usize
    }
}

fn validate(spec: &SyntheticSpec) -> Result<()> {
    let bad = |m: &str| Err(Error::Config(m.into()));
    if spec.n_sentences == 0 || spec.vocab_size == 0 || spec.n_planted == 0 {
        return bad("sentences, vocabulary and plants must be non-empty");
    }
    if spec.min_phrase_len == 0 || spec.min_phrase_len > spec.max_phrase_len {
        return bad("phrase lengths must satisfy 1 <= min <= max");
    }
    if spec.min_len == 0 || spec.min_len > spec.max_len {
        return bad("sentence lengths must satisfy 1 <= min <= max");
    }
    if !(0.0..=1.0).contains(&spec.positive_rate) || !(0.0..1.0).contains(&spec.noise) {
        return bad("positive_rate must lie in [0, 1] and noise in [0, 1)");
    }
    if !(0.0..=1.0).contains(&spec.overlap) || !(0.0..=1.0).contains(&spec.topic_leak) {
        return bad("overlap and topic_leak must lie in [0, 1]");
    }
    if spec.zipf_exponent <= 0.0 {
        return bad("the Zipf exponent must be positive");
    }
    Ok(())
}

/// A labeled corpus whose positives each carry at least one planted phrase
/// of dedicated tokens, over Zipf-distributed background words.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<(Corpus, PlantManifest)> {
    validate(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let zipf = Zipf::new(spec.vocab_size as f64, spec.zipf_exponent)
        .map_err(|e| Error::Config(e.to_string()))?;
    let phrases: Vec<Vec<String>> = (0..spec.n_planted)
        .map(|i| {
            let len = rng.random_range(spec.min_phrase_len..=spec.max_phrase_len);
            (0..len).map(|j| format!("p{i}x{j}")).collect()
        })
        .collect();
    let topics: Vec<String> = (0..spec.topic_words).map(|i| format!("t{i}")).collect();

    // sentences are built from segments so inserted phrases stay contiguous
    let mut bodies: Vec<Vec<Vec<String>>> = (0..spec.n_sentences)
        .map(|_| {
            let len = rng.random_range(spec.min_len..=spec.max_len);
            (0..len)
                .map(|_| vec![format!("w{}", zipf.sample(&mut rng) as usize - 1)])
                .collect()
        })
        .collect();
    let labels: Vec<bool> = (0..spec.n_sentences)
        .map(|_| rng.random_bool(spec.positive_rate))
        .collect();

    let insert = |body: &mut Vec<Vec<String>>, words: &[String], rng: &mut ChaCha8Rng| {
        let at = rng.random_range(0..=body.len());
        body.insert(at, words.to_vec());
    };
    // earlier plants are more common, so coverage sizes differ
    let weights: Vec<f64> = (0..spec.n_planted).map(|i| 1.0 / (1.0 + i as f64 * 0.25)).collect();
    let total_w: f64 = weights.iter().sum();
    let pick_plant = |rng: &mut ChaCha8Rng| {
        let mut x = rng.random::<f64>() * total_w;
        for (i, w) in weights.iter().enumerate() {
            if x < *w {
                return i;
            }
            x -= w;
        }
        spec.n_planted - 1
    };

    let mut carriers: Vec<Vec<DocId>> = vec![Vec::new(); spec.n_planted];
    for (d, body) in bodies.iter_mut().enumerate() {
        if !labels[d] {
            continue;
        }
        let first = pick_plant(&mut rng);
        let mut chosen = vec![first];
        if spec.n_planted > 1 && rng.random_bool(spec.overlap) {
            let second = loop {
                let p = pick_plant(&mut rng);
                if p != first {
                    break p;
                }
            };
            chosen.push(second);
        }
        for &p in &chosen {
            insert(body, &phrases[p], &mut rng);
            carriers[p].push(d as DocId);
        }
        if !topics.is_empty() {
            for _ in 0..rng.random_range(2..=4) {
                let t = topics.choose(&mut rng).expect("topics non-empty").clone();
                insert(body, &[t], &mut rng);
            }
        }
    }
    let negatives: Vec<usize> = (0..spec.n_sentences).filter(|&d| !labels[d]).collect();
    let mut plants = Vec::with_capacity(spec.n_planted);
    for (p, phrase) in phrases.iter().enumerate() {
        let want = noise_count(carriers[p].len(), spec.noise).min(negatives.len());
        let hosts = rand::seq::index::sample(&mut rng, negatives.len(), want);
        for h in hosts {
            insert(&mut bodies[negatives[h]], phrase, &mut rng);
        }
        plants.push(Plant {
            phrase: phrase.join(" "),
            positives: carriers[p].len(),
            negatives: want,
        });
    }
    // topic words leak into a few negatives
    if !topics.is_empty() {
        for &d in &negatives {
            if rng.random_bool(spec.topic_leak) {
                let t = topics.choose(&mut rng).expect("topics non-empty").clone();
                insert(&mut bodies[d], &[t], &mut rng);
            }
        }
    }
    let sentences = bodies
        .into_iter()
        .enumerate()
        .map(|(d, body)| Sentence::new(d as u64, body.concat().join(" ")).with_label(labels[d]))
        .collect();
    let corpus = Corpus::new(sentences)?;
    let positives = labels.iter().filter(|&&l| l).count();
    Ok((
        corpus,
        PlantManifest {
            spec: spec.clone(),
            plants,
            positives,
        },
    ))
}

/// Outcome of one run: its progressive curve and final quality.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub method: String,
    pub seed: u64,
    pub queries: usize,
    pub positives: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: Option<f64>,
    pub curve: Vec<CurvePoint>,
}

/// Flat CSV row of a progressive curve.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub method: String,
    pub seed: u64,
    pub queries: usize,
    pub positives: usize,
    pub recall: f64,
}

/// Flat CSV row of final results.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FinalRow {
    pub method: String,
    pub param: String,
    pub value: String,
    pub seed: u64,
    pub queries: usize,
    pub positives: usize,
    pub recall: f64,
    pub precision: f64,
    pub f1: String,
}

impl RunSummary {
    pub fn curve_rows(&self) -> Vec<CurveRow> {
        self.curve
            .iter()
            .map(|p| CurveRow {
                method: self.method.clone(),
                seed: self.seed,
                queries: p.queries,
                positives: p.positives,
                recall: p.recall.unwrap_or(0.0),
            })
            .collect()
    }

    pub fn final_row(&self, param: &str, value: &str) -> FinalRow {
        FinalRow {
            method: self.method.clone(),
            param: param.into(),
            value: value.into(),
            seed: self.seed,
            queries: self.queries,
            positives: self.positives,
            recall: self.recall,
            precision: self.precision,
            f1: self.f1.map(|f| format!("{f:.6}")).unwrap_or_default(),
        }
    }

    /// Recall after `q` queries (the last point for longer prefixes).
    pub fn recall_at(&self, q: usize) -> f64 {
        self.curve
            .iter()
            .take_while(|p| p.queries <= q)
            .last()
            .and_then(|p| p.recall)
            .unwrap_or(0.0)
    }
}

/// Writes serializable rows as CSV with a header row.
pub fn write_csv<T: Serialize>(writer: impl std::io::Write, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("csv output", e))?;
    Ok(())
}

/// One simulated-oracle session.
pub fn run_strategy(
    corpus: &Arc<Corpus>,
    index: &Arc<SketchIndex>,
    config: &SessionConfig,
    seed: &Seed,
) -> Result<RunSummary> {
    let mut session = Session::new(Arc::clone(corpus), Arc::clone(index), config.clone(), seed.clone())?;
    engine::run_session(&mut session, &mut SimulatedOracle::default())?;
    let m = session.evaluate()?;
    Ok(RunSummary {
        method: config.strategy.to_string(),
        seed: config.seed,
        queries: m.queries_used,
        positives: m.positives,
        recall: m.recall.unwrap_or(0.0),
        precision: m.precision.unwrap_or(0.0),
        f1: m.classifier.map(|c| c.f1),
        curve: m.curve,
    })
}

/// Every strategy under every seed, seeds run in parallel.
pub fn run_comparison(
    corpus: &Arc<Corpus>,
    index: &Arc<SketchIndex>,
    strategies: &[Strategy],
    base: &SessionConfig,
    seeds: &[u64],
    seed: &Seed,
) -> Result<Vec<RunSummary>> {
    let jobs: Vec<SessionConfig> = strategies
        .iter()
        .flat_map(|&s| {
            seeds.iter().map(move |&r| SessionConfig {
                strategy: s,
                seed: r,
                ..base.clone()
            })
        })
        .collect();
    parallel_map(&jobs, |cfg| run_strategy(corpus, index, cfg, seed))
}

fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut out: Vec<(usize, Result<R>)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..threads)
            .map(|_| {
                scope.spawn(|| {
                    let mut mine = Vec::new();
                    loop {
                        let i = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                        if i >= items.len() {
                            break mine;
                        }
                        mine.push((i, f(&items[i])));
                    }
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("worker panicked"))
            .collect()
    });
    out.sort_by_key(|(i, _)| *i);
    out.into_iter().map(|(_, r)| r).collect()
}

fn gold_summary(corpus: &Corpus, positives: &DocSet) -> Result<(f64, f64)> {
    let gold = corpus.gold_positives()?;
    let g = gold.count_ones(..);
    let hit = gold.intersection(positives).count();
    let size = positives.count_ones(..);
    Ok((
        if g == 0 { 0.0 } else { hit as f64 / g as f64 },
        if size == 0 { 0.0 } else { hit as f64 / size as f64 },
    ))
}

fn instance_run(
    method: &str,
    corpus: &Corpus,
    initial: &DocSet,
    seed: u64,
    scorer: &ScorerConfig,
    budget: usize,
    mut pick: impl FnMut(&DocSet, &[bool], usize) -> Result<Option<DocId>>,
) -> Result<RunSummary> {
    let gold = corpus.gold_positives()?;
    let mut positives = initial.clone();
    let mut asked = vec![false; corpus.len()];
    let point = |q: usize, p: &DocSet| -> Result<CurvePoint> {
        Ok(CurvePoint {
            queries: q,
            positives: p.count_ones(..),
            recall: Some(gold_summary(corpus, p)?.0),
        })
    };
    let mut curve = vec![point(0, &positives)?];
    let mut queries = 0;
    while queries < budget {
        let Some(d) = pick(&positives, &asked, queries)? else {
            break;
        };
        asked[d as usize] = true;
        queries += 1;
        if gold.contains(d as usize) {
            positives.insert(d as usize);
        }
        curve.push(point(queries, &positives)?);
    }
    let (recall, precision) = gold_summary(corpus, &positives)?;
    let f1 = engine::held_out_metrics(corpus, &positives, scorer, None)?.map(|m: ClassifierMetrics| m.f1);
    Ok(RunSummary {
        method: method.into(),
        seed,
        queries,
        positives: positives.count_ones(..),
        recall,
        precision,
        f1,
        curve,
    })
}

/// Active learning: each query labels the sentence whose score is closest
/// to 0.5 (maximum entropy), then retrains.
pub fn baseline_al(
    corpus: &Corpus,
    initial: &DocSet,
    budget: usize,
    seed: u64,
    scorer: &ScorerConfig,
) -> Result<RunSummary> {
    let config = ScorerConfig {
        seed,
        ..scorer.clone()
    };
    instance_run("al", corpus, initial, seed, scorer, budget, |positives, asked, round| {
        let model = classifier::train(corpus, positives, None, &config, round as u64, None)?;
        let mut best: Option<(DocId, f64)> = None;
        for (d, s) in corpus.sentences().iter().enumerate() {
            if asked[d] || positives.contains(d) {
                continue;
            }
            let p = model.score(s);
            let distance = (p - 0.5).abs();
            if best.is_none_or(|(_, b)| distance < b) {
                best = Some((d as DocId, distance));
            }
        }
        Ok(best.map(|(d, _)| d))
    })
}

/// Keyword sampling: labels sentences drawn uniformly from those containing
/// any of `keywords`.
pub fn baseline_ks(
    corpus: &Corpus,
    initial: &DocSet,
    keywords: &[String],
    budget: usize,
    seed: u64,
    scorer: &ScorerConfig,
) -> Result<RunSummary> {
    let keys: Vec<String> = keywords.iter().map(|k| k.to_lowercase()).collect();
    let filtered: Vec<DocId> = corpus
        .sentences()
        .iter()
        .enumerate()
        .filter(|(d, s)| !initial.contains(*d) && s.tokens.iter().any(|t| keys.contains(t)))
        .map(|(d, _)| d as DocId)
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<DocId> = rand::seq::index::sample(&mut rng, filtered.len(), budget.min(filtered.len()))
        .into_iter()
        .map(|i| filtered[i])
        .collect();
    let mut it = order.into_iter();
    instance_run("ks", corpus, initial, seed, scorer, budget, |_, _, _| Ok(it.next()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Tau,
    SeedRule,
    KCandidates,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tau" => Ok(SweepParam::Tau),
            "seed_rule" => Ok(SweepParam::SeedRule),
            "k_candidates" => Ok(SweepParam::KCandidates),
            other => Err(Error::Config(format!("unknown sweep parameter {other:?}"))),
        }
    }
}

/// Runs `base` once per value and seed, varying one parameter.
pub fn sweep(
    corpus: &Arc<Corpus>,
    index: &Arc<SketchIndex>,
    param: SweepParam,
    values: &[String],
    base: &SessionConfig,
    seed: &Seed,
    seeds: &[u64],
) -> Result<Vec<FinalRow>> {
    let mut jobs = Vec::new();
    for v in values {
        let mut cfg = base.clone();
        let mut s = seed.clone();
        match param {
            SweepParam::Tau => {
                cfg.tau = v.parse().map_err(|_| Error::Config(format!("bad tau {v:?}")))?;
            }
            SweepParam::KCandidates => {
                cfg.candidates = v.parse().map_err(|_| Error::Config(format!("bad k {v:?}")))?;
            }
            SweepParam::SeedRule => s = Seed::Rule(v.clone()),
        }
        for &r in seeds {
            jobs.push((v.clone(), SessionConfig { seed: r, ..cfg.clone() }, s.clone()));
        }
    }
    let name = match param {
        SweepParam::Tau => "tau",
        SweepParam::SeedRule => "seed_rule",
        SweepParam::KCandidates => "k_candidates",
    };
    let runs = parallel_map(&jobs, |(_, cfg, s)| run_strategy(corpus, index, cfg, s))?;
    Ok(jobs
        .iter()
        .zip(runs)
        .map(|((v, _, _), r)| r.final_row(name, v))
        .collect())
}

/// Mean final recall per method.
pub fn mean_recall(runs: &[RunSummary]) -> BTreeMap<String, f64> {
    let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    for r in runs {
        let e = acc.entry(r.method.clone()).or_default();
        e.0 += r.recall;
        e.1 += 1;
    }
    acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}
