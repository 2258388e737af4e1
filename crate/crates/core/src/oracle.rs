//! YES/NO verification of candidate heuristics, simulated from gold labels
//! or answered by a person through the service.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocId};
use crate::error::{Error, Result};
use crate::grammar::Heuristic;

pub const DEFAULT_THRESHOLD: f64 = 0.8;
pub const DEFAULT_SAMPLES: usize = 5;
const QUERY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: u64,
    pub text: String,
    pub tokens: Vec<String>,
    /// Matched token ranges `[start, end)`.
    pub spans: Vec<(usize, usize)>,
}

/// What an annotator sees for one candidate heuristic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleQuery {
    pub v: u32,
    pub query_id: u64,
    pub heuristic: Heuristic,
    pub coverage_size: usize,
    pub samples: Vec<Sample>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSource {
    Simulated,
    Human,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleAnswer {
    pub query_id: u64,
    pub answer: bool,
    pub source: AnswerSource,
    pub latency_ms: u64,
}

/// Fraction of `coverage` that is gold-positive.
pub fn gold_precision(coverage: &[DocId], corpus: &Corpus) -> Result<f64> {
    if coverage.is_empty() {
        return Err(Error::Precondition("heuristic covers no sentence".into()));
    }
    let mut pos = 0usize;
    for &d in coverage {
        match corpus.get(d).gold_label {
            Some(true) => pos += 1,
            Some(false) => {}
            None => return Err(Error::MissingGold),
        }
    }
    Ok(pos as f64 / coverage.len() as f64)
}

/// YES iff at least `threshold` of the coverage is gold-positive.
pub fn simulate_answer(coverage: &[DocId], corpus: &Corpus, threshold: f64) -> Result<bool> {
    Ok(gold_precision(coverage, corpus)? >= threshold)
}

/// Up to `n` sentences of `coverage`, uniformly without replacement.
pub fn draw_samples(coverage: &[DocId], n: usize, seed: u64) -> Vec<DocId> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = n.min(coverage.len());
    rand::seq::index::sample(&mut rng, coverage.len(), n)
        .into_iter()
        .map(|i| coverage[i])
        .collect()
}

pub fn build_query(
    query_id: u64,
    heuristic: &Heuristic,
    coverage: &[DocId],
    corpus: &Corpus,
    n_samples: usize,
    seed: u64,
) -> Result<OracleQuery> {
    if coverage.is_empty() {
        return Err(Error::Precondition("heuristic covers no sentence".into()));
    }
    let samples = draw_samples(coverage, n_samples.max(1), seed)
        .into_iter()
        .map(|d| {
            let s = corpus.get(d);
            Ok(Sample {
                id: s.id,
                text: s.raw_text.clone(),
                tokens: s.tokens.clone(),
                spans: heuristic.match_spans(s)?.unwrap_or_default(),
            })
        })
        .collect::<Result<_>>()?;
    Ok(OracleQuery {
        v: QUERY_VERSION,
        query_id,
        heuristic: heuristic.clone(),
        coverage_size: coverage.len(),
        samples,
    })
}

pub trait Oracle {
    fn answer(&mut self, query: &OracleQuery, coverage: &[DocId], corpus: &Corpus) -> Result<bool>;
}

/// Judges the full coverage against gold labels.
#[derive(Clone, Copy, Debug)]
pub struct SimulatedOracle {
    pub threshold: f64,
}

impl Default for SimulatedOracle {
    fn default() -> Self {
        SimulatedOracle {
            threshold: DEFAULT_THRESHOLD,
        }
    }
}

impl Oracle for SimulatedOracle {
    fn answer(&mut self, _: &OracleQuery, coverage: &[DocId], corpus: &Corpus) -> Result<bool> {
        simulate_answer(coverage, corpus, self.threshold)
    }
}

/// Judges only the samples shown, as an annotator would.
#[derive(Clone, Copy, Debug)]
pub struct SampleOracle {
    pub threshold: f64,
}

impl Oracle for SampleOracle {
    fn answer(&mut self, query: &OracleQuery, _: &[DocId], corpus: &Corpus) -> Result<bool> {
        let docs: Vec<DocId> = query
            .samples
            .iter()
            .map(|s| corpus.doc_of(s.id).ok_or(Error::Precondition(format!("unknown sentence {}", s.id))))
            .collect::<Result<_>>()?;
        simulate_answer(&docs, corpus, self.threshold)
    }
}

/// Flips the wrapped oracle's answer with probability `flip`.
pub struct NoisyOracle<O> {
    inner: O,
    flip: f64,
    rng: ChaCha8Rng,
}

impl<O: Oracle> NoisyOracle<O> {
    pub fn new(inner: O, flip: f64, seed: u64) -> Result<Self> {
        if !(0.0..=1.0).contains(&flip) {
            return Err(Error::Config(format!("flip probability {flip} outside [0, 1]")));
        }
        Ok(NoisyOracle {
            inner,
            flip,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl<O: Oracle> Oracle for NoisyOracle<O> {
    fn answer(&mut self, query: &OracleQuery, coverage: &[DocId], corpus: &Corpus) -> Result<bool> {
        let truth = self.inner.answer(query, coverage, corpus)?;
        let flip = self.flip > 0.0 && self.rng.random_bool(self.flip);
        Ok(truth ^ flip)
    }
}

/// Replays a fixed answer sequence, e.g. recorded human feedback.
pub struct ScriptedOracle {
    answers: std::vec::IntoIter<bool>,
}

impl ScriptedOracle {
    pub fn new(answers: Vec<bool>) -> Self {
        ScriptedOracle {
            answers: answers.into_iter(),
        }
    }
}

impl Oracle for ScriptedOracle {
    fn answer(&mut self, query: &OracleQuery, _: &[DocId], _: &Corpus) -> Result<bool> {
        self.answers
            .next()
            .ok_or_else(|| Error::Precondition(format!("no scripted answer for query {}", query.query_id)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn labeled(labels: &[bool]) -> Corpus {
        Corpus::new(
            labels
                .iter()
                .enumerate()
                .map(|(i, &l)| Sentence::new(i as u64, format!("x{i}")).with_label(l))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn threshold_arithmetic() {
        let nine = labeled(&[true, true, true, true, true, true, true, true, true, false]);
        let all: Vec<DocId> = (0..10).collect();
        assert!(simulate_answer(&all, &nine, 0.8).unwrap());
        let seven = labeled(&[true, true, true, true, true, true, true, false, false, false]);
        assert!(!simulate_answer(&all, &seven, 0.8).unwrap());
    }

    #[test]
    fn unlabeled_corpus_is_rejected() {
        let c = Corpus::new(vec![Sentence::new(1, "a b")]).unwrap();
        assert!(matches!(simulate_answer(&[0], &c, 0.8), Err(Error::MissingGold)));
    }

    #[test]
    fn samples_are_capped_and_seeded() {
        assert_eq!(draw_samples(&[4, 5, 6], 5, 1).len(), 3);
        let cov: Vec<DocId> = (0..50).collect();
        assert_eq!(draw_samples(&cov, 5, 9), draw_samples(&cov, 5, 9));
        let mut s = draw_samples(&cov, 5, 9);
        s.sort_unstable();
        s.dedup();
        assert_eq!(s.len(), 5);
    }

    #[test]
    fn zero_noise_equals_truth() {
        let c = labeled(&[true, false, true]);
        let h = Heuristic::parse("x0", crate::grammar::GrammarId::TokensRegex).unwrap();
        let q = build_query(0, &h, &[0], &c, 5, 0).unwrap();
        let mut noisy = NoisyOracle::new(SimulatedOracle::default(), 0.0, 3).unwrap();
        for cov in [[0u32, 2], [0, 1]] {
            assert_eq!(
                noisy.answer(&q, &cov, &c).unwrap(),
                SimulatedOracle::default().answer(&q, &cov, &c).unwrap()
            );
        }
    }
}
