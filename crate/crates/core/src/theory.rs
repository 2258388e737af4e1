//! Monte-Carlo checks of the score-model guarantees behind universal search.
//!
//! Under the model, a positive scores uniformly in `[θ, 1]` with probability
//! β and uniformly in `[0, 1−θ]` otherwise; a negative does the same with
//! probability β′ < β.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::engine::max_coverage_optimum;
use crate::error::{Error, Result};
use crate::traversal::MIN_AVERAGE_BENEFIT;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub theta: f64,
    pub beta: f64,
    pub beta_prime: f64,
    pub epsilon: f64,
}

impl ScoreModel {
    pub fn new(theta: f64, beta: f64, beta_prime: f64, epsilon: f64) -> Result<Self> {
        let m = ScoreModel {
            theta,
            beta,
            beta_prime,
            epsilon,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.5..=1.0).contains(&self.theta) {
            return Err(Error::Config(format!("theta {} outside [0.5, 1]", self.theta)));
        }
        if !(0.0..=1.0).contains(&self.beta) || !(0.0..=1.0).contains(&self.beta_prime) {
            return Err(Error::Config("beta and beta' must lie in [0, 1]".into()));
        }
        if self.beta < self.beta_prime {
            return Err(Error::Config("beta must exceed beta'".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Config(format!("epsilon {} must be positive", self.epsilon)));
        }
        Ok(())
    }

    /// Per-sentence expected-score ceiling `β + (1−θ)(1−β)`.
    pub fn upper_mean(&self) -> f64 {
        self.beta + (1.0 - self.theta) * (1.0 - self.beta)
    }

    /// Constant `c` with coverage ≥ c·ln n for the lower bound.
    pub fn lower_constant(&self) -> f64 {
        2.0 / (self.epsilon.powi(2) * self.theta.powi(2) * self.beta_prime.powi(2))
    }

    /// Constant `c` with coverage ≥ c·ln n for the upper bound.
    pub fn upper_constant(&self) -> f64 {
        2.0 / (self.epsilon.powi(2) * self.upper_mean().powi(2))
    }

    /// Coverage ratio beyond which the larger set's total score wins:
    /// `(1+ε)(β+(1−θ)(1−β)) / ((1−ε)θβ′)`.
    pub fn alpha(&self) -> f64 {
        (1.0 + self.epsilon) * self.upper_mean() / ((1.0 - self.epsilon) * self.theta * self.beta_prime)
    }

    /// Expected score of a positive / a negative.
    pub fn mean_scores(&self) -> (f64, f64) {
        let mean = |b: f64| b * (1.0 + self.theta) / 2.0 + (1.0 - b) * (1.0 - self.theta) / 2.0;
        (mean(self.beta), mean(self.beta_prime))
    }

    /// Precision above which a set's expected average score passes the
    /// universal-search filter.
    pub fn gamma(&self) -> f64 {
        let (pos, neg) = self.mean_scores();
        ((MIN_AVERAGE_BENEFIT - neg) / (pos - neg)).clamp(0.0, 1.0)
    }

    fn draw(&self, positive: bool, rng: &mut impl Rng) -> f64 {
        let high = if positive { self.beta } else { self.beta_prime };
        let u: f64 = rng.random();
        // one uniform picks the branch and, rescaled, the score within it
        if u < high {
            self.theta + (1.0 - self.theta) * (u / high)
        } else {
            (1.0 - self.theta) * ((u - high) / (1.0 - high))
        }
    }
}

fn positives_in(size: usize, precision: f64) -> usize {
    ((precision * size as f64).ceil() as usize).min(size)
}

/// Scores for a set of `size` sentences, the first `⌈precision·size⌉`
/// positive.
pub fn sample_scores(model: &ScoreModel, size: usize, precision: f64, seed: u64) -> Result<Vec<f64>> {
    check_set(size, precision)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = positives_in(size, precision);
    Ok((0..size).map(|i| model.draw(i < pos, &mut rng)).collect())
}

fn check_set(size: usize, precision: f64) -> Result<()> {
    if size == 0 {
        return Err(Error::Precondition("coverage size must be at least 1".into()));
    }
    if !(0.0..=1.0).contains(&precision) {
        return Err(Error::Precondition(format!("precision {precision} outside [0, 1]")));
    }
    Ok(())
}

fn total_score(model: &ScoreModel, size: usize, pos: usize, rng: &mut impl Rng) -> f64 {
    (0..size).map(|i| model.draw(i < pos, rng)).sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundCheck {
    pub name: String,
    pub trials: usize,
    pub violations: usize,
    pub rate: f64,
    /// Failure probability the bound allows.
    pub allowed: f64,
    /// Three binomial standard deviations at the allowed rate.
    pub slack: f64,
    pub pass: bool,
}

impl BoundCheck {
    fn new(name: &str, trials: usize, violations: usize, allowed: f64) -> Self {
        let rate = violations as f64 / trials as f64;
        let slack = 3.0 * (allowed * (1.0 - allowed) / trials as f64).sqrt();
        BoundCheck {
            name: name.into(),
            trials,
            violations,
            rate,
            allowed,
            slack,
            pass: rate <= allowed + slack,
        }
    }
}

fn require_floor(size: usize, c: f64, n: f64, which: &str) -> Result<()> {
    let floor = c * n.ln();
    if (size as f64) < floor {
        return Err(Error::Precondition(format!(
            "{which} bound needs coverage >= c*ln(n) with c = {c:.3}: {size} < {floor:.1}"
        )));
    }
    Ok(())
}

/// Rate at which the total score falls below `(1−ε)θβ′|C|`; allowed `2/n⁴`.
pub fn check_lower_bound(
    model: &ScoreModel,
    size: usize,
    precision: f64,
    n: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundCheck> {
    model.validate()?;
    check_set(size, precision)?;
    require_floor(size, model.lower_constant(), n, "lower")?;
    let bound = (1.0 - model.epsilon) * model.theta * model.beta_prime * size as f64;
    let pos = positives_in(size, precision);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let violations = (0..trials)
        .filter(|_| total_score(model, size, pos, &mut rng) < bound)
        .count();
    Ok(BoundCheck::new("lower", trials, violations, 2.0 / n.powi(4)))
}

/// Rate at which the total score exceeds `(1+ε)(β+(1−θ)(1−β))|C|`; allowed `2/n⁴`.
pub fn check_upper_bound(
    model: &ScoreModel,
    size: usize,
    precision: f64,
    n: f64,
    trials: usize,
    seed: u64,
) -> Result<BoundCheck> {
    model.validate()?;
    check_set(size, precision)?;
    require_floor(size, model.upper_constant(), n, "upper")?;
    let bound = (1.0 + model.epsilon) * model.upper_mean() * size as f64;
    let pos = positives_in(size, precision);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let violations = (0..trials)
        .filter(|_| total_score(model, size, pos, &mut rng) > bound)
        .count();
    Ok(BoundCheck::new("upper", trials, violations, 2.0 / n.powi(4)))
}

/// Fraction of trials where the first set's total score beats the second's.
pub fn check_preference(
    model: &ScoreModel,
    (size1, precision1): (usize, f64),
    (size2, precision2): (usize, f64),
    trials: usize,
    seed: u64,
) -> Result<f64> {
    model.validate()?;
    check_set(size1, precision1)?;
    check_set(size2, precision2)?;
    let (pos1, pos2) = (positives_in(size1, precision1), positives_in(size2, precision2));
    if pos1 < pos2 {
        return Err(Error::Precondition("the first set must hold at least as many positives".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let wins = (0..trials)
        .filter(|_| total_score(model, size1, pos1, &mut rng) > total_score(model, size2, pos2, &mut rng))
        .count();
    Ok(wins as f64 / trials as f64)
}

/// Sets over a shared universe with per-element gold labels.
#[derive(Clone, Debug, PartialEq)]
pub struct SetSystem {
    pub sets: Vec<Vec<u32>>,
    pub labels: Vec<bool>,
}

impl SetSystem {
    /// `n_sets` sets of `min_size..=max_size` fresh elements each, with
    /// precision uniform within a uniformly chosen band of `bands`; about a
    /// third also borrow a slice of an earlier set so coverages overlap.
    pub fn random(n_sets: usize, min_size: usize, max_size: usize, bands: &[(f64, f64)], seed: u64) -> Self {
        assert!(!bands.is_empty(), "at least one precision band");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut sets: Vec<Vec<u32>> = Vec::with_capacity(n_sets);
        let mut labels = Vec::new();
        for i in 0..n_sets {
            let size = rng.random_range(min_size..=max_size.max(min_size));
            let (lo, hi) = bands[rng.random_range(0..bands.len())];
            let precision = lo + (hi - lo) * rng.random::<f64>();
            let start = labels.len() as u32;
            let pos = positives_in(size, precision);
            labels.extend((0..size).map(|j| j < pos));
            let mut set: Vec<u32> = (start..start + size as u32).collect();
            if i > 0 && rng.random_bool(1.0 / 3.0) {
                let donor = &sets[rng.random_range(0..i)];
                let take = donor.len() / 4;
                let from = rng.random_range(0..=donor.len() - take);
                set.extend_from_slice(&donor[from..from + take]);
                set.sort_unstable();
            }
            sets.push(set);
        }
        SetSystem { sets, labels }
    }

    pub fn precision(&self, i: usize) -> f64 {
        let s = &self.sets[i];
        s.iter().filter(|&&e| self.labels[e as usize]).count() as f64 / s.len().max(1) as f64
    }

    fn positive_sets(&self, among: impl Iterator<Item = usize>) -> Vec<Vec<u32>> {
        among
            .map(|i| {
                self.sets[i]
                    .iter()
                    .copied()
                    .filter(|&e| self.labels[e as usize])
                    .collect()
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApproximationTrial {
    /// Positives covered by the accepted sets.
    pub found: usize,
    /// Best positive coverage of `b` sets the oracle would accept.
    pub optimum: usize,
}

/// Universal search on a set system under the score model: scores drawn
/// once, sets taken by largest total score over uncovered elements among
/// those whose average passes the filter, oracle YES at `threshold`
/// precision, `b` queries.
pub fn approximation_trial(
    model: &ScoreModel,
    system: &SetSystem,
    b: usize,
    threshold: f64,
    seed: u64,
) -> Result<ApproximationTrial> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scores: Vec<f64> = system.labels.iter().map(|&l| model.draw(l, &mut rng)).collect();
    let mut covered = vec![false; system.labels.len()];
    let mut asked = vec![false; system.sets.len()];
    let mut accepted = Vec::new();
    for _ in 0..b {
        let mut best: Option<(usize, f64)> = None;
        for (i, set) in system.sets.iter().enumerate() {
            if asked[i] {
                continue;
            }
            let fresh: Vec<u32> = set.iter().copied().filter(|&e| !covered[e as usize]).collect();
            if fresh.is_empty() {
                continue;
            }
            let total: f64 = fresh.iter().map(|&e| scores[e as usize]).sum();
            if total / fresh.len() as f64 <= MIN_AVERAGE_BENEFIT {
                continue;
            }
            if best.is_none_or(|(_, t)| total > t) {
                best = Some((i, total));
            }
        }
        let Some((i, _)) = best else { break };
        asked[i] = true;
        if system.precision(i) >= threshold {
            accepted.push(i);
            for &e in &system.sets[i] {
                covered[e as usize] = true;
            }
        }
    }
    let found = covered
        .iter()
        .zip(&system.labels)
        .filter(|(c, l)| **c && **l)
        .count();
    let precise = (0..system.sets.len()).filter(|&i| system.precision(i) >= threshold);
    let optimum = max_coverage_optimum(&system.positive_sets(precise), b)?;
    Ok(ApproximationTrial { found, optimum })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_model_scores_one() {
        let m = ScoreModel::new(1.0, 1.0, 0.0, 0.5).unwrap();
        let s = sample_scores(&m, 10, 1.0, 3).unwrap();
        assert!(s.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn gamma_from_the_filter() {
        let m = ScoreModel::new(0.7, 0.8, 0.3, 0.2).unwrap();
        let (pos, neg) = m.mean_scores();
        assert!((pos - 0.71).abs() < 1e-12 && (neg - 0.36).abs() < 1e-12);
        assert!((m.gamma() - 0.4).abs() < 1e-12);
    }

    #[test]
    fn precondition_names_the_constant() {
        let m = ScoreModel::new(0.7, 0.8, 0.3, 0.2).unwrap();
        let err = check_lower_bound(&m, 100, 0.9, 1e4, 10, 0).unwrap_err().to_string();
        assert!(err.contains("c = 1133.787"), "{err}");
    }

    #[test]
    fn invalid_models() {
        assert!(ScoreModel::new(0.4, 0.8, 0.3, 0.2).is_err());
        assert!(ScoreModel::new(0.7, 0.2, 0.3, 0.2).is_err());
        assert!(ScoreModel::new(0.7, 0.8, 0.3, 0.0).is_err());
    }
}
