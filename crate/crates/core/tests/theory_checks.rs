use rulemine::theory::{
    approximation_trial, check_lower_bound, check_preference, check_upper_bound, sample_scores, ScoreModel, SetSystem,
};
use rulemine::Error;

/// Two-sample Kolmogorov–Smirnov statistic.
fn ks_statistic(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < a.len() && j < b.len() {
        let x = a[i].min(b[j]);
        while i < a.len() && a[i] <= x {
            i += 1;
        }
        while j < b.len() && b[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / a.len() as f64 - j as f64 / b.len() as f64).abs());
    }
    d
}

#[test]
fn equal_betas_give_identical_distributions() {
    let m = ScoreModel::new(0.7, 0.4, 0.4, 0.2).unwrap();
    let n = 100_000;
    let pos = sample_scores(&m, n, 1.0, 1).unwrap();
    let neg = sample_scores(&m, n, 0.0, 2).unwrap();
    // rejection at the 1% level: D > c(0.01)·sqrt(2/n), c(0.01) = 1.628
    let critical = 1.628 * (2.0 / n as f64).sqrt();
    let d = ks_statistic(pos, neg);
    assert!(d < critical, "D = {d} >= {critical}");
}

#[test]
fn scores_lie_in_the_model_bands() {
    let m = ScoreModel::new(0.8, 0.9, 0.2, 0.1).unwrap();
    for s in sample_scores(&m, 20_000, 0.5, 4).unwrap() {
        assert!((0.8..=1.0).contains(&s) || (0.0..=0.2).contains(&s), "{s}");
    }
    let pos = sample_scores(&m, 50_000, 1.0, 5).unwrap();
    let high = pos.iter().filter(|&&s| s >= 0.8).count() as f64 / 50_000.0;
    assert!((high - 0.9).abs() < 0.01, "{high}");
}

#[test]
fn monte_carlo_mean_matches_the_expectation() {
    let (theta, beta, beta_prime, p) = (0.7, 0.8, 0.4, 0.9);
    let m = ScoreModel::new(theta, beta, beta_prime, 0.2).unwrap();
    let size = 200;
    // expectation: a high score averages (1+θ)/2, a low one (1−θ)/2
    let mean_of = |b: f64| b * (1.0 + theta) / 2.0 + (1.0 - b) * (1.0 - theta) / 2.0;
    let pos = (p * size as f64).ceil();
    let expected = pos * mean_of(beta) + (size as f64 - pos) * mean_of(beta_prime);
    let trials = 100_000;
    let total: f64 = (0..trials)
        .map(|t| sample_scores(&m, size, p, t).unwrap().iter().sum::<f64>())
        .sum();
    let mean = total / trials as f64;
    assert!((mean - expected).abs() / expected < 0.01, "{mean} vs {expected}");
    // the lower bound's mean term θβ′|C| sits well below
    assert!(mean > theta * beta_prime * size as f64);
}

#[test]
fn lower_bound_violations_are_rare() {
    let m = ScoreModel::new(0.7, 0.8, 0.4, 0.5).unwrap();
    let n = 1e4f64;
    let size = (m.lower_constant() * n.ln()).ceil() as usize;
    let check = check_lower_bound(&m, size, 0.9, n, 100_000, 3).unwrap();
    assert!(check.rate <= 1e-3, "{check:?}");
    assert!(check.pass);
}

#[test]
fn lower_bound_is_trivial_as_epsilon_nears_one() {
    let m = ScoreModel::new(0.7, 0.8, 0.4, 0.999).unwrap();
    let size = (m.lower_constant() * 1e4f64.ln()).ceil() as usize;
    assert_eq!(check_lower_bound(&m, size, 1.0, 1e4, 2_000, 1).unwrap().violations, 0);
}

#[test]
fn coverage_below_the_floor_is_refused() {
    let m = ScoreModel::new(0.7, 0.8, 0.3, 0.2).unwrap();
    for err in [
        check_lower_bound(&m, 100, 0.9, 1e4, 10, 0).unwrap_err(),
        check_upper_bound(&m, 100, 0.9, 1e4, 10, 0).unwrap_err(),
    ] {
        assert!(matches!(err, Error::Precondition(_)), "{err}");
        assert!(err.to_string().contains("c = "), "{err}");
    }
}

#[test]
fn upper_bound_violations_are_rare() {
    let m = ScoreModel::new(0.7, 0.8, 0.4, 0.5).unwrap();
    let n = 1e4f64;
    let size = (m.upper_constant() * n.ln()).ceil() as usize;
    let check = check_upper_bound(&m, size, 0.9, n, 100_000, 5).unwrap();
    assert!(check.rate <= 1e-3, "{check:?}");
    // at β = 1 every positive is high and the bound holds with room
    let sure = ScoreModel::new(0.7, 1.0, 0.4, 0.5).unwrap();
    let size = (sure.upper_constant() * n.ln()).ceil() as usize;
    assert_eq!(check_upper_bound(&sure, size, 1.0, n, 2_000, 6).unwrap().violations, 0);
}

#[test]
fn alpha_by_two_evaluations() {
    let m = ScoreModel::new(0.7, 0.8, 0.3, 0.1).unwrap();
    // numerator 1.1 · (0.8 + 0.3 · 0.2) = 0.946, denominator 0.9 · 0.7 · 0.3 = 0.189
    assert!((m.alpha() - 0.946 / 0.189).abs() < 1e-12);
    assert!((m.alpha() - 5.005_291_005_291).abs() < 1e-9);
}

#[test]
fn preference_rates() {
    let m = ScoreModel::new(0.7, 0.8, 0.3, 0.2).unwrap();
    let same = check_preference(&m, (500, 0.5), (500, 0.5), 20_000, 1).unwrap();
    assert!((same - 0.5).abs() < 0.02, "{same}");
    let small = 200;
    let large = (2.0 * m.alpha() * small as f64).ceil() as usize;
    // the larger set holds exactly as many positives as the smaller, precise one
    let rate = check_preference(&m, (large, small as f64 / large as f64), (small, 1.0), 20_000, 2).unwrap();
    assert!(rate >= 0.99, "{rate}");
    assert!(check_preference(&m, (10, 0.0), (10, 1.0), 10, 0).is_err());
}

#[test]
fn universal_search_keeps_a_constant_fraction_of_the_optimum() {
    let m = ScoreModel::new(0.7, 0.8, 0.3, 0.2).unwrap();
    let floor = m.gamma() / m.alpha();
    for seed in 0..40 {
        let system = SetSystem::random(20, 300, 900, &[(0.0, 0.3), (0.8, 1.0)], seed);
        let t = approximation_trial(&m, &system, 5, 0.8, seed).unwrap();
        assert!(t.found <= t.optimum, "{t:?}");
        assert!(t.found as f64 >= floor * t.optimum as f64, "seed {seed}: {t:?}");
    }
}
