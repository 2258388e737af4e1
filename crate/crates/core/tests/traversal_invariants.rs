mod common;

use std::collections::HashSet;

use common::{run_traversal, World};
use proptest::prelude::*;
use rulemine::classifier::{benefit, ScoreCache};
use rulemine::traversal::{Strategy, TAU_INFINITE};
use rulemine::{DocId, DocSet};

#[test]
fn thousand_randomized_sessions_keep_the_invariants() {
    let mut queries = 0;
    for seed in 0..1000u64 {
        let strategy = Strategy::ALL[seed as usize % Strategy::ALL.len()];
        let tau = 1 + (seed % 4) as u32;
        queries += run_traversal(seed, strategy, tau, 25, true).len();
    }
    eprintln!("{queries} queries");
    // the sessions are not trivially short
    assert!(queries > 5_000, "{queries}");
}

#[test]
fn hybrid_with_infinite_tau_replays_universal() {
    for seed in 0..1000u64 {
        let universal = run_traversal(seed, Strategy::Universal, TAU_INFINITE, 25, false);
        let hybrid = run_traversal(seed, Strategy::Hybrid, TAU_INFINITE, 25, false);
        // once universal search is exhausted, hybrid carries on locally
        assert_eq!(&hybrid[..universal.len()], &universal[..], "seed {seed}");
    }
}

fn naive_benefit(coverage: &[DocId], positives: &DocSet, scores: &[f64]) -> (f64, usize) {
    let fresh: Vec<f64> = coverage
        .iter()
        .filter(|&&d| !positives.contains(d as usize))
        .map(|&d| scores[d as usize])
        .collect();
    (fresh.iter().sum(), fresh.len())
}

proptest! {
    #[test]
    fn benefit_matches_brute_force(
        scores in proptest::collection::vec(0.0f64..1.0, 1..60),
        picks in proptest::collection::vec(any::<bool>(), 60),
        pos in proptest::collection::vec(any::<bool>(), 60),
    ) {
        let n = scores.len();
        let mut cache = ScoreCache::new(n);
        for (d, &s) in scores.iter().enumerate() {
            cache.set(d as DocId, s, 0);
        }
        let coverage: Vec<DocId> = (0..n as DocId).filter(|&d| picks[d as usize]).collect();
        let mut positives = DocSet::with_capacity(n);
        positives.extend((0..n).filter(|&d| pos[d]));
        let b = benefit(&coverage, &positives, &cache);
        let (total, count) = naive_benefit(&coverage, &positives, &scores);
        prop_assert!((b.total - total).abs() < 1e-9);
        prop_assert_eq!(b.new_count, count);
        if count > 0 {
            prop_assert!((b.average - total / count as f64).abs() < 1e-9);
        }
    }

    #[test]
    fn coverage_shrinks_along_every_edge(seed in 0u64..10_000, extra in 0usize..20) {
        let (mut w, ids) = World::new(seed);
        // pull in lazily added nodes too
        for &id in ids.iter().take(extra) {
            w.hierarchy.expand_children(id, w.index.as_dyn()).unwrap();
            w.hierarchy.expand_parents(id, w.index.as_dyn()).unwrap();
        }
        for (id, node) in w.hierarchy.nodes() {
            let parent: HashSet<DocId> = node.coverage.iter().copied().collect();
            for &c in &node.children {
                let child = w.hierarchy.node(c);
                prop_assert!(child.parents.contains(&id));
                prop_assert!(
                    child.coverage.iter().all(|d| parent.contains(d)),
                    "{} is not within {}", child.heuristic, node.heuristic
                );
            }
        }
    }
}
