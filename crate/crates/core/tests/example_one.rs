//! The six-sentence hotel-questions corpus: positives ask for directions.

mod common;

use common::{docs, example_corpus, generated, naive_greedy, tokens};
use rulemine::index::build_index;
use rulemine::oracle::{gold_precision, simulate_answer, DEFAULT_THRESHOLD};
use rulemine::Grammar;

#[test]
fn best_way_to_covers_s1_s3_s6_and_is_accepted() {
    let corpus = example_corpus();
    let index = build_index(&corpus, &Grammar::tokens_regex(), 1).unwrap();
    let h = tokens("best way to");
    let cov = index.as_dyn().coverage(&h).unwrap();
    assert_eq!(corpus.ids(cov.iter().copied()), vec![1, 3, 6]);
    assert_eq!(gold_precision(&cov, &corpus).unwrap(), 1.0);
    assert!(simulate_answer(&cov, &corpus, DEFAULT_THRESHOLD).unwrap());
    // "to" also catches the shuttle question but nothing negative
    let to = index.as_dyn().coverage(&tokens("to")).unwrap();
    assert_eq!(corpus.ids(to.iter().copied()), vec![1, 3, 4, 6]);
    // "the" reaches the gym question: 4/5 is exactly the threshold
    let the = index.as_dyn().coverage(&tokens("the")).unwrap();
    assert_eq!(gold_precision(&the, &corpus).unwrap(), 0.8);
    assert!(simulate_answer(&the, &corpus, DEFAULT_THRESHOLD).unwrap());
    assert!(!simulate_answer(&index.as_dyn().coverage(&tokens("?")).unwrap(), &corpus, DEFAULT_THRESHOLD).unwrap());
}

#[test]
fn greedy_trace_starts_as_computed_by_hand() {
    let corpus = example_corpus();
    let p = docs(&corpus, &[1, 3, 6]);
    let trace = generated(&corpus, &p, 6, &Grammar::tokens_regex());
    // all of "?", "the", "the * ?", "the + ?", "to" reach the three positives;
    // ties fall to wider coverage (6, 5, 5, 5, 4), then `*` before `+`
    let expected: Vec<String> = ["*", "?", "the", "the * ?", "the + ?", "to"]
        .iter()
        .map(|t| tokens(t).display())
        .collect();
    assert_eq!(trace, expected);
}

#[test]
fn greedy_trace_equals_naive_frontier_greedy() {
    let corpus = example_corpus();
    let grammar = Grammar::tokens_regex();
    for ids in [&[1u64, 3, 6][..], &[1, 3, 4, 6], &[2], &[]] {
        let p = docs(&corpus, ids);
        for k in [1, 10, 60, 400] {
            assert_eq!(
                generated(&corpus, &p, k, &grammar),
                naive_greedy(&corpus, &p, k, &grammar),
                "positives {ids:?}, k {k}"
            );
        }
    }
    let no_gaps = Grammar::tokens_regex().with_max_gaps(0).with_max_depth(3);
    let p = docs(&corpus, &[1, 3, 6]);
    assert_eq!(generated(&corpus, &p, 200, &no_gaps), naive_greedy(&corpus, &p, 200, &no_gaps));
}
