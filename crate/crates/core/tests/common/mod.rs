//! Independent oracles shared by the integration tests and the acceptance run.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rulemine::classifier::{benefit, ScoreCache};
use rulemine::grammar::{Gap, TokensPattern};
use rulemine::hierarchy::{build_hierarchy, generate_candidates, Hierarchy, NodeId, Status};
use rulemine::index::{build_index, SketchIndex};
use rulemine::traversal::{next_query_local, next_query_universal, Strategy, TraversalState, MIN_AVERAGE_BENEFIT};
use rulemine::{Corpus, DocId, DocSet, Grammar, GrammarId, Heuristic, Sentence};

pub fn random_corpus(rng: &mut ChaCha8Rng, n: usize) -> Corpus {
    let vocab = rng.random_range(4..=12);
    let sentences = (0..n)
        .map(|i| {
            let len = rng.random_range(2..=7);
            let words: Vec<String> = (0..len).map(|_| format!("w{}", rng.random_range(0..vocab))).collect();
            Sentence::new(i as u64, words.join(" "))
        })
        .collect();
    Corpus::new(sentences).unwrap()
}


pub fn random_token_corpus(rng: &mut ChaCha8Rng) -> Corpus {
    let n = rng.random_range(1..=50);
    let vocab = rng.random_range(2..=20);
    let sentences = (0..n)
        .map(|i| {
            let len = rng.random_range(1..=8);
            let words: Vec<String> = (0..len).map(|_| format!("v{}", rng.random_range(0..vocab))).collect();
            Sentence::new(i as u64, words.join(" "))
        })
        .collect();
    Corpus::new(sentences).unwrap()
}

pub fn scan(corpus: &Corpus, h: &Heuristic) -> Vec<DocId> {
    (0..corpus.len() as DocId)
        .filter(|&d| h.matches(corpus.get(d)).unwrap())
        .collect()
}

/// Every pattern of at most `depth` elements-worth of steps and `gaps` gaps
/// that some sentence satisfies, by extension with pruning on empty coverage.
pub fn enumerate(corpus: &Corpus, depth: usize, gaps: usize) -> BTreeMap<String, Vec<DocId>> {
    let vocab: Vec<String> = corpus.vocab().iter().cloned().collect();
    let mut out = BTreeMap::new();
    let mut stack = vec![TokensPattern::root()];
    while let Some(p) = stack.pop() {
        let h = Heuristic::Tokens(p.clone());
        let cov = scan(corpus, &h);
        if cov.is_empty() {
            continue;
        }
        out.insert(p.canonical(), cov);
        let steps = if p.is_root() { 0 } else { p.elements().len() };
        for w in &vocab {
            for gap in [None, Some(Gap::Star), Some(Gap::Plus)] {
                let (cost, extra_gap) = match (gap, p.is_root()) {
                    (None, _) | (_, true) => (1, 0),
                    (Some(_), false) => (2, 1),
                };
                if gap.is_some() && p.is_root() {
                    continue;
                }
                if steps + cost > depth || p.gap_count() + extra_gap > gaps {
                    continue;
                }
                stack.push(p.extended(gap, w));
            }
        }
    }
    out
}

pub fn example_corpus() -> Corpus {
    let rows = [
        (1, "What is the best way to get to the city?", true),
        (2, "Is there a gym in the hotel?", false),
        (3, "What's the best way to reach the airport from here?", true),
        (4, "Is there a shuttle to the airport?", true),
        (5, "Can I get a late checkout?", false),
        (6, "Best way to get downtown from the hotel?", true),
    ];
    Corpus::new(rows.iter().map(|&(id, t, l)| Sentence::new(id, t).with_label(l)).collect()).unwrap()
}

pub fn tokens(text: &str) -> Heuristic {
    Heuristic::parse(text, GrammarId::TokensRegex).unwrap()
}

pub fn docs(corpus: &Corpus, ids: &[u64]) -> DocSet {
    let mut set = corpus.empty_set();
    set.extend(ids.iter().map(|&id| corpus.doc_of(id).unwrap() as usize));
    set
}

/// Literal and gap extensions of `p` that some sentence satisfies.
pub fn naive_children(corpus: &Corpus, p: &TokensPattern, grammar: &Grammar) -> Vec<TokensPattern> {
    let mut out = Vec::new();
    for w in corpus.vocab() {
        for gap in [None, Some(Gap::Star), Some(Gap::Plus)] {
            if gap.is_some() && (p.is_root() || p.gap_count() >= grammar.max_gaps) {
                continue;
            }
            let c = p.extended(gap, w);
            if c.depth() <= grammar.max_depth && !scan(corpus, &Heuristic::Tokens(c.clone())).is_empty() {
                out.push(c);
            }
        }
    }
    out
}

/// Greedy over the full frontier of satisfied one-step derivations of the
/// picks so far: most positives, then most coverage, then smallest
/// canonical form.
pub fn naive_greedy(corpus: &Corpus, positives: &DocSet, k: usize, grammar: &Grammar) -> Vec<String> {
    let mut picked = vec![TokensPattern::root()];
    let mut seen: BTreeSet<String> = BTreeSet::from([TokensPattern::root().canonical()]);
    let mut frontier: Vec<(usize, usize, TokensPattern)> = Vec::new();
    let mut push = |p: &TokensPattern, frontier: &mut Vec<(usize, usize, TokensPattern)>| {
        for c in naive_children(corpus, p, grammar) {
            if seen.insert(c.canonical()) {
                let cov = scan(corpus, &Heuristic::Tokens(c.clone()));
                let pos = cov.iter().filter(|&&d| positives.contains(d as usize)).count();
                frontier.push((pos, cov.len(), c));
            }
        }
    };
    push(&TokensPattern::root(), &mut frontier);
    while picked.len() < k && !frontier.is_empty() {
        let best = (0..frontier.len())
            .max_by(|&a, &b| {
                let (x, y) = (&frontier[a], &frontier[b]);
                x.0.cmp(&y.0).then(x.1.cmp(&y.1)).then(y.2.canonical().cmp(&x.2.canonical()))
            })
            .unwrap();
        let (_, _, p) = frontier.swap_remove(best);
        push(&p, &mut frontier);
        picked.push(p);
    }
    picked.iter().map(|p| Heuristic::Tokens(p.clone()).display()).collect()
}

pub fn generated(corpus: &Corpus, positives: &DocSet, k: usize, grammar: &Grammar) -> Vec<String> {
    let index = build_index(corpus, grammar, 1).unwrap();
    generate_candidates(index.as_dyn(), positives, k)
        .unwrap()
        .candidates
        .iter()
        .map(|c| c.heuristic.display())
        .collect()
}

/// One randomized session: random per-sentence scores stand in for the
/// classifier, answers are random, and YES grows P by the coverage.
pub struct World {
    pub index: SketchIndex,
    pub cache: ScoreCache,
    pub hierarchy: Hierarchy,
    pub positives: DocSet,
}

impl World {
    pub fn new(seed: u64) -> (Self, Vec<NodeId>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(8..=40);
        let corpus = random_corpus(&mut rng, n);
        let index = build_index(&corpus, &Grammar::tokens_regex().with_max_depth(4), 1).unwrap();
        let mut cache = ScoreCache::new(n);
        for d in 0..n as DocId {
            cache.set(d, rng.random(), 0);
        }
        let mut positives = corpus.empty_set();
        positives.insert(rng.random_range(0..n));
        let k = rng.random_range(2..=40);
        let cands: Vec<_> = generate_candidates(index.as_dyn(), &positives, k)
            .unwrap()
            .candidates
            .into_iter()
            .map(|c| c.heuristic)
            .collect();
        let hierarchy = build_hierarchy(&cands, index.as_dyn()).unwrap();
        let ids = (0..hierarchy.len() as NodeId).collect();
        let mut w = World {
            index,
            cache,
            hierarchy,
            positives,
        };
        w.refresh();
        (w, ids)
    }

    pub fn refresh(&mut self) {
        for id in 0..self.hierarchy.len() as NodeId {
            let b = benefit(&self.hierarchy.node(id).coverage, &self.positives, &self.cache);
            self.hierarchy.set_benefit(id, b);
        }
    }

    pub fn answer(&mut self, state: &mut TraversalState, id: NodeId, yes: bool) {
        if yes {
            self.hierarchy.set_status(id, Status::Accepted);
            for &d in &self.hierarchy.node(id).coverage.clone() {
                self.positives.insert(d as usize);
            }
        } else {
            self.hierarchy.set_status(id, Status::Rejected);
        }
        state
            .apply_feedback(&mut self.hierarchy, id, yes, self.index.as_dyn(), &self.positives)
            .unwrap();
        self.hierarchy.cleanup(&self.positives);
        self.refresh();
    }
}

pub fn answers_for(seed: u64, len: usize) -> Vec<bool> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
    (0..len).map(|_| rng.random_bool(0.4)).collect()
}

/// Runs a session, returning the asked nodes' canonical forms.
pub fn run_traversal(seed: u64, strategy: Strategy, tau: u32, budget: usize, check: bool) -> Vec<String> {
    let (mut w, ids) = World::new(seed);
    let mut state = TraversalState::new(strategy, tau).unwrap();
    state.set_universal(ids);
    let start: Vec<NodeId> = w
        .hierarchy
        .nodes()
        .filter(|(_, n)| !n.heuristic.is_root())
        .map(|(i, _)| i)
        .take(1)
        .collect();
    state
        .start_from(&mut w.hierarchy, &start, false, w.index.as_dyn(), &w.positives)
        .unwrap();
    w.refresh();
    let answers = answers_for(seed, budget);
    let mut asked = Vec::new();
    let mut seen = HashSet::new();
    for &yes in &answers {
        let (mode_before, attempt_before) = (state.universal_mode, state.attempt);
        let Some(id) = state.next_query(&w.hierarchy) else { break };
        let node = w.hierarchy.node(id);
        if check {
            assert!(seen.insert(node.canonical.clone()), "seed {seed}: {} asked twice", node.heuristic);
            assert!(!node.heuristic.is_root());
            assert_eq!(node.status, Status::Unasked);
            let universal_pick = match strategy {
                Strategy::Universal => true,
                Strategy::Hybrid => state.universal_mode,
                _ => false,
            };
            if universal_pick {
                assert!(node.benefit.average > MIN_AVERAGE_BENEFIT, "seed {seed}: average {}", node.benefit.average);
            }
            if strategy == Strategy::Hybrid {
                // toggles happen at attempt == tau, or when a mode runs dry
                let dry = |universal: bool| mode_pick(&state, &w.hierarchy, universal).is_none();
                if state.universal_mode != mode_before {
                    assert!(attempt_before == tau || dry(mode_before), "seed {seed}: toggled at attempt {attempt_before}");
                } else if attempt_before >= tau {
                    assert!(dry(!mode_before), "seed {seed}: no toggle at attempt {attempt_before}");
                }
            }
        }
        asked.push(node.canonical.clone());
        w.answer(&mut state, id, yes);
        if check {
            assert!(state.attempt <= tau);
            if yes {
                assert_eq!(state.attempt, 0);
            }
        }
    }
    asked
}

pub fn mode_pick(state: &TraversalState, h: &Hierarchy, universal: bool) -> Option<NodeId> {
    if universal {
        next_query_universal(state, h)
    } else {
        next_query_local(state, h)
    }
}

/// Random dependency trees: each token's head is an earlier token, so the
/// first token is the root.
pub fn random_tree_corpus(rng: &mut ChaCha8Rng) -> Corpus {
    let n = rng.random_range(1..=30);
    let vocab = rng.random_range(2..=8);
    let tags = ["N", "V", "D"];
    let sentences = (0..n)
        .map(|i| {
            let len = rng.random_range(1..=6);
            let words: Vec<String> = (0..len).map(|_| format!("v{}", rng.random_range(0..vocab))).collect();
            let pos = (0..len).map(|_| tags[rng.random_range(0..tags.len())].to_string()).collect();
            let edges = (1..len).map(|c| (rng.random_range(0..c), c)).collect();
            Sentence::new(i as u64, words.join(" ")).with_parse(pos, edges)
        })
        .collect();
    Corpus::new(sentences).unwrap()
}
