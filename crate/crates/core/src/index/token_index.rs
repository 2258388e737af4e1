//! Trie over token-pattern derivations.
//!
//! Each trie edge is one derivation step: a literal, or a gap followed by a
//! literal. Step labels are `kind * |V| + token`, with kinds ordered
//! star < plus < literal and token ids in string order, so comparing label
//! paths compares canonical forms.
//!
//! A node is materialized only when at least two sentences reach it; a path
//! reached by a single sentence ends in a `Single` reference and everything
//! below it is recomputed from that sentence's tokens on demand. The root is
//! always materialized.

use std::ops::Range;
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use super::{CandInfo, CanonKey, DerivationIndex, Expander, SketchNode, Step};
use crate::corpus::{Corpus, DocId, DocSet};
use crate::error::{Error, Result};
use crate::grammar::{Element, Gap, Grammar, Heuristic, TokensPattern};

const STAR: u32 = 0;
const PLUS: u32 = 1;
const LIT: u32 = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
enum Child {
    Node(u32),
    Single(DocId),
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
struct TrieNode {
    /// Sorted; its length is the node's count.
    postings: Vec<DocId>,
    /// Sorted by label.
    children: Vec<(u32, Child)>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Loc {
    Node(u32),
    Single(DocId),
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TokenIndex {
    grammar: Grammar,
    vocab: Arc<Vec<String>>,
    docs: Arc<Vec<Box<[u32]>>>,
    indexed: FixedBitSet,
    nodes: Vec<TrieNode>,
}

fn step_cost(kind: u32) -> (usize, usize) {
    if kind == LIT {
        (1, 0)
    } else {
        (2, 1)
    }
}

/// Appends `(label, end)` for every one-step extension of a pattern whose
/// matches in `tokens` end at `ends` (sorted).
fn extend_into(
    tokens: &[u32],
    ends: &[u32],
    depth: usize,
    gaps: usize,
    grammar: &Grammar,
    v: u32,
    out: &mut Vec<(u32, u32)>,
) {
    let n = tokens.len() as u32;
    if depth < grammar.max_depth {
        for &e in ends {
            if e < n {
                out.push((LIT * v + tokens[e as usize], e + 1));
            }
        }
    }
    // gaps sit between literals, never at the start
    if depth >= 1 && gaps < grammar.max_gaps && depth + 2 <= grammar.max_depth {
        if let Some(&m) = ends.first() {
            for k in m..n {
                out.push((STAR * v + tokens[k as usize], k + 1));
            }
            for k in m + 1..n {
                out.push((PLUS * v + tokens[k as usize], k + 1));
            }
        }
    }
}

/// Extensions grouped by label: `(label, sorted ends)`.
fn grouped_extensions(
    tokens: &[u32],
    ends: &[u32],
    depth: usize,
    gaps: usize,
    grammar: &Grammar,
    v: u32,
) -> Vec<(u32, Vec<u32>)> {
    let mut pairs = Vec::new();
    extend_into(tokens, ends, depth, gaps, grammar, v, &mut pairs);
    pairs.sort_unstable();
    pairs.dedup();
    let mut out: Vec<(u32, Vec<u32>)> = Vec::new();
    for (label, end) in pairs {
        match out.last_mut() {
            Some((l, list)) if *l == label => list.push(end),
            _ => out.push((label, vec![end])),
        }
    }
    out
}

fn apply_step(tokens: &[u32], ends: &[u32], label: u32, v: u32) -> Vec<u32> {
    let (kind, tok) = (label / v, label % v);
    let n = tokens.len() as u32;
    if kind == LIT {
        ends.iter()
            .filter(|&&e| e < n && tokens[e as usize] == tok)
            .map(|&e| e + 1)
            .collect()
    } else {
        let Some(&m) = ends.first() else {
            return Vec::new();
        };
        let from = if kind == PLUS { m + 1 } else { m };
        (from..n)
            .filter(|&k| tokens[k as usize] == tok)
            .map(|k| k + 1)
            .collect()
    }
}

/// End positions of the pattern spelled by `labels` in `tokens`.
fn replay(tokens: &[u32], labels: &[u32], v: u32) -> Vec<u32> {
    let mut ends: Vec<u32> = (0..tokens.len() as u32).collect();
    for &l in labels {
        if ends.is_empty() {
            break;
        }
        ends = apply_step(tokens, &ends, l, v);
    }
    ends
}

fn path_cost(labels: &[u32], v: u32) -> (usize, usize) {
    labels.iter().fold((0, 0), |(d, g), &l| {
        let (dd, dg) = step_cost(l / v);
        (d + dd, g + dg)
    })
}

pub(super) fn insert_sorted(list: &mut Vec<DocId>, d: DocId) {
    if let Err(pos) = list.binary_search(&d) {
        list.insert(pos, d);
    }
}

pub(super) fn sorted_union(a: &[DocId], b: &[DocId]) -> Vec<DocId> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() && j < b.len() {
        match a[i].cmp(&b[j]) {
            std::cmp::Ordering::Less => {
                out.push(a[i]);
                i += 1;
            }
            std::cmp::Ordering::Greater => {
                out.push(b[j]);
                j += 1;
            }
            std::cmp::Ordering::Equal => {
                out.push(a[i]);
                i += 1;
                j += 1;
            }
        }
    }
    out.extend_from_slice(&a[i..]);
    out.extend_from_slice(&b[j..]);
    out
}

/// The derivation sketch of one sentence: every pattern it satisfies within
/// the grammar's bounds, as a prefix tree.
pub(crate) fn sketch_children(tokens: &[String], grammar: &Grammar) -> Vec<SketchNode> {
    let mut local: Vec<String> = tokens.to_vec();
    local.sort();
    local.dedup();
    let ids: Vec<u32> = tokens
        .iter()
        .map(|t| local.binary_search(t).expect("token in local vocabulary") as u32)
        .collect();
    let v = local.len().max(1) as u32;
    let ends: Vec<u32> = (0..ids.len() as u32).collect();
    sketch_below(&ids, &local, &ends, 0, 0, grammar, v)
}

fn sketch_below(
    ids: &[u32],
    local: &[String],
    ends: &[u32],
    depth: usize,
    gaps: usize,
    grammar: &Grammar,
    v: u32,
) -> Vec<SketchNode> {
    grouped_extensions(ids, ends, depth, gaps, grammar, v)
        .into_iter()
        .map(|(label, child_ends)| {
            let (kind, tok) = (label / v, label % v);
            let token = local[tok as usize].clone();
            let step = match kind {
                LIT => Step::Literal(token),
                STAR => Step::GapLiteral(Gap::Star, token),
                _ => Step::GapLiteral(Gap::Plus, token),
            };
            let (dd, dg) = step_cost(kind);
            SketchNode {
                step,
                children: sketch_below(ids, local, &child_ends, depth + dd, gaps + dg, grammar, v),
            }
        })
        .collect()
}

impl TokenIndex {
    /// Interns the corpus tokens; indexes nothing yet.
    pub fn empty(corpus: &Corpus, grammar: Grammar) -> Self {
        let vocab: Vec<String> = corpus.vocab().iter().cloned().collect();
        let docs: Vec<Box<[u32]>> = corpus
            .sentences()
            .iter()
            .map(|s| {
                s.tokens
                    .iter()
                    .map(|t| vocab.binary_search(t).expect("token in corpus vocabulary") as u32)
                    .collect()
            })
            .collect();
        TokenIndex {
            grammar,
            vocab: Arc::new(vocab),
            indexed: FixedBitSet::with_capacity(docs.len()),
            docs: Arc::new(docs),
            nodes: vec![TrieNode::default()],
        }
    }

    fn v(&self) -> u32 {
        self.vocab.len().max(1) as u32
    }

    /// Materialized trie nodes (singleton subtrees are not counted).
    pub fn materialized_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn postings_len(&self) -> usize {
        self.nodes.iter().map(|n| n.postings.len()).sum()
    }

    fn token_id(&self, t: &str) -> Option<u32> {
        self.vocab.binary_search_by(|x| x.as_str().cmp(t)).ok().map(|i| i as u32)
    }

    fn mark_indexed(&mut self, d: DocId) -> Result<()> {
        if d as usize >= self.docs.len() {
            return Err(Error::Config(format!("sentence {d} is outside the corpus")));
        }
        if self.indexed.put(d as usize) {
            return Err(Error::AlreadyIndexed(d));
        }
        Ok(())
    }

    /// Indexes a contiguous range of sentences into an empty index in one
    /// top-down pass.
    pub(crate) fn bulk_insert(&mut self, docs: Range<DocId>) -> Result<()> {
        if !self.nodes[0].postings.is_empty() {
            return Err(Error::Config("bulk insert requires an empty index".into()));
        }
        for d in docs.clone() {
            self.mark_indexed(d)?;
        }
        let tokens = Arc::clone(&self.docs);
        let mut pairs = Vec::new();
        for d in docs.clone() {
            for e in 0..tokens[d as usize].len() as u32 {
                pairs.push((d, e));
            }
        }
        self.nodes[0].postings = docs.collect();
        let children = self.build_children(&pairs, 0, 0);
        self.nodes[0].children = children;
        Ok(())
    }

    /// Children of a node reached by `pairs` = (sentence, match end), sorted by sentence.
    fn build_children(&mut self, pairs: &[(DocId, u32)], depth: usize, gaps: usize) -> Vec<(u32, Child)> {
        let docs = Arc::clone(&self.docs);
        let v = self.v();
        let grammar = self.grammar;
        let mut triples: Vec<(u32, DocId, u32)> = Vec::new();
        let mut scratch = Vec::new();
        let mut i = 0;
        let mut ends = Vec::new();
        while i < pairs.len() {
            let d = pairs[i].0;
            ends.clear();
            while i < pairs.len() && pairs[i].0 == d {
                ends.push(pairs[i].1);
                i += 1;
            }
            scratch.clear();
            extend_into(&docs[d as usize], &ends, depth, gaps, &grammar, v, &mut scratch);
            triples.extend(scratch.iter().map(|&(label, end)| (label, d, end)));
        }
        triples.sort_unstable();
        triples.dedup();

        let mut children = Vec::new();
        let mut start = 0;
        while start < triples.len() {
            let label = triples[start].0;
            let mut stop = start;
            while stop < triples.len() && triples[stop].0 == label {
                stop += 1;
            }
            let group = &triples[start..stop];
            let first_doc = group[0].1;
            if group.iter().all(|t| t.1 == first_doc) {
                children.push((label, Child::Single(first_doc)));
            } else {
                let mut postings: Vec<DocId> = group.iter().map(|t| t.1).collect();
                postings.dedup();
                let id = self.nodes.len() as u32;
                self.nodes.push(TrieNode {
                    postings,
                    children: Vec::new(),
                });
                let child_pairs: Vec<(DocId, u32)> = group.iter().map(|t| (t.1, t.2)).collect();
                let (dd, dg) = step_cost(label / v);
                let grandchildren = self.build_children(&child_pairs, depth + dd, gaps + dg);
                self.nodes[id as usize].children = grandchildren;
                children.push((label, Child::Node(id)));
            }
            start = stop;
        }
        children
    }

    /// A materialized node holding only `d`, with its extensions as singletons.
    fn node_for_single(&mut self, d: DocId, ends: &[u32], depth: usize, gaps: usize) -> u32 {
        let v = self.v();
        let children = grouped_extensions(&self.docs[d as usize], ends, depth, gaps, &self.grammar, v)
            .into_iter()
            .map(|(label, _)| (label, Child::Single(d)))
            .collect();
        let id = self.nodes.len() as u32;
        self.nodes.push(TrieNode {
            postings: vec![d],
            children,
        });
        id
    }

    /// Adds sentence `d`, whose matches at `node` end at `ends`, to the subtree.
    fn add_doc_below(
        &mut self,
        node: u32,
        d: DocId,
        ends: &[u32],
        depth: usize,
        gaps: usize,
        path: &mut Vec<u32>,
    ) {
        insert_sorted(&mut self.nodes[node as usize].postings, d);
        let v = self.v();
        let exts = grouped_extensions(&self.docs[d as usize], ends, depth, gaps, &self.grammar, v);
        for (label, child_ends) in exts {
            let (dd, dg) = step_cost(label / v);
            path.push(label);
            let children = &self.nodes[node as usize].children;
            match children.binary_search_by_key(&label, |c| c.0) {
                Err(pos) => self.nodes[node as usize]
                    .children
                    .insert(pos, (label, Child::Single(d))),
                Ok(pos) => match children[pos].1 {
                    Child::Node(c) => {
                        self.add_doc_below(c, d, &child_ends, depth + dd, gaps + dg, path)
                    }
                    Child::Single(d0) => {
                        let ends0 = replay(&self.docs[d0 as usize], path, v);
                        let c = self.node_for_single(d0, &ends0, depth + dd, gaps + dg);
                        self.nodes[node as usize].children[pos].1 = Child::Node(c);
                        self.add_doc_below(c, d, &child_ends, depth + dd, gaps + dg, path);
                    }
                },
            }
            path.pop();
        }
    }

    /// Indexes one sentence incrementally.
    pub fn insert_doc(&mut self, d: DocId) -> Result<()> {
        self.mark_indexed(d)?;
        let ends: Vec<u32> = (0..self.docs[d as usize].len() as u32).collect();
        self.add_doc_below(0, d, &ends, 0, 0, &mut Vec::new());
        Ok(())
    }

    /// Merges an explicit sketch of sentence `d`.
    pub fn merge_sketch(&mut self, d: DocId, sketch: &[SketchNode]) -> Result<()> {
        if self.indexed.contains(d as usize) {
            return Err(Error::AlreadyIndexed(d));
        }
        let mut labels = Vec::new();
        self.check_sketch(sketch, &mut labels)?;
        self.mark_indexed(d)?;
        self.add_sketch_below(0, d, sketch, &mut Vec::new());
        Ok(())
    }

    fn step_label(&self, step: &Step) -> Result<u32> {
        let (kind, token) = match step {
            Step::Literal(t) => (LIT, t),
            Step::GapLiteral(Gap::Star, t) => (STAR, t),
            Step::GapLiteral(Gap::Plus, t) => (PLUS, t),
        };
        let tok = self
            .token_id(token)
            .ok_or_else(|| Error::Config(format!("token {token:?} is not in the corpus vocabulary")))?;
        Ok(kind * self.v() + tok)
    }

    fn check_sketch(&self, nodes: &[SketchNode], labels: &mut Vec<u32>) -> Result<()> {
        for n in nodes {
            labels.push(self.step_label(&n.step)?);
            self.check_sketch(&n.children, labels)?;
        }
        Ok(())
    }

    fn add_sketch_below(&mut self, node: u32, d: DocId, sketch: &[SketchNode], path: &mut Vec<u32>) {
        insert_sorted(&mut self.nodes[node as usize].postings, d);
        let v = self.v();
        for sk in sketch {
            let label = self.step_label(&sk.step).expect("checked before merging");
            path.push(label);
            let children = &self.nodes[node as usize].children;
            match children.binary_search_by_key(&label, |c| c.0) {
                Err(pos) => self.nodes[node as usize]
                    .children
                    .insert(pos, (label, Child::Single(d))),
                Ok(pos) => {
                    let c = match children[pos].1 {
                        Child::Node(c) => c,
                        Child::Single(d0) => {
                            let (depth, gaps) = path_cost(path, v);
                            let ends0 = replay(&self.docs[d0 as usize], path, v);
                            let c = self.node_for_single(d0, &ends0, depth, gaps);
                            self.nodes[node as usize].children[pos].1 = Child::Node(c);
                            c
                        }
                    };
                    self.add_sketch_below(c, d, &sk.children, path);
                }
            }
            path.pop();
        }
    }

    /// Merges another index over the same corpus with a disjoint sentence set.
    pub fn merge_from(&mut self, other: &TokenIndex) -> Result<()> {
        if self.grammar != other.grammar || self.vocab != other.vocab || self.docs.len() != other.docs.len() {
            return Err(Error::Config("indexes address different corpora or grammars".into()));
        }
        if let Some(d) = self.indexed.intersection(&other.indexed).next() {
            return Err(Error::AlreadyIndexed(d as DocId));
        }
        self.indexed.union_with(&other.indexed);
        self.merge_node(0, other, 0, &mut Vec::new());
        Ok(())
    }

    fn merge_node(&mut self, a: u32, other: &TokenIndex, b: u32, path: &mut Vec<u32>) {
        let v = self.v();
        let bn = &other.nodes[b as usize];
        let postings = sorted_union(&self.nodes[a as usize].postings, &bn.postings);
        self.nodes[a as usize].postings = postings;
        let mine = std::mem::take(&mut self.nodes[a as usize].children);
        let theirs = &bn.children;
        let mut merged = Vec::with_capacity(mine.len().max(theirs.len()));
        let (mut i, mut j) = (0, 0);
        while i < mine.len() || j < theirs.len() {
            let take_mine = j == theirs.len() || (i < mine.len() && mine[i].0 < theirs[j].0);
            let take_theirs = i == mine.len() || (j < theirs.len() && theirs[j].0 < mine[i].0);
            if take_mine {
                merged.push(mine[i]);
                i += 1;
                continue;
            }
            if take_theirs {
                let child = match theirs[j].1 {
                    Child::Node(y) => Child::Node(self.import(other, y)),
                    single => single,
                };
                merged.push((theirs[j].0, child));
                j += 1;
                continue;
            }
            let label = mine[i].0;
            path.push(label);
            let (depth, gaps) = path_cost(path, v);
            let node = match (mine[i].1, theirs[j].1) {
                (Child::Node(x), Child::Node(y)) => {
                    self.merge_node(x, other, y, path);
                    x
                }
                (Child::Node(x), Child::Single(d)) => {
                    let ends = replay(&self.docs[d as usize], path, v);
                    self.add_doc_below(x, d, &ends, depth, gaps, path);
                    x
                }
                (Child::Single(d), Child::Node(y)) => {
                    let x = self.import(other, y);
                    let ends = replay(&self.docs[d as usize], path, v);
                    self.add_doc_below(x, d, &ends, depth, gaps, path);
                    x
                }
                (Child::Single(d0), Child::Single(d1)) => {
                    let ends0 = replay(&self.docs[d0 as usize], path, v);
                    let x = self.node_for_single(d0, &ends0, depth, gaps);
                    let ends1 = replay(&self.docs[d1 as usize], path, v);
                    self.add_doc_below(x, d1, &ends1, depth, gaps, path);
                    x
                }
            };
            path.pop();
            merged.push((label, Child::Node(node)));
            i += 1;
            j += 1;
        }
        self.nodes[a as usize].children = merged;
    }

    /// Deep-copies a subtree of `other` into this arena.
    fn import(&mut self, other: &TokenIndex, y: u32) -> u32 {
        let src = &other.nodes[y as usize];
        let id = self.nodes.len() as u32;
        self.nodes.push(TrieNode {
            postings: src.postings.clone(),
            children: Vec::new(),
        });
        let children = src
            .children
            .iter()
            .map(|&(label, c)| {
                let c = match c {
                    Child::Node(z) => Child::Node(self.import(other, z)),
                    single => single,
                };
                (label, c)
            })
            .collect();
        self.nodes[id as usize].children = children;
        id
    }

    fn labels_of(&self, p: &TokensPattern) -> Option<Vec<u32>> {
        let v = self.v();
        let mut labels = Vec::new();
        let mut gap = None;
        for el in p.elements() {
            match el {
                Element::Gap(g) => gap = Some(*g),
                Element::Literal(t) => {
                    let kind = match gap.take() {
                        None => LIT,
                        Some(Gap::Star) => STAR,
                        Some(Gap::Plus) => PLUS,
                    };
                    labels.push(kind * v + self.token_id(t)?);
                }
            }
        }
        Some(labels)
    }

    fn pattern_of(&self, labels: &[u32]) -> TokensPattern {
        let v = self.v();
        labels.iter().fold(TokensPattern::root(), |p, &l| {
            let gap = match l / v {
                STAR => Some(Gap::Star),
                PLUS => Some(Gap::Plus),
                _ => None,
            };
            p.extended(gap, &self.vocab[(l % v) as usize])
        })
    }

    fn locate(&self, labels: &[u32]) -> Option<Loc> {
        let mut cur = 0u32;
        for &l in labels {
            let children = &self.nodes[cur as usize].children;
            match children.binary_search_by_key(&l, |c| c.0) {
                Err(_) => return None,
                Ok(pos) => match children[pos].1 {
                    Child::Node(c) => cur = c,
                    Child::Single(d) => {
                        let ends = replay(&self.docs[d as usize], labels, self.v());
                        return (!ends.is_empty()).then_some(Loc::Single(d));
                    }
                },
            }
        }
        Some(Loc::Node(cur))
    }

    fn within_bounds(&self, p: &TokensPattern) -> bool {
        p.depth() <= self.grammar.max_depth && p.gap_count() <= self.grammar.max_gaps
    }

    fn tokens_pattern<'h>(&self, h: &'h Heuristic) -> Result<&'h TokensPattern> {
        match h {
            Heuristic::Tokens(p) => Ok(p),
            Heuristic::Tree(_) => Err(Error::GrammarMismatch {
                expected: "tokens_regex",
                actual: "tree_match",
            }),
        }
    }

    /// Child labels of a located node.
    fn child_labels(&self, loc: Loc, labels: &[u32]) -> Vec<(u32, Loc)> {
        match loc {
            Loc::Node(n) => self.nodes[n as usize]
                .children
                .iter()
                .map(|&(l, c)| {
                    let loc = match c {
                        Child::Node(x) => Loc::Node(x),
                        Child::Single(d) => Loc::Single(d),
                    };
                    (l, loc)
                })
                .collect(),
            Loc::Single(d) => self
                .single_extensions(d, labels)
                .into_iter()
                .map(|l| (l, Loc::Single(d)))
                .collect(),
        }
    }

    fn single_extensions(&self, d: DocId, labels: &[u32]) -> Vec<u32> {
        let v = self.v();
        let tokens = &self.docs[d as usize];
        let ends = replay(tokens, labels, v);
        let (depth, gaps) = path_cost(labels, v);
        grouped_extensions(tokens, &ends, depth, gaps, &self.grammar, v)
            .into_iter()
            .map(|(l, _)| l)
            .collect()
    }

    fn loc_postings(&self, loc: Loc) -> Vec<DocId> {
        match loc {
            Loc::Node(n) => self.nodes[n as usize].postings.clone(),
            Loc::Single(d) => vec![d],
        }
    }

    /// Visits every logical node (singleton subtrees expanded) with its
    /// pattern and inverted list, the root included.
    pub fn for_each_node(&self, mut f: impl FnMut(&TokensPattern, &[DocId])) {
        let mut labels = Vec::new();
        self.visit(Loc::Node(0), &mut labels, &mut f);
    }

    fn visit(&self, loc: Loc, labels: &mut Vec<u32>, f: &mut impl FnMut(&TokensPattern, &[DocId])) {
        f(&self.pattern_of(labels), &self.loc_postings(loc));
        for (l, child) in self.child_labels(loc, labels) {
            labels.push(l);
            self.visit(child, labels, f);
            labels.pop();
        }
    }

    fn node_eq(&self, a: u32, other: &TokenIndex, b: u32) -> bool {
        let (x, y) = (&self.nodes[a as usize], &other.nodes[b as usize]);
        x.postings == y.postings
            && x.children.len() == y.children.len()
            && x.children.iter().zip(&y.children).all(|(p, q)| {
                p.0 == q.0
                    && match (p.1, q.1) {
                        (Child::Node(i), Child::Node(j)) => self.node_eq(i, other, j),
                        (Child::Single(i), Child::Single(j)) => i == j,
                        _ => false,
                    }
            })
    }
}

/// Structural equality: same corpus, same indexed set, same logical trie.
impl PartialEq for TokenIndex {
    fn eq(&self, other: &Self) -> bool {
        self.grammar == other.grammar
            && self.vocab == other.vocab
            && self.docs == other.docs
            && self.indexed == other.indexed
            && self.node_eq(0, other, 0)
    }
}

impl DerivationIndex for TokenIndex {
    fn grammar(&self) -> &Grammar {
        &self.grammar
    }

    fn num_docs(&self) -> usize {
        self.docs.len()
    }

    fn indexed_count(&self) -> usize {
        self.indexed.count_ones(..)
    }

    fn coverage(&self, h: &Heuristic) -> Result<Vec<DocId>> {
        let p = self.tokens_pattern(h)?;
        let Some(labels) = self.labels_of(p) else {
            return Ok(Vec::new());
        };
        if !self.within_bounds(p) {
            // not enumerated by the index; fall back to scanning
            let v = self.v();
            return Ok(self
                .indexed
                .ones()
                .filter(|&d| !replay(&self.docs[d], &labels, v).is_empty())
                .map(|d| d as DocId)
                .collect());
        }
        Ok(self
            .locate(&labels)
            .map(|loc| self.loc_postings(loc))
            .unwrap_or_default())
    }

    fn children_of(&self, h: &Heuristic) -> Result<Vec<Heuristic>> {
        let p = self.tokens_pattern(h)?;
        if !self.within_bounds(p) {
            return Ok(Vec::new());
        }
        let Some(labels) = self.labels_of(p) else {
            return Ok(Vec::new());
        };
        let Some(loc) = self.locate(&labels) else {
            return Ok(Vec::new());
        };
        let mut path = labels.clone();
        Ok(self
            .child_labels(loc, &labels)
            .into_iter()
            .map(|(l, _)| {
                path.push(l);
                let child = Heuristic::Tokens(self.pattern_of(&path));
                path.pop();
                child
            })
            .collect())
    }

    fn expander(&self) -> Box<dyn Expander + '_> {
        Box::new(TokenExpander {
            index: self,
            arena: Vec::new(),
        })
    }
}

struct Entry {
    labels: CanonKey,
    loc: Loc,
    /// Labels of children seen in positive sentences, sorted.
    pos_labels: Vec<u32>,
}

struct TokenExpander<'a> {
    index: &'a TokenIndex,
    arena: Vec<Entry>,
}

impl TokenExpander<'_> {
    fn push(&mut self, labels: CanonKey, loc: Loc, pos: u32) -> CandInfo {
        let count = match loc {
            Loc::Node(n) => self.index.nodes[n as usize].postings.len() as u32,
            Loc::Single(_) => 1,
        };
        let key = self.arena.len() as u32;
        self.arena.push(Entry {
            labels: labels.clone(),
            loc,
            pos_labels: Vec::new(),
        });
        CandInfo {
            key,
            count,
            pos,
            canon: labels,
        }
    }

    fn child_loc(&self, loc: Loc, label: u32) -> Option<Loc> {
        match loc {
            Loc::Single(d) => Some(Loc::Single(d)),
            Loc::Node(n) => {
                let children = &self.index.nodes[n as usize].children;
                children
                    .binary_search_by_key(&label, |c| c.0)
                    .ok()
                    .map(|pos| match children[pos].1 {
                        Child::Node(c) => Loc::Node(c),
                        Child::Single(d) => Loc::Single(d),
                    })
            }
        }
    }

    fn extended(labels: &[u32], l: u32) -> CanonKey {
        let mut path = labels.to_vec();
        path.push(l);
        path.into()
    }
}

impl Expander for TokenExpander<'_> {
    fn root(&mut self) -> CandInfo {
        self.push(Vec::new().into(), Loc::Node(0), 0)
    }

    fn positive_children(&mut self, key: u32, positives: &DocSet) -> Vec<CandInfo> {
        let entry = &self.arena[key as usize];
        let (loc, labels) = (entry.loc, entry.labels.clone());
        let docs: Vec<DocId> = match loc {
            Loc::Node(n) => self.index.nodes[n as usize]
                .postings
                .iter()
                .copied()
                .filter(|&d| positives.contains(d as usize))
                .collect(),
            Loc::Single(d) => {
                if positives.contains(d as usize) {
                    vec![d]
                } else {
                    Vec::new()
                }
            }
        };
        let mut hits: Vec<u32> = Vec::new();
        for d in docs {
            hits.extend(self.index.single_extensions(d, &labels));
        }
        hits.sort_unstable();
        let mut out = Vec::new();
        let mut pos_labels = Vec::new();
        let mut i = 0;
        while i < hits.len() {
            let l = hits[i];
            let mut j = i;
            while j < hits.len() && hits[j] == l {
                j += 1;
            }
            pos_labels.push(l);
            let child = self
                .child_loc(loc, l)
                .expect("extension of an indexed sentence is in the trie");
            out.push(self.push(Self::extended(&labels, l), child, (j - i) as u32));
            i = j;
        }
        self.arena[key as usize].pos_labels = pos_labels;
        out
    }

    fn zero_children(&mut self, key: u32, _positives: &DocSet) -> Vec<CandInfo> {
        let entry = &self.arena[key as usize];
        let (loc, labels) = (entry.loc, entry.labels.clone());
        let children = self.index.child_labels(loc, &labels);
        let mut out = Vec::new();
        for (l, child) in children {
            if self.arena[key as usize].pos_labels.binary_search(&l).is_ok() {
                continue;
            }
            out.push(self.push(Self::extended(&labels, l), child, 0));
        }
        out
    }

    fn heuristic(&self, key: u32) -> Heuristic {
        Heuristic::Tokens(self.index.pattern_of(&self.arena[key as usize].labels))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Sentence;

    fn corpus(texts: &[&str]) -> Corpus {
        Corpus::new(
            texts
                .iter()
                .enumerate()
                .map(|(i, t)| Sentence::new(i as u64 + 1, *t))
                .collect(),
        )
        .unwrap()
    }

    fn built(c: &Corpus, g: Grammar) -> TokenIndex {
        let mut idx = TokenIndex::empty(c, g);
        idx.bulk_insert(0..c.len() as DocId).unwrap();
        idx
    }

    #[test]
    fn incremental_equals_bulk() {
        let c = corpus(&["a b a c", "b a c", "c c a", "a b"]);
        let g = Grammar::tokens_regex().with_max_depth(4);
        let bulk = built(&c, g);
        let mut inc = TokenIndex::empty(&c, g);
        for d in [2, 0, 3, 1] {
            inc.insert_doc(d).unwrap();
        }
        assert_eq!(bulk, inc);
        assert!(matches!(inc.insert_doc(1), Err(Error::AlreadyIndexed(1))));
    }

    #[test]
    fn merge_of_halves_equals_bulk() {
        let c = corpus(&["a b a c", "b a c", "c c a", "a b", "b b b"]);
        let g = Grammar::tokens_regex().with_max_depth(5);
        let bulk = built(&c, g);
        let mut left = TokenIndex::empty(&c, g);
        left.bulk_insert(0..2).unwrap();
        let mut right = TokenIndex::empty(&c, g);
        right.bulk_insert(2..5).unwrap();
        left.merge_from(&right).unwrap();
        assert_eq!(left, bulk);
        assert!(matches!(left.merge_from(&right), Err(Error::AlreadyIndexed(2))));
    }

    #[test]
    fn singletons_are_not_materialized() {
        let c = corpus(&["x y z", "q r s"]);
        let idx = built(&c, Grammar::tokens_regex());
        assert_eq!(idx.materialized_nodes(), 1);
        let mut seen = 0;
        idx.for_each_node(|_, postings| {
            seen += 1;
            assert!(!postings.is_empty());
        });
        assert!(seen > 10);
    }

    #[test]
    fn empty_corpus_index() {
        let c = corpus(&[]);
        let idx = built(&c, Grammar::tokens_regex());
        let root = Heuristic::Tokens(TokensPattern::root());
        assert!(idx.coverage(&root).unwrap().is_empty());
        assert!(idx.children_of(&root).unwrap().is_empty());
    }
}
