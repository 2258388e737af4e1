//! Corpus-wide derivation indexes: every heuristic of bounded depth that some
//! sentence satisfies, with its count and sorted inverted list.

pub mod token_index;
pub mod tree_index;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, DocId, DocSet, ParseTree};
use crate::error::{Error, Result};
use crate::grammar::{Gap, Grammar, GrammarId, Heuristic};

pub use token_index::TokenIndex;
pub use tree_index::TreeIndex;

/// Sort key whose lexicographic order equals the order of canonical strings.
pub type CanonKey = Arc<[u32]>;

/// A candidate produced while expanding the index, addressed by an expander-local key.
#[derive(Clone, Debug)]
pub struct CandInfo {
    pub key: u32,
    /// Sentences covered.
    pub count: u32,
    /// Covered sentences inside the positive set of the expansion.
    pub pos: u32,
    pub canon: CanonKey,
}

/// Stateful, best-first expansion over an index's derivation tree.
pub trait Expander {
    fn root(&mut self) -> CandInfo;

    /// Children covering at least one positive, with exact counts.
    fn positive_children(&mut self, key: u32, positives: &DocSet) -> Vec<CandInfo>;

    /// Children covering no positive. Only valid after `positive_children` for
    /// the same key and positive set.
    fn zero_children(&mut self, key: u32, positives: &DocSet) -> Vec<CandInfo>;

    fn heuristic(&self, key: u32) -> Heuristic;
}

pub trait DerivationIndex: Send + Sync {
    fn grammar(&self) -> &Grammar;

    /// Size of the corpus the index addresses (indexed or not).
    fn num_docs(&self) -> usize;

    fn indexed_count(&self) -> usize;

    /// Sorted sentences satisfying `h`.
    fn coverage(&self, h: &Heuristic) -> Result<Vec<DocId>>;

    /// One-step derivations of `h` satisfied by at least one sentence.
    fn children_of(&self, h: &Heuristic) -> Result<Vec<Heuristic>>;

    fn expander(&self) -> Box<dyn Expander + '_>;

    fn coverage_set(&self, h: &Heuristic) -> Result<DocSet> {
        let mut set = DocSet::with_capacity(self.num_docs());
        set.extend(self.coverage(h)?.into_iter().map(|d| d as usize));
        Ok(set)
    }

    fn parents_of(&self, h: &Heuristic) -> Vec<Heuristic> {
        h.parents()
    }
}

/// One derivation step of a token pattern, as stored in a sketch.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum Step {
    Literal(String),
    GapLiteral(Gap, String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SketchNode {
    pub step: Step,
    pub children: Vec<SketchNode>,
}

impl SketchNode {
    pub fn size(&self) -> usize {
        1 + self.children.iter().map(SketchNode::size).sum::<usize>()
    }
}

/// All heuristics one sentence satisfies, as a prefix tree of derivations.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum DerivationSketch {
    Tokens {
        doc: DocId,
        /// Children of the root pattern `*`.
        children: Vec<SketchNode>,
    },
    /// The dependency tree itself serves as the sketch.
    Tree { doc: DocId, tree: ParseTree },
}

impl DerivationSketch {
    pub fn doc(&self) -> DocId {
        match self {
            DerivationSketch::Tokens { doc, .. } | DerivationSketch::Tree { doc, .. } => *doc,
        }
    }

    /// Nodes below the root.
    pub fn node_count(&self) -> usize {
        match self {
            DerivationSketch::Tokens { children, .. } => children.iter().map(SketchNode::size).sum(),
            DerivationSketch::Tree { tree, .. } => tree.len(),
        }
    }
}

pub fn build_sketch(doc: DocId, corpus: &Corpus, grammar: &Grammar) -> Result<DerivationSketch> {
    let s = corpus.get(doc);
    match grammar.id {
        GrammarId::TokensRegex => Ok(DerivationSketch::Tokens {
            doc,
            children: token_index::sketch_children(&s.tokens, grammar),
        }),
        GrammarId::TreeMatch => Ok(DerivationSketch::Tree {
            doc,
            tree: s.parse_tree().ok_or(Error::MissingParse(s.id))?,
        }),
    }
}

/// An index over either grammar.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SketchIndex {
    Tokens(TokenIndex),
    Tree(TreeIndex),
}

impl SketchIndex {
    /// An index addressing `corpus` with nothing indexed yet.
    pub fn empty(corpus: &Corpus, grammar: &Grammar) -> Result<Self> {
        grammar.validate()?;
        Ok(match grammar.id {
            GrammarId::TokensRegex => SketchIndex::Tokens(TokenIndex::empty(corpus, *grammar)),
            GrammarId::TreeMatch => SketchIndex::Tree(TreeIndex::empty(corpus, *grammar)?),
        })
    }

    pub fn merge_sketch(&mut self, sketch: &DerivationSketch) -> Result<()> {
        match (self, sketch) {
            (SketchIndex::Tokens(i), DerivationSketch::Tokens { doc, children }) => {
                i.merge_sketch(*doc, children)
            }
            (SketchIndex::Tree(i), DerivationSketch::Tree { doc, .. }) => i.add_doc(*doc),
            (SketchIndex::Tokens(_), _) => Err(Error::GrammarMismatch {
                expected: "tokens_regex",
                actual: "tree_match",
            }),
            (SketchIndex::Tree(_), _) => Err(Error::GrammarMismatch {
                expected: "tree_match",
                actual: "tokens_regex",
            }),
        }
    }

    pub fn as_dyn(&self) -> &dyn DerivationIndex {
        match self {
            SketchIndex::Tokens(i) => i,
            SketchIndex::Tree(i) => i,
        }
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let snapshot = IndexSnapshot {
            v: INDEX_VERSION,
            index: self,
        };
        serde_json::to_writer(std::io::BufWriter::new(file), &snapshot)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let snapshot: OwnedSnapshot = serde_json::from_reader(std::io::BufReader::new(file))?;
        if snapshot.v != INDEX_VERSION {
            return Err(Error::Version {
                found: snapshot.v,
                expected: INDEX_VERSION,
            });
        }
        Ok(snapshot.index)
    }
}

const INDEX_VERSION: u32 = 1;

#[derive(Serialize)]
struct IndexSnapshot<'a> {
    v: u32,
    index: &'a SketchIndex,
}

#[derive(Deserialize)]
struct OwnedSnapshot {
    v: u32,
    index: SketchIndex,
}

/// Builds the index over every sentence, in `shards` independently built
/// partial indexes merged pairwise. The result does not depend on `shards`.
pub fn build_index(corpus: &Corpus, grammar: &Grammar, shards: usize) -> Result<SketchIndex> {
    if shards == 0 {
        return Err(Error::Config("shards must be at least 1".into()));
    }
    grammar.validate()?;
    let n = corpus.len();
    let shards = shards.min(n.max(1));
    let bounds: Vec<(usize, usize)> = (0..shards)
        .map(|i| (i * n / shards, (i + 1) * n / shards))
        .collect();
    match grammar.id {
        GrammarId::TokensRegex => {
            let template = TokenIndex::empty(corpus, *grammar);
            let parts = run_shards(&bounds, |lo, hi| {
                let mut part = template.clone();
                part.bulk_insert(lo as DocId..hi as DocId)?;
                Ok(part)
            })?;
            merge_all(parts, |a, b| a.merge_from(&b)).map(SketchIndex::Tokens)
        }
        GrammarId::TreeMatch => {
            let template = TreeIndex::empty(corpus, *grammar)?;
            let parts = run_shards(&bounds, |lo, hi| {
                let mut part = template.clone();
                for d in lo..hi {
                    part.add_doc(d as DocId)?;
                }
                Ok(part)
            })?;
            merge_all(parts, |a, b| a.merge_from(&b)).map(SketchIndex::Tree)
        }
    }
}

fn run_shards<T: Send>(
    bounds: &[(usize, usize)],
    build: impl Fn(usize, usize) -> Result<T> + Sync,
) -> Result<Vec<T>> {
    if bounds.len() == 1 {
        return Ok(vec![build(bounds[0].0, bounds[0].1)?]);
    }
    std::thread::scope(|scope| {
        let handles: Vec<_> = bounds
            .iter()
            .map(|&(lo, hi)| {
                let build = &build;
                scope.spawn(move || build(lo, hi))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("index shard panicked"))
            .collect()
    })
}

/// Pairwise reduction: 0+1, 2+3, ... until one index remains.
fn merge_all<T>(mut parts: Vec<T>, merge: impl Fn(&mut T, T) -> Result<()>) -> Result<T> {
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                merge(&mut a, b)?;
            }
            next.push(a);
        }
        parts = next;
    }
    Ok(parts.pop().expect("at least one shard"))
}
