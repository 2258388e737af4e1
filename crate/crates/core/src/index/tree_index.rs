//! Index for dependency-tree patterns. The parse tree of each sentence is its
//! own sketch; the index keeps per-terminal inverted lists to narrow the
//! sentences a pattern is checked against, and derives children by walking
//! the trees of the covered sentences.

use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use super::token_index::{insert_sorted, sorted_union};
use super::{CandInfo, CanonKey, DerivationIndex, Expander};
use crate::corpus::{Corpus, DocId, DocSet, ParseTree};
use crate::error::{Error, Result};
use crate::grammar::{Constraint, Grammar, Heuristic, TreePattern, TreeView};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct TreeDoc {
    tokens: Vec<String>,
    pos: Option<Vec<String>>,
    tree: ParseTree,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeIndex {
    grammar: Grammar,
    docs: Arc<Vec<TreeDoc>>,
    indexed: FixedBitSet,
    /// Terminal (form or POS tag) -> sorted sentences containing it.
    postings: BTreeMap<String, Vec<DocId>>,
}

fn collect_terms<'a>(list: &'a [Constraint], out: &mut Vec<&'a str>) {
    for c in list {
        out.push(&c.node.term);
        collect_terms(&c.node.children, out);
    }
}

fn canon_key(p: &TreePattern) -> CanonKey {
    p.canonical().chars().map(u32::from).collect()
}

impl TreeIndex {
    /// Every sentence must carry a dependency parse.
    pub fn empty(corpus: &Corpus, grammar: Grammar) -> Result<Self> {
        let docs = corpus
            .sentences()
            .iter()
            .map(|s| {
                Ok(TreeDoc {
                    tokens: s.tokens.clone(),
                    pos: s.pos_tags.clone(),
                    tree: s.parse_tree().ok_or(Error::MissingParse(s.id))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(TreeIndex {
            grammar,
            indexed: FixedBitSet::with_capacity(docs.len()),
            docs: Arc::new(docs),
            postings: BTreeMap::new(),
        })
    }

    fn view(&self, d: DocId) -> TreeView<'_> {
        let doc = &self.docs[d as usize];
        TreeView::new(&doc.tokens, doc.pos.as_deref(), Cow::Borrowed(&doc.tree))
    }

    pub fn add_doc(&mut self, d: DocId) -> Result<()> {
        if d as usize >= self.docs.len() {
            return Err(Error::Config(format!("sentence {d} is outside the corpus")));
        }
        if self.indexed.put(d as usize) {
            return Err(Error::AlreadyIndexed(d));
        }
        let docs = Arc::clone(&self.docs);
        let view = TreeView::new(
            &docs[d as usize].tokens,
            docs[d as usize].pos.as_deref(),
            Cow::Borrowed(&docs[d as usize].tree),
        );
        for t in 0..view.len() {
            for term in view.terms(t) {
                insert_sorted(self.postings.entry(term.to_string()).or_default(), d);
            }
        }
        Ok(())
    }

    pub fn merge_from(&mut self, other: &TreeIndex) -> Result<()> {
        if self.grammar != other.grammar || self.docs.len() != other.docs.len() {
            return Err(Error::Config("indexes address different corpora or grammars".into()));
        }
        if let Some(d) = self.indexed.intersection(&other.indexed).next() {
            return Err(Error::AlreadyIndexed(d as DocId));
        }
        self.indexed.union_with(&other.indexed);
        for (term, list) in &other.postings {
            let mine = self.postings.entry(term.clone()).or_default();
            *mine = sorted_union(mine, list);
        }
        Ok(())
    }

    fn tree_pattern<'h>(&self, h: &'h Heuristic) -> Result<&'h TreePattern> {
        match h {
            Heuristic::Tree(p) => Ok(p),
            Heuristic::Tokens(_) => Err(Error::GrammarMismatch {
                expected: "tree_match",
                actual: "tokens_regex",
            }),
        }
    }

    fn cover(&self, p: &TreePattern) -> Vec<DocId> {
        if p.is_root() {
            return self.indexed.ones().map(|d| d as DocId).collect();
        }
        let mut terms = Vec::new();
        collect_terms(p.constraints(), &mut terms);
        terms.sort_unstable();
        terms.dedup();
        let mut lists: Vec<&Vec<DocId>> = Vec::with_capacity(terms.len());
        for t in terms {
            match self.postings.get(t) {
                Some(list) => lists.push(list),
                None => return Vec::new(),
            }
        }
        lists.sort_by_key(|l| l.len());
        lists[0]
            .iter()
            .copied()
            .filter(|d| lists[1..].iter().all(|l| l.binary_search(d).is_ok()))
            .filter(|&d| p.matches_view(&self.view(d)))
            .collect()
    }

    /// Children of `p` satisfied by the sentences in `cov`, with their coverage.
    fn refine(&self, p: &TreePattern, cov: &[DocId]) -> BTreeMap<String, (TreePattern, Vec<DocId>)> {
        let mut out: BTreeMap<String, (TreePattern, Vec<DocId>)> = BTreeMap::new();
        for &d in cov {
            for child in p.refinements(&self.view(d), self.grammar.max_depth) {
                out.entry(child.canonical())
                    .or_insert_with(|| (child, Vec::new()))
                    .1
                    .push(d);
            }
        }
        out
    }
}

impl DerivationIndex for TreeIndex {
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
        Ok(self.cover(self.tree_pattern(h)?))
    }

    fn children_of(&self, h: &Heuristic) -> Result<Vec<Heuristic>> {
        let p = self.tree_pattern(h)?;
        let cov = self.cover(p);
        Ok(self
            .refine(p, &cov)
            .into_values()
            .map(|(c, _)| Heuristic::Tree(c))
            .collect())
    }

    fn expander(&self) -> Box<dyn Expander + '_> {
        Box::new(TreeExpander {
            index: self,
            arena: Vec::new(),
            by_canonical: HashMap::new(),
        })
    }
}

struct Entry {
    pattern: TreePattern,
    canon: CanonKey,
    cov: Vec<DocId>,
    children: Option<Vec<u32>>,
}

struct TreeExpander<'a> {
    index: &'a TreeIndex,
    arena: Vec<Entry>,
    by_canonical: HashMap<String, u32>,
}

impl TreeExpander<'_> {
    fn intern(&mut self, canonical: String, pattern: TreePattern, cov: Vec<DocId>) -> u32 {
        if let Some(&k) = self.by_canonical.get(&canonical) {
            return k;
        }
        let key = self.arena.len() as u32;
        self.arena.push(Entry {
            canon: canon_key(&pattern),
            pattern,
            cov,
            children: None,
        });
        self.by_canonical.insert(canonical, key);
        key
    }

    fn info(&self, key: u32, positives: &DocSet) -> CandInfo {
        let e = &self.arena[key as usize];
        CandInfo {
            key,
            count: e.cov.len() as u32,
            pos: e.cov.iter().filter(|&&d| positives.contains(d as usize)).count() as u32,
            canon: e.canon.clone(),
        }
    }

    fn children(&mut self, key: u32) -> Vec<u32> {
        if let Some(c) = &self.arena[key as usize].children {
            return c.clone();
        }
        let e = &self.arena[key as usize];
        let refined = self.index.refine(&e.pattern, &e.cov);
        let keys: Vec<u32> = refined
            .into_iter()
            .map(|(canonical, (p, cov))| self.intern(canonical, p, cov))
            .collect();
        self.arena[key as usize].children = Some(keys.clone());
        keys
    }
}

impl Expander for TreeExpander<'_> {
    fn root(&mut self) -> CandInfo {
        let root = TreePattern::root();
        let cov = self.index.cover(&root);
        let key = self.intern(root.canonical(), root, cov);
        self.info(key, &DocSet::new())
    }

    fn positive_children(&mut self, key: u32, positives: &DocSet) -> Vec<CandInfo> {
        self.children(key)
            .into_iter()
            .map(|k| self.info(k, positives))
            .filter(|c| c.pos > 0)
            .collect()
    }

    fn zero_children(&mut self, key: u32, positives: &DocSet) -> Vec<CandInfo> {
        self.children(key)
            .into_iter()
            .map(|k| self.info(k, positives))
            .filter(|c| c.pos == 0)
            .collect()
    }

    fn heuristic(&self, key: u32) -> Heuristic {
        Heuristic::Tree(self.arena[key as usize].pattern.clone())
    }
}
