//! Dependency-tree patterns built from child (`/`), descendant (`//`) and
//! conjunction (`∧`, also written `&`) constraints.
//!
//! Surface syntax: a chain `a/b//c` nests each term under the previous one.
//! A conjunction after a chain step adds a sibling under the same parent, so
//! `/is/NOUN ∧ job` requires `is` to be the root with children `NOUN` and `job`.
//! Parentheses close the scope: `(/is/NOUN) ∧ job` puts `job` anywhere in the
//! tree. Top-level items without an axis are descendants of the virtual root,
//! i.e. may occur anywhere; a leading `/` pins a term to the dependency root.
//!
//! Embeddings are homomorphic: distinct pattern nodes may map to the same token.
//! A term matches a token when it equals the token's form or its POS tag.

use std::borrow::Cow;
use std::cmp::Ordering;
use std::collections::BTreeSet;
use std::fmt::{self, Write as _};

use crate::corpus::{ParseTree, Sentence};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Axis {
    Child,
    Descendant,
}

impl Axis {
    fn symbol(self) -> &'static str {
        match self {
            Axis::Child => "/",
            Axis::Descendant => "//",
        }
    }

    fn code(self) -> char {
        match self {
            Axis::Child => '\u{2}',
            Axis::Descendant => '\u{3}',
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct PatternNode {
    pub term: String,
    pub children: Vec<Constraint>,
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct Constraint {
    pub axis: Axis,
    pub node: PatternNode,
}

impl Constraint {
    pub fn leaf(axis: Axis, term: impl Into<String>) -> Self {
        Constraint {
            axis,
            node: PatternNode {
                term: term.into(),
                children: Vec::new(),
            },
        }
    }

    pub fn with(mut self, child: Constraint) -> Self {
        self.node.children.push(child);
        self
    }

    fn canonical_into(&self, out: &mut String) {
        out.push(self.axis.code());
        out.push_str(&self.node.term);
        if !self.node.children.is_empty() {
            out.push('\u{1d}');
            join_canonical(&self.node.children, out);
            out.push('\u{1c}');
        }
    }

    fn canonical(&self) -> String {
        let mut s = String::new();
        self.canonical_into(&mut s);
        s
    }

    fn size(&self) -> usize {
        1 + self.node.children.iter().map(Constraint::size).sum::<usize>()
    }
}

fn join_canonical(list: &[Constraint], out: &mut String) {
    for (i, c) in list.iter().enumerate() {
        if i > 0 {
            out.push('\u{1f}');
        }
        c.canonical_into(out);
    }
}

/// Sorts siblings by canonical form and drops exact duplicates (`a ∧ a` ≡ `a`).
fn normalize(list: &mut Vec<Constraint>) {
    for c in list.iter_mut() {
        normalize(&mut c.node.children);
    }
    let mut keyed: Vec<(String, Constraint)> = list.drain(..).map(|c| (c.canonical(), c)).collect();
    keyed.sort_by(|a, b| a.0.cmp(&b.0));
    keyed.dedup_by(|a, b| a.0 == b.0);
    list.extend(keyed.into_iter().map(|(_, c)| c));
}

fn list_depth(list: &[Constraint]) -> usize {
    if list.is_empty() {
        return 0;
    }
    list.iter()
        .map(|c| 2 + list_depth(&c.node.children))
        .sum::<usize>()
        + list.len()
        - 1
}

/// Constraints hanging off the virtual root of the dependency tree.
#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TreePattern {
    roots: Vec<Constraint>,
}

impl TreePattern {
    pub fn root() -> Self {
        TreePattern::default()
    }

    pub fn new(mut roots: Vec<Constraint>) -> Self {
        normalize(&mut roots);
        TreePattern { roots }
    }

    pub fn constraints(&self) -> &[Constraint] {
        &self.roots
    }

    pub fn is_root(&self) -> bool {
        self.roots.is_empty()
    }

    /// Rule applications: a terminal and an axis per node, plus one per extra sibling.
    pub fn depth(&self) -> usize {
        list_depth(&self.roots)
    }

    pub fn node_count(&self) -> usize {
        self.roots.iter().map(Constraint::size).sum()
    }

    pub fn canonical(&self) -> String {
        let mut s = String::new();
        join_canonical(&self.roots, &mut s);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        if text.trim() == "*" {
            return Ok(Self::root());
        }
        let mut p = Parser {
            chars: text.char_indices().collect(),
            i: 0,
            len: text.len(),
        };
        let roots = p.list(Axis::Descendant)?;
        p.skip_ws();
        if let Some((pos, c)) = p.peek_at() {
            return Err(Error::Syntax {
                position: pos,
                message: format!("unexpected {c:?}"),
            });
        }
        Ok(TreePattern::new(roots))
    }

    pub fn matches(&self, sentence: &Sentence) -> Result<bool> {
        let view = TreeView::of(sentence)?;
        Ok(self.matches_view(&view))
    }

    pub fn matches_view(&self, view: &TreeView<'_>) -> bool {
        if self.roots.is_empty() {
            return true;
        }
        if view.len() == 0 {
            return false;
        }
        self.roots.iter().all(|c| {
            let sat = view.sat_set(&c.node);
            match c.axis {
                Axis::Child => sat[view.tree.root],
                Axis::Descendant => sat.iter().any(|&b| b),
            }
        })
    }

    /// Token ranges of one embedding, merged into runs.
    pub fn match_spans(&self, sentence: &Sentence) -> Result<Option<Vec<(usize, usize)>>> {
        let view = TreeView::of(sentence)?;
        if !self.matches_view(&view) {
            return Ok(None);
        }
        let mut hit = BTreeSet::new();
        for c in &self.roots {
            let candidates: Vec<usize> = match c.axis {
                Axis::Child => vec![view.tree.root],
                Axis::Descendant => (0..view.len()).collect(),
            };
            view.witness(&c.node, &candidates, &mut hit);
        }
        let mut spans: Vec<(usize, usize)> = Vec::new();
        for t in hit {
            match spans.last_mut() {
                Some((_, end)) if *end == t => *end = t + 1,
                _ => spans.push((t, t + 1)),
            }
        }
        Ok(Some(spans))
    }

    /// Patterns one derivation step below this one (a new leaf constraint)
    /// that the sentence satisfies, within `max_depth`.
    pub fn refinements(&self, view: &TreeView<'_>, max_depth: usize) -> Vec<TreePattern> {
        if view.len() == 0 || !self.matches_view(view) {
            return Vec::new();
        }
        let mut additions: BTreeSet<(Vec<usize>, Axis, String)> = BTreeSet::new();
        // the virtual root sits above the dependency root
        for t in 0..view.len() {
            let axis = if t == view.tree.root {
                Some(Axis::Child)
            } else {
                None
            };
            for term in view.terms(t) {
                if let Some(a) = axis {
                    additions.insert((Vec::new(), a, term.to_string()));
                }
                additions.insert((Vec::new(), Axis::Descendant, term.to_string()));
            }
        }
        let mut path = Vec::new();
        for (i, c) in self.roots.iter().enumerate() {
            let feasible: Vec<bool> = {
                let sat = view.sat_set(&c.node);
                match c.axis {
                    Axis::Child => (0..view.len()).map(|t| t == view.tree.root && sat[t]).collect(),
                    Axis::Descendant => sat,
                }
            };
            path.push(i);
            view.collect_additions(&c.node, &feasible, &mut path, &mut additions);
            path.pop();
        }

        let mut out: Vec<TreePattern> = Vec::new();
        let mut seen = BTreeSet::new();
        for (path, axis, term) in additions {
            let mut roots = self.roots.clone();
            let list = list_at(&mut roots, &path);
            let leaf = Constraint::leaf(axis, term);
            if list.contains(&leaf) {
                continue;
            }
            list.push(leaf);
            let child = TreePattern::new(roots);
            if child.depth() > max_depth {
                continue;
            }
            if seen.insert(child.canonical()) {
                out.push(child);
            }
        }
        out
    }

    /// Patterns one derivation step above: each with one leaf constraint removed.
    pub fn parents(&self) -> Vec<TreePattern> {
        let mut out = Vec::new();
        let mut seen = BTreeSet::new();
        let mut leaves = Vec::new();
        collect_leaves(&self.roots, &mut Vec::new(), &mut leaves);
        for leaf in leaves {
            let mut roots = self.roots.clone();
            let (last, prefix) = leaf.split_last().expect("leaf paths are non-empty");
            list_at(&mut roots, prefix).remove(*last);
            let parent = TreePattern::new(roots);
            if seen.insert(parent.canonical()) {
                out.push(parent);
            }
        }
        out
    }
}

fn collect_leaves(list: &[Constraint], path: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    for (i, c) in list.iter().enumerate() {
        path.push(i);
        if c.node.children.is_empty() {
            out.push(path.clone());
        } else {
            collect_leaves(&c.node.children, path, out);
        }
        path.pop();
    }
}

/// The constraint list of the node addressed by `path` (empty path: the virtual root).
fn list_at<'a>(roots: &'a mut Vec<Constraint>, path: &[usize]) -> &'a mut Vec<Constraint> {
    let mut list = roots;
    for &i in path {
        list = &mut list[i].node.children;
    }
    list
}

/// A sentence's tokens, POS tags and dependency tree.
pub struct TreeView<'a> {
    tokens: &'a [String],
    pos: Option<&'a [String]>,
    tree: Cow<'a, ParseTree>,
    /// Preorder of token indices, so reversed iteration visits children first.
    order: Vec<usize>,
}

impl<'a> TreeView<'a> {
    pub fn of(sentence: &'a Sentence) -> Result<Self> {
        let tree = sentence
            .parse_tree()
            .ok_or(Error::MissingParse(sentence.id))?;
        Ok(Self::new(&sentence.tokens, sentence.pos_tags.as_deref(), Cow::Owned(tree)))
    }

    pub fn new(tokens: &'a [String], pos: Option<&'a [String]>, tree: Cow<'a, ParseTree>) -> Self {
        let order = if tokens.is_empty() {
            Vec::new()
        } else {
            let mut order = vec![tree.root];
            order.extend(tree.descendants(tree.root));
            order
        };
        TreeView {
            tokens,
            pos,
            tree,
            order,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Terminals that match token `t`: its form and its POS tag.
    pub fn terms(&self, t: usize) -> impl Iterator<Item = &str> {
        let form = self.tokens[t].as_str();
        let pos = self.pos.map(|p| p[t].as_str()).filter(|p| *p != form);
        std::iter::once(form).chain(pos)
    }

    fn term_matches(&self, term: &str, t: usize) -> bool {
        self.tokens[t] == term || self.pos.is_some_and(|p| p[t] == term)
    }

    /// `sat[t]`: the pattern subtree rooted at `node` embeds with `node` at token `t`.
    fn sat_set(&self, node: &PatternNode) -> Vec<bool> {
        let n = self.len();
        let mut sat: Vec<bool> = (0..n).map(|t| self.term_matches(&node.term, t)).collect();
        for c in &node.children {
            let child_sat = self.sat_set(&c.node);
            let reach = self.reachable_from_below(&child_sat, c.axis);
            for t in 0..n {
                sat[t] = sat[t] && reach[t];
            }
        }
        sat
    }

    /// `reach[t]`: some child (or proper descendant) of `t` is in `set`.
    fn reachable_from_below(&self, set: &[bool], axis: Axis) -> Vec<bool> {
        let n = self.len();
        let mut reach = vec![false; n];
        let mut below = vec![false; n];
        for &t in self.order.iter().rev() {
            for &c in &self.tree.children[t] {
                match axis {
                    Axis::Child => reach[t] |= set[c],
                    Axis::Descendant => reach[t] |= set[c] || below[c],
                }
                below[t] |= set[c] || below[c];
            }
        }
        reach
    }

    /// `reach[t]`: the head (or some proper ancestor) of `t` is in `set`.
    fn reachable_from_above(&self, set: &[bool], axis: Axis) -> Vec<bool> {
        let n = self.len();
        let mut reach = vec![false; n];
        let mut above = vec![false; n];
        for &t in &self.order {
            if let Some(h) = self.tree.heads[t] {
                above[t] = set[h] || above[h];
                reach[t] = match axis {
                    Axis::Child => set[h],
                    Axis::Descendant => above[t],
                };
            }
        }
        reach
    }

    fn collect_additions(
        &self,
        node: &PatternNode,
        feasible: &[bool],
        path: &mut Vec<usize>,
        out: &mut BTreeSet<(Vec<usize>, Axis, String)>,
    ) {
        for t in 0..self.len() {
            if !feasible[t] {
                continue;
            }
            for &c in &self.tree.children[t] {
                for term in self.terms(c) {
                    out.insert((path.clone(), Axis::Child, term.to_string()));
                }
            }
            for d in self.tree.descendants(t) {
                for term in self.terms(d) {
                    out.insert((path.clone(), Axis::Descendant, term.to_string()));
                }
            }
        }
        for (i, c) in node.children.iter().enumerate() {
            let sat = self.sat_set(&c.node);
            let from_parent = self.reachable_from_above(feasible, c.axis);
            let child_feasible: Vec<bool> = (0..self.len()).map(|t| sat[t] && from_parent[t]).collect();
            path.push(i);
            self.collect_additions(&c.node, &child_feasible, path, out);
            path.pop();
        }
    }

    fn witness(&self, node: &PatternNode, candidates: &[usize], hit: &mut BTreeSet<usize>) {
        let sat = self.sat_set(node);
        let Some(&t) = candidates.iter().find(|&&t| sat[t]) else {
            return;
        };
        hit.insert(t);
        for c in &node.children {
            let below: Vec<usize> = match c.axis {
                Axis::Child => self.tree.children[t].clone(),
                Axis::Descendant => self.tree.descendants(t),
            };
            self.witness(&c.node, &below, hit);
        }
    }
}

const SPECIAL: &[char] = &['/', '(', ')', '∧', '&', '\\', '*'];

fn write_term(out: &mut String, term: &str) {
    for c in term.chars() {
        if SPECIAL.contains(&c) {
            out.push('\\');
        }
        out.push(c);
    }
}

fn write_list(out: &mut String, list: &[Constraint], default: Axis) {
    for (i, c) in list.iter().enumerate() {
        if i > 0 {
            out.push_str(" ∧ ");
        }
        // a chain would absorb the siblings after it, so close it explicitly
        let paren = !c.node.children.is_empty() && i + 1 < list.len();
        if paren {
            out.push('(');
        }
        if c.axis != default {
            out.push_str(c.axis.symbol());
        }
        write_term(out, &c.node.term);
        if let Some(first) = c.node.children.first() {
            out.push_str(first.axis.symbol());
            write_list(out, &c.node.children, first.axis);
        }
        if paren {
            out.push(')');
        }
    }
}

impl fmt::Display for TreePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.roots.is_empty() {
            return f.write_char('*');
        }
        let mut out = String::new();
        write_list(&mut out, &self.roots, Axis::Descendant);
        f.write_str(&out)
    }
}

impl PartialOrd for TreePattern {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for TreePattern {
    fn cmp(&self, other: &Self) -> Ordering {
        self.canonical().cmp(&other.canonical())
    }
}

struct Parser {
    chars: Vec<(usize, char)>,
    i: usize,
    len: usize,
}

impl Parser {
    fn peek(&self) -> Option<char> {
        self.chars.get(self.i).map(|&(_, c)| c)
    }

    fn peek_at(&self) -> Option<(usize, char)> {
        self.chars.get(self.i).copied()
    }

    fn position(&self) -> usize {
        self.chars.get(self.i).map_or(self.len, |&(p, _)| p)
    }

    fn skip_ws(&mut self) {
        while self.peek().is_some_and(char::is_whitespace) {
            self.i += 1;
        }
    }

    fn error(&self, message: impl Into<String>) -> Error {
        Error::Syntax {
            position: self.position(),
            message: message.into(),
        }
    }

    fn axis(&mut self) -> Option<Axis> {
        if self.peek() != Some('/') {
            return None;
        }
        self.i += 1;
        if self.peek() == Some('/') {
            self.i += 1;
            Some(Axis::Descendant)
        } else {
            Some(Axis::Child)
        }
    }

    fn list(&mut self, default: Axis) -> Result<Vec<Constraint>> {
        let mut items = self.item(default)?;
        loop {
            self.skip_ws();
            match self.peek() {
                Some('∧') | Some('&') => {
                    self.i += 1;
                    items.extend(self.item(default)?);
                }
                _ => return Ok(items),
            }
        }
    }

    fn group(&mut self, default: Axis) -> Result<Vec<Constraint>> {
        self.i += 1;
        let items = self.list(default)?;
        self.skip_ws();
        if self.peek() != Some(')') {
            return Err(self.error("expected ')'"));
        }
        self.i += 1;
        Ok(items)
    }

    fn item(&mut self, default: Axis) -> Result<Vec<Constraint>> {
        self.skip_ws();
        if self.peek() == Some('(') {
            return self.group(default);
        }
        let axis = self.axis().unwrap_or(default);
        self.skip_ws();
        if self.peek() == Some('(') {
            return self.group(axis);
        }
        let term = self.term()?;
        self.skip_ws();
        let children = match self.axis() {
            Some(a) => self.list(a)?,
            None => Vec::new(),
        };
        Ok(vec![Constraint {
            axis,
            node: PatternNode { term, children },
        }])
    }

    fn term(&mut self) -> Result<String> {
        let mut term = String::new();
        while let Some(c) = self.peek() {
            if c.is_whitespace() || (SPECIAL.contains(&c) && c != '\\') {
                break;
            }
            self.i += 1;
            if c == '\\' {
                match self.peek() {
                    Some(next) => {
                        term.push(next);
                        self.i += 1;
                    }
                    None => return Err(self.error("dangling escape")),
                }
            } else {
                term.push(c);
            }
        }
        if term.is_empty() {
            return Err(self.error("expected a term"));
        }
        Ok(term)
    }
}
