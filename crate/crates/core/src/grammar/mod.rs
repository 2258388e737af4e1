//! Heuristic grammars and the heuristics (bounded derivations) they define.
//!
//! Adding a grammar means adding a [`GrammarId`] variant, a pattern type with
//! parse / display / canonical / matches, and a [`Heuristic`] variant.

pub mod tokens_regex;
pub mod tree_match;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::corpus::Sentence;
use crate::error::{Error, Result};

pub use tokens_regex::{Element, Gap, TokensPattern};
pub use tree_match::{Axis, Constraint, PatternNode, TreePattern, TreeView};

pub const DEFAULT_MAX_DEPTH: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GrammarId {
    TokensRegex,
    TreeMatch,
}

impl GrammarId {
    pub fn as_str(self) -> &'static str {
        match self {
            GrammarId::TokensRegex => "tokens_regex",
            GrammarId::TreeMatch => "tree_match",
        }
    }
}

impl fmt::Display for GrammarId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for GrammarId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tokens_regex" => Ok(GrammarId::TokensRegex),
            "tree_match" => Ok(GrammarId::TreeMatch),
            other => Err(Error::Config(format!("unknown grammar {other:?}"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grammar {
    pub id: GrammarId,
    pub max_depth: usize,
    /// Gaps per pattern enumerated by the token index; wider gap patterns
    /// are still accepted by `matches`.
    pub max_gaps: usize,
}

impl Grammar {
    pub fn tokens_regex() -> Self {
        Grammar {
            id: GrammarId::TokensRegex,
            max_depth: DEFAULT_MAX_DEPTH,
            max_gaps: 1,
        }
    }

    pub fn tree_match() -> Self {
        Grammar {
            id: GrammarId::TreeMatch,
            max_depth: DEFAULT_MAX_DEPTH,
            max_gaps: 0,
        }
    }

    pub fn new(id: GrammarId) -> Self {
        match id {
            GrammarId::TokensRegex => Self::tokens_regex(),
            GrammarId::TreeMatch => Self::tree_match(),
        }
    }

    pub fn with_max_depth(mut self, max_depth: usize) -> Self {
        self.max_depth = max_depth;
        self
    }

    pub fn with_max_gaps(mut self, max_gaps: usize) -> Self {
        self.max_gaps = max_gaps;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_depth == 0 {
            return Err(Error::Config("max_depth must be at least 1".into()));
        }
        Ok(())
    }

    pub fn root(&self) -> Heuristic {
        match self.id {
            GrammarId::TokensRegex => Heuristic::Tokens(TokensPattern::root()),
            GrammarId::TreeMatch => Heuristic::Tree(TreePattern::root()),
        }
    }

    /// Parses the surface syntax, enforcing the depth bound.
    pub fn parse(&self, text: &str) -> Result<Heuristic> {
        let h = Heuristic::parse(text, self.id)?;
        if h.depth() > self.max_depth {
            return Err(Error::DepthExceeded {
                depth: h.depth(),
                max_depth: self.max_depth,
            });
        }
        Ok(h)
    }
}

pub fn parse_heuristic(text: &str, grammar: &Grammar) -> Result<Heuristic> {
    grammar.parse(text)
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub enum Heuristic {
    Tokens(TokensPattern),
    Tree(TreePattern),
}

impl Heuristic {
    /// Parses without a depth bound.
    pub fn parse(text: &str, grammar: GrammarId) -> Result<Self> {
        match grammar {
            GrammarId::TokensRegex => TokensPattern::parse(text).map(Heuristic::Tokens),
            GrammarId::TreeMatch => TreePattern::parse(text).map(Heuristic::Tree),
        }
    }

    pub fn grammar_id(&self) -> GrammarId {
        match self {
            Heuristic::Tokens(_) => GrammarId::TokensRegex,
            Heuristic::Tree(_) => GrammarId::TreeMatch,
        }
    }

    pub fn is_root(&self) -> bool {
        match self {
            Heuristic::Tokens(p) => p.is_root(),
            Heuristic::Tree(p) => p.is_root(),
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            Heuristic::Tokens(p) => p.depth(),
            Heuristic::Tree(p) => p.depth(),
        }
    }

    pub fn canonical(&self) -> String {
        match self {
            Heuristic::Tokens(p) => p.canonical(),
            Heuristic::Tree(p) => p.canonical(),
        }
    }

    pub fn display(&self) -> String {
        self.to_string()
    }

    pub fn matches(&self, sentence: &Sentence) -> Result<bool> {
        match self {
            Heuristic::Tokens(p) => Ok(p.matches(&sentence.tokens)),
            Heuristic::Tree(p) => p.matches(sentence),
        }
    }

    /// Token ranges `[start, end)` of one match, for highlighting.
    pub fn match_spans(&self, sentence: &Sentence) -> Result<Option<Vec<(usize, usize)>>> {
        match self {
            Heuristic::Tokens(p) => Ok(p.match_spans(&sentence.tokens)),
            Heuristic::Tree(p) => p.match_spans(sentence),
        }
    }

    /// Heuristics one derivation step above (supersets by construction).
    pub fn parents(&self) -> Vec<Heuristic> {
        match self {
            Heuristic::Tokens(p) => p.parent().map(Heuristic::Tokens).into_iter().collect(),
            Heuristic::Tree(p) => p.parents().into_iter().map(Heuristic::Tree).collect(),
        }
    }
}

impl fmt::Display for Heuristic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Heuristic::Tokens(p) => p.fmt(f),
            Heuristic::Tree(p) => p.fmt(f),
        }
    }
}

impl PartialOrd for Heuristic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Grammar first, then canonical form.
impl Ord for Heuristic {
    fn cmp(&self, other: &Self) -> Ordering {
        match (self, other) {
            (Heuristic::Tokens(a), Heuristic::Tokens(b)) => a.cmp(b),
            (Heuristic::Tree(a), Heuristic::Tree(b)) => a.cmp(b),
            (Heuristic::Tokens(_), Heuristic::Tree(_)) => Ordering::Less,
            (Heuristic::Tree(_), Heuristic::Tokens(_)) => Ordering::Greater,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeuristicJson {
    grammar: GrammarId,
    #[serde(default)]
    canonical: String,
    display: String,
}

/// Serialized as `{grammar, canonical, display}`; deserialized from `display`.
impl Serialize for Heuristic {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        HeuristicJson {
            grammar: self.grammar_id(),
            canonical: self.canonical(),
            display: self.to_string(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for Heuristic {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let json = HeuristicJson::deserialize(d)?;
        Heuristic::parse(&json.display, json.grammar).map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn depth_bound_enforced() {
        let g = Grammar::tokens_regex().with_max_depth(2);
        assert!(g.parse("best way").is_ok());
        assert!(matches!(
            g.parse("best way to"),
            Err(Error::DepthExceeded { depth: 3, max_depth: 2 })
        ));
        assert!(Grammar::tokens_regex().with_max_depth(0).validate().is_err());
    }

    #[test]
    fn json_round_trip() {
        for (text, id) in [
            ("best + way", GrammarId::TokensRegex),
            ("/is/NOUN ∧ job", GrammarId::TreeMatch),
        ] {
            let h = Heuristic::parse(text, id).unwrap();
            let json = serde_json::to_string(&h).unwrap();
            let back: Heuristic = serde_json::from_str(&json).unwrap();
            assert_eq!(back, h);
        }
    }

    #[test]
    fn canonical_equal_for_commuted_conjunction() {
        let a = Heuristic::parse("is/(NOUN ∧ job)", GrammarId::TreeMatch).unwrap();
        let b = Heuristic::parse("is/(job ∧ NOUN)", GrammarId::TreeMatch).unwrap();
        assert_eq!(a.canonical(), b.canonical());
        assert_eq!(a, b);
    }
}
