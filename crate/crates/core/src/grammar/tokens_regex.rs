//! Token-sequence patterns: literal runs separated by `+` (one or more tokens)
//! or `*` (zero or more tokens) gaps, matched anywhere in a sentence.

use std::cmp::Ordering;
use std::fmt;

use crate::error::{Error, Result};

/// Separates elements in the canonical form; sorts below every token character.
pub(crate) const SEP: char = '\u{1f}';
/// Marks a gap element in the canonical form; sorts below every token character.
const GAP_MARK: char = '\u{1e}';

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Gap {
    /// Zero or more tokens.
    Star,
    /// One or more tokens.
    Plus,
}

impl Gap {
    pub fn symbol(self) -> char {
        match self {
            Gap::Star => '*',
            Gap::Plus => '+',
        }
    }
}

/// Gaps order before literals so element-wise order equals canonical string order.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Element {
    Gap(Gap),
    Literal(String),
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Hash)]
pub struct TokensPattern {
    elements: Vec<Element>,
}

impl TokensPattern {
    /// The pattern `*`, matching every sentence.
    pub fn root() -> Self {
        TokensPattern::default()
    }

    /// Builds a pattern, rejecting leading, trailing, or adjacent gaps.
    pub fn new(elements: Vec<Element>) -> Result<Self> {
        for (i, el) in elements.iter().enumerate() {
            if let Element::Gap(_) = el {
                let bad = i == 0
                    || i + 1 == elements.len()
                    || matches!(elements[i - 1], Element::Gap(_));
                if bad {
                    return Err(Error::Syntax {
                        position: i,
                        message: "gaps must sit between literals".into(),
                    });
                }
            }
            if let Element::Literal(t) = el {
                if t.is_empty() || t.chars().any(|c| c.is_whitespace() || c.is_control()) {
                    return Err(Error::Syntax {
                        position: i,
                        message: format!("invalid literal {t:?}"),
                    });
                }
            }
        }
        Ok(TokensPattern { elements })
    }

    pub fn literals<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        TokensPattern {
            elements: tokens
                .into_iter()
                .map(|t| Element::Literal(t.into()))
                .collect(),
        }
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn is_root(&self) -> bool {
        self.elements.is_empty()
    }

    /// Derivation length: one rule application per element.
    pub fn depth(&self) -> usize {
        self.elements.len()
    }

    pub fn gap_count(&self) -> usize {
        self.elements
            .iter()
            .filter(|e| matches!(e, Element::Gap(_)))
            .count()
    }

    /// Appends one literal, optionally preceded by a gap.
    pub fn extended(&self, gap: Option<Gap>, literal: &str) -> Self {
        let mut elements = self.elements.clone();
        if let Some(g) = gap {
            if !elements.is_empty() {
                elements.push(Element::Gap(g));
            }
        }
        elements.push(Element::Literal(literal.to_string()));
        TokensPattern { elements }
    }

    /// The pattern with its last derivation step (a literal and any gap before it) removed.
    pub fn parent(&self) -> Option<Self> {
        if self.elements.is_empty() {
            return None;
        }
        let mut elements = self.elements.clone();
        elements.pop();
        if matches!(elements.last(), Some(Element::Gap(_))) {
            elements.pop();
        }
        Some(TokensPattern { elements })
    }

    pub fn canonical(&self) -> String {
        let mut out = String::new();
        for (i, el) in self.elements.iter().enumerate() {
            if i > 0 {
                out.push(SEP);
            }
            match el {
                Element::Literal(t) => out.push_str(t),
                Element::Gap(g) => {
                    out.push(GAP_MARK);
                    out.push(g.symbol());
                }
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let trimmed = text.trim();
        if trimmed.is_empty() {
            return Err(Error::Syntax {
                position: 0,
                message: "empty pattern (use `*` for the root pattern)".into(),
            });
        }
        if trimmed == "*" {
            return Ok(Self::root());
        }
        let mut elements = Vec::new();
        let mut positions = Vec::new();
        let mut offset = 0;
        for word in text.split(' ') {
            let start = offset;
            offset += word.len() + 1;
            if word.is_empty() {
                continue;
            }
            let el = match word {
                "*" => Element::Gap(Gap::Star),
                "+" => Element::Gap(Gap::Plus),
                _ => Element::Literal(unescape(word, start)?.to_lowercase()),
            };
            elements.push(el);
            positions.push(start);
        }
        TokensPattern::new(elements).map_err(|e| match e {
            Error::Syntax { position, message } => Error::Syntax {
                position: positions[position],
                message,
            },
            other => other,
        })
    }

    pub fn matches(&self, tokens: &[String]) -> bool {
        if self.elements.is_empty() {
            return true;
        }
        let n = tokens.len();
        // cur[p]: the elements consumed so far can end at position p
        let mut cur = vec![true; n + 1];
        let mut next = vec![false; n + 1];
        for el in &self.elements {
            next.iter_mut().for_each(|x| *x = false);
            match el {
                Element::Literal(v) => {
                    for e in 0..n {
                        if cur[e] && tokens[e] == *v {
                            next[e + 1] = true;
                        }
                    }
                }
                Element::Gap(g) => {
                    let min = match g {
                        Gap::Star => 0,
                        Gap::Plus => 1,
                    };
                    let mut seen = false;
                    for k in 0..=n {
                        if k >= min && cur[k - min] {
                            seen = true;
                        }
                        next[k] = seen;
                    }
                }
            }
            std::mem::swap(&mut cur, &mut next);
            if !cur.iter().any(|&x| x) {
                return false;
            }
        }
        true
    }

    /// Token ranges `[start, end)` of the literal runs in the leftmost match.
    pub fn match_spans(&self, tokens: &[String]) -> Option<Vec<(usize, usize)>> {
        if self.elements.is_empty() {
            return Some(Vec::new());
        }
        let n = tokens.len();
        let m = self.elements.len();
        let mut failed = vec![false; (m + 1) * (n + 1)];
        for start in 0..n {
            let mut positions = Vec::with_capacity(m);
            if self.search(tokens, 0, start, &mut positions, &mut failed) {
                return Some(runs(&positions));
            }
        }
        None
    }

    fn search(
        &self,
        tokens: &[String],
        i: usize,
        pos: usize,
        out: &mut Vec<usize>,
        failed: &mut [bool],
    ) -> bool {
        if i == self.elements.len() {
            return true;
        }
        let n = tokens.len();
        let slot = i * (n + 1) + pos;
        if failed[slot] {
            return false;
        }
        let found = match &self.elements[i] {
            Element::Literal(v) => {
                if pos < n && tokens[pos] == *v {
                    out.push(pos);
                    let ok = self.search(tokens, i + 1, pos + 1, out, failed);
                    if !ok {
                        out.pop();
                    }
                    ok
                } else {
                    false
                }
            }
            Element::Gap(g) => {
                let min = if *g == Gap::Plus { 1 } else { 0 };
                (pos + min..=n).any(|k| self.search(tokens, i + 1, k, out, failed))
            }
        };
        if !found {
            failed[slot] = true;
        }
        found
    }
}

fn runs(positions: &[usize]) -> Vec<(usize, usize)> {
    let mut out: Vec<(usize, usize)> = Vec::new();
    for &p in positions {
        match out.last_mut() {
            Some((_, end)) if *end == p => *end = p + 1,
            _ => out.push((p, p + 1)),
        }
    }
    out
}

fn escape(token: &str) -> String {
    if token == "*" || token == "+" {
        return format!("\\{token}");
    }
    if token.starts_with('\\') {
        return format!("\\{token}");
    }
    token.to_string()
}

fn unescape(word: &str, position: usize) -> Result<String> {
    match word.strip_prefix('\\') {
        Some("") => Err(Error::Syntax {
            position,
            message: "dangling escape".into(),
        }),
        Some(rest) => Ok(rest.to_string()),
        None => Ok(word.to_string()),
    }
}

impl fmt::Display for TokensPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.elements.is_empty() {
            return f.write_str("*");
        }
        for (i, el) in self.elements.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            match el {
                Element::Literal(t) => f.write_str(&escape(t))?,
                Element::Gap(g) => write!(f, "{}", g.symbol())?,
            }
        }
        Ok(())
    }
}

impl PartialOrd for TokensPattern {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Element-wise order, which coincides with the order of canonical strings.
impl Ord for TokensPattern {
    fn cmp(&self, other: &Self) -> Ordering {
        self.elements.cmp(&other.elements)
    }
}
