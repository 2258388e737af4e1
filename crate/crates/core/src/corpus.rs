//! Sentence corpora: tokenization, JSONL / CoNLL-U ingestion and serialization.
//!
//! Sentences are addressed internally by their dense position in the corpus
//! ([`DocId`]); the external `id` from the input file is kept on the sentence
//! and used in every export.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use fixedbitset::FixedBitSet;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense position of a sentence inside its corpus.
pub type DocId = u32;

/// A set of sentences, keyed by [`DocId`].
pub type DocSet = FixedBitSet;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    Jsonl,
    Conllu,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(CorpusFormat::Jsonl),
            "conllu" => Ok(CorpusFormat::Conllu),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sentence {
    pub id: u64,
    pub raw_text: String,
    pub tokens: Vec<String>,
    pub pos_tags: Option<Vec<String>>,
    /// `(head_index, child_index)` pairs over token positions.
    pub dep_edges: Option<Vec<(usize, usize)>>,
    pub gold_label: Option<bool>,
}

impl Sentence {
    pub fn new(id: u64, raw_text: impl Into<String>) -> Self {
        let raw_text = raw_text.into();
        let tokens = tokenize(&raw_text);
        Sentence {
            id,
            raw_text,
            tokens,
            pos_tags: None,
            dep_edges: None,
            gold_label: None,
        }
    }

    pub fn with_label(mut self, label: bool) -> Self {
        self.gold_label = Some(label);
        self
    }

    pub fn with_parse(mut self, pos_tags: Vec<String>, dep_edges: Vec<(usize, usize)>) -> Self {
        self.pos_tags = Some(pos_tags);
        self.dep_edges = Some(dep_edges);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(pos) = &self.pos_tags {
            if pos.len() != self.tokens.len() {
                return Err(Error::InvalidTree {
                    id: self.id,
                    message: format!(
                        "{} POS tags for {} tokens",
                        pos.len(),
                        self.tokens.len()
                    ),
                });
            }
        }
        if let Some(edges) = &self.dep_edges {
            validate_tree(self.tokens.len(), edges).map_err(|message| Error::InvalidTree {
                id: self.id,
                message,
            })?;
        }
        Ok(())
    }

    /// The dependency tree, if the sentence carries one.
    pub fn parse_tree(&self) -> Option<ParseTree> {
        self.dep_edges
            .as_ref()
            .map(|edges| ParseTree::from_edges(self.tokens.len(), edges))
    }
}

/// Adjacency view of a validated dependency tree.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseTree {
    pub root: usize,
    pub heads: Vec<Option<usize>>,
    pub children: Vec<Vec<usize>>,
}

impl ParseTree {
    /// Builds the adjacency view. `edges` must already satisfy [`validate_tree`].
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut heads = vec![None; n];
        let mut children = vec![Vec::new(); n];
        for &(h, c) in edges {
            heads[c] = Some(h);
            children[h].push(c);
        }
        for list in &mut children {
            list.sort_unstable();
        }
        let root = heads.iter().position(Option::is_none).unwrap_or(0);
        ParseTree {
            root,
            heads,
            children,
        }
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    /// Proper descendants of `node` in preorder.
    pub fn descendants(&self, node: usize) -> Vec<usize> {
        let mut out = Vec::new();
        let mut stack: Vec<usize> = self.children[node].iter().rev().copied().collect();
        while let Some(n) = stack.pop() {
            out.push(n);
            stack.extend(self.children[n].iter().rev().copied());
        }
        out
    }
}

/// Checks that `edges` forms a single rooted tree over `n` tokens.
pub fn validate_tree(n: usize, edges: &[(usize, usize)]) -> std::result::Result<(), String> {
    if n == 0 {
        return if edges.is_empty() {
            Ok(())
        } else {
            Err("edges on an empty sentence".into())
        };
    }
    let mut heads: Vec<Option<usize>> = vec![None; n];
    for &(h, c) in edges {
        if h >= n || c >= n {
            return Err(format!("edge ({h}, {c}) out of range for {n} tokens"));
        }
        if h == c {
            return Err(format!("token {c} is its own head"));
        }
        if heads[c].replace(h).is_some() {
            return Err(format!("token {c} has more than one head"));
        }
    }
    let roots = heads.iter().filter(|h| h.is_none()).count();
    if roots != 1 {
        return Err(format!("expected exactly one root, found {roots}"));
    }
    for start in 0..n {
        let mut cur = start;
        let mut steps = 0;
        while let Some(h) = heads[cur] {
            cur = h;
            steps += 1;
            if steps > n {
                return Err(format!("cycle through token {start}"));
            }
        }
    }
    Ok(())
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '¡' | '¿' | '«' | '»' | '‘' | '’' | '“' | '”' | '…' | '–' | '—' | '·' | '„' | '‹' | '›'
        )
}

/// Lowercases and splits on whitespace, separating leading and trailing
/// punctuation characters into their own tokens. Control characters count
/// as whitespace.
pub fn tokenize(raw_text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in raw_text.split(|c: char| c.is_whitespace() || c.is_control()) {
        if chunk.is_empty() {
            continue;
        }
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        let mut end = chars.len();
        while start < end && is_punct(chars[start]) {
            start += 1;
        }
        while end > start && is_punct(chars[end - 1]) {
            end -= 1;
        }
        for c in &chars[..start] {
            out.push(c.to_lowercase().collect());
        }
        if start < end {
            out.push(chars[start..end].iter().flat_map(|c| c.to_lowercase()).collect());
        }
        for c in &chars[end..] {
            out.push(c.to_lowercase().collect());
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Default)]
pub struct Corpus {
    sentences: Vec<Sentence>,
    vocab: BTreeSet<String>,
    pos_vocab: BTreeSet<String>,
    by_id: HashMap<u64, DocId>,
}

impl Corpus {
    pub fn new(sentences: Vec<Sentence>) -> Result<Self> {
        let mut vocab = BTreeSet::new();
        let mut pos_vocab = BTreeSet::new();
        let mut by_id = HashMap::with_capacity(sentences.len());
        for (i, s) in sentences.iter().enumerate() {
            s.validate()?;
            if by_id.insert(s.id, i as DocId).is_some() {
                return Err(Error::DuplicateId(s.id));
            }
            vocab.extend(s.tokens.iter().cloned());
            if let Some(pos) = &s.pos_tags {
                pos_vocab.extend(pos.iter().cloned());
            }
        }
        Ok(Corpus {
            sentences,
            vocab,
            pos_vocab,
            by_id,
        })
    }

    pub fn sentences(&self) -> &[Sentence] {
        &self.sentences
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn get(&self, doc: DocId) -> &Sentence {
        &self.sentences[doc as usize]
    }

    pub fn doc_of(&self, id: u64) -> Option<DocId> {
        self.by_id.get(&id).copied()
    }

    /// All token strings.
    pub fn vocab(&self) -> &BTreeSet<String> {
        &self.vocab
    }

    /// POS tags seen in the corpus.
    pub fn pos_vocab(&self) -> &BTreeSet<String> {
        &self.pos_vocab
    }

    /// Terminals of the tree grammar: tokens and POS tags.
    pub fn terminals(&self) -> BTreeSet<String> {
        self.vocab.union(&self.pos_vocab).cloned().collect()
    }

    pub fn empty_set(&self) -> DocSet {
        FixedBitSet::with_capacity(self.len())
    }

    pub fn has_gold(&self) -> bool {
        !self.sentences.is_empty() && self.sentences.iter().all(|s| s.gold_label.is_some())
    }

    /// Gold positives, or an error when any sentence lacks a label.
    pub fn gold_positives(&self) -> Result<DocSet> {
        let mut set = self.empty_set();
        for (i, s) in self.sentences.iter().enumerate() {
            match s.gold_label {
                Some(true) => set.insert(i),
                Some(false) => {}
                None => return Err(Error::MissingGold),
            }
        }
        Ok(set)
    }

    pub fn ids(&self, docs: impl IntoIterator<Item = DocId>) -> Vec<u64> {
        docs.into_iter().map(|d| self.get(d).id).collect()
    }

    pub fn load(path: impl AsRef<Path>, format: CorpusFormat) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = BufReader::new(file);
        match format {
            CorpusFormat::Jsonl => Self::read_jsonl(reader),
            CorpusFormat::Conllu => Self::read_conllu(reader),
        }
    }

    pub fn read_jsonl(reader: impl BufRead) -> Result<Self> {
        let mut sentences = Vec::new();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
            if line.trim().is_empty() {
                continue;
            }
            let record: JsonRecord = serde_json::from_str(&line).map_err(|e| Error::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
            let sentence = record
                .into_sentence()
                .map_err(|message| Error::Malformed {
                    line: lineno,
                    message,
                })?;
            sentences.push(sentence);
        }
        Corpus::new(sentences)
    }

    pub fn read_conllu(reader: impl BufRead) -> Result<Self> {
        let mut sentences = Vec::new();
        let mut block = ConlluBlock::default();
        for (i, line) in reader.lines().enumerate() {
            let lineno = i + 1;
            let line = line.map_err(|e| Error::Malformed {
                line: lineno,
                message: e.to_string(),
            })?;
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() {
                if let Some(s) = block.finish(sentences.len())? {
                    sentences.push(s);
                }
                continue;
            }
            if let Some(comment) = line.strip_prefix('#') {
                block.comment(comment, lineno)?;
                continue;
            }
            block.token_line(line, lineno)?;
        }
        if let Some(s) = block.finish(sentences.len())? {
            sentences.push(s);
        }
        Corpus::new(sentences)
    }

    pub fn write_jsonl(&self, mut writer: impl Write) -> Result<()> {
        for s in &self.sentences {
            let record = JsonRecord::from_sentence(s);
            serde_json::to_writer(&mut writer, &record)?;
            writer
                .write_all(b"\n")
                .map_err(|e| Error::io("<writer>", e))?;
        }
        Ok(())
    }

    pub fn save_jsonl(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct JsonRecord {
    id: u64,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    tokens: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pos: Option<Vec<String>>,
    /// 1-based head per token, 0 for the root (CoNLL-U convention).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    heads: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<bool>,
}

impl JsonRecord {
    fn into_sentence(self) -> std::result::Result<Sentence, String> {
        let tokens = match self.tokens {
            Some(tokens) => {
                let mut out = Vec::with_capacity(tokens.len());
                for t in tokens {
                    if t.is_empty() || t.chars().any(|c| c.is_whitespace() || c.is_control()) {
                        return Err(format!("invalid token {t:?}"));
                    }
                    out.push(t.to_lowercase());
                }
                out
            }
            None => tokenize(&self.text),
        };
        if let Some(pos) = &self.pos {
            if pos.len() != tokens.len() {
                return Err(format!(
                    "{} POS tags for {} tokens",
                    pos.len(),
                    tokens.len()
                ));
            }
        }
        let dep_edges = match self.heads {
            Some(heads) => {
                if heads.len() != tokens.len() {
                    return Err(format!("{} heads for {} tokens", heads.len(), tokens.len()));
                }
                let edges: Vec<(usize, usize)> = heads
                    .iter()
                    .enumerate()
                    .filter(|(_, &h)| h > 0)
                    .map(|(c, &h)| (h - 1, c))
                    .collect();
                validate_tree(tokens.len(), &edges)?;
                Some(edges)
            }
            None => None,
        };
        Ok(Sentence {
            id: self.id,
            raw_text: self.text,
            tokens,
            pos_tags: self.pos,
            dep_edges,
            gold_label: self.label,
        })
    }

    fn from_sentence(s: &Sentence) -> Self {
        let heads = s.dep_edges.as_ref().map(|edges| {
            let mut heads = vec![0usize; s.tokens.len()];
            for &(h, c) in edges {
                heads[c] = h + 1;
            }
            heads
        });
        JsonRecord {
            id: s.id,
            text: s.raw_text.clone(),
            tokens: Some(s.tokens.clone()),
            pos: s.pos_tags.clone(),
            heads,
            label: s.gold_label,
        }
    }
}

#[derive(Default)]
struct ConlluBlock {
    id: Option<u64>,
    text: Option<String>,
    label: Option<bool>,
    forms: Vec<String>,
    upos: Vec<String>,
    heads: Vec<usize>,
}

impl ConlluBlock {
    fn comment(&mut self, comment: &str, line: usize) -> Result<()> {
        let Some((key, value)) = comment.split_once('=') else {
            return Ok(());
        };
        let value = value.trim();
        match key.trim() {
            "sent_id" => {
                self.id = value.parse().ok();
            }
            "text" => self.text = Some(value.to_string()),
            "label" => {
                self.label = Some(match value {
                    "true" => true,
                    "false" => false,
                    other => {
                        return Err(Error::Malformed {
                            line,
                            message: format!("label must be true or false, got {other:?}"),
                        })
                    }
                })
            }
            _ => {}
        }
        Ok(())
    }

    fn token_line(&mut self, line: &str, lineno: usize) -> Result<()> {
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 10 {
            return Err(Error::Malformed {
                line: lineno,
                message: format!("expected 10 tab-separated columns, found {}", cols.len()),
            });
        }
        // multiword ranges and empty nodes carry no head
        if cols[0].contains('-') || cols[0].contains('.') {
            return Ok(());
        }
        let head: usize = cols[6].parse().map_err(|_| Error::Malformed {
            line: lineno,
            message: format!("HEAD column is not an integer: {:?}", cols[6]),
        })?;
        self.forms.push(cols[1].to_lowercase());
        self.upos.push(cols[3].to_string());
        self.heads.push(head);
        Ok(())
    }

    fn finish(&mut self, index: usize) -> Result<Option<Sentence>> {
        let block = std::mem::take(self);
        if block.forms.is_empty() {
            return Ok(None);
        }
        let id = block.id.unwrap_or(index as u64 + 1);
        let n = block.forms.len();
        let mut edges = Vec::with_capacity(n);
        for (c, &h) in block.heads.iter().enumerate() {
            if h > n {
                return Err(Error::InvalidTree {
                    id,
                    message: format!("head {h} out of range for {n} tokens"),
                });
            }
            if h > 0 {
                edges.push((h - 1, c));
            }
        }
        validate_tree(n, &edges).map_err(|message| Error::InvalidTree { id, message })?;
        let raw_text = block.text.unwrap_or_else(|| block.forms.join(" "));
        Ok(Some(Sentence {
            id,
            raw_text,
            tokens: block.forms,
            pos_tags: Some(block.upos),
            dep_edges: Some(edges),
            gold_label: block.label,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("Shuttle to SFO?"), vec!["shuttle", "to", "sfo", "?"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("best way to get to the city").len(), 7);
        assert_eq!(
            tokenize("What is the best way to get to the city?").len(),
            11
        );
        assert_eq!(tokenize("\"Hi!\" don't"), vec!["\"", "hi", "!", "\"", "don't"]);
    }

    #[test]
    fn jsonl_record_with_label() {
        let input = r#"{"id":1,"text":"What is the best way to get to the city?","label":true}"#;
        let corpus = Corpus::read_jsonl(input.as_bytes()).unwrap();
        assert_eq!(corpus.len(), 1);
        let s = corpus.get(0);
        assert_eq!(s.tokens.len(), 11);
        assert_eq!(s.gold_label, Some(true));
    }

    #[test]
    fn empty_jsonl_is_empty_corpus() {
        let corpus = Corpus::read_jsonl("".as_bytes()).unwrap();
        assert!(corpus.is_empty());
        assert!(!corpus.has_gold());
    }

    #[test]
    fn malformed_jsonl_names_line() {
        let input = "{\"id\":1,\"text\":\"a\"}\n{\"id\":2,\"text\":\n";
        match Corpus::read_jsonl(input.as_bytes()) {
            Err(Error::Malformed { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let input = "{\"id\":1,\"text\":\"a\"}\n{\"id\":1,\"text\":\"b\"}\n";
        assert!(matches!(
            Corpus::read_jsonl(input.as_bytes()),
            Err(Error::DuplicateId(1))
        ));
    }

    const CONLLU: &str = "# sent_id = 7
# text = The job is a good one
# label = true
1\tThe\tthe\tDET\t_\t_\t2\tdet\t_\t_
2\tjob\tjob\tNOUN\t_\t_\t3\tnsubj\t_\t_
3\tis\tbe\tAUX\t_\t_\t0\troot\t_\t_
4\ta\ta\tDET\t_\t_\t6\tdet\t_\t_
5\tgood\tgood\tADJ\t_\t_\t6\tamod\t_\t_
6\tone\tone\tNOUN\t_\t_\t3\tattr\t_\t_

";

    #[test]
    fn conllu_heads_reconstruct_tree() {
        let corpus = Corpus::read_conllu(CONLLU.as_bytes()).unwrap();
        let s = corpus.get(0);
        assert_eq!(s.id, 7);
        assert_eq!(s.gold_label, Some(true));
        assert_eq!(s.tokens, vec!["the", "job", "is", "a", "good", "one"]);
        // hand trace of the HEAD column: 2 3 0 6 6 3
        let mut edges = s.dep_edges.clone().unwrap();
        edges.sort();
        assert_eq!(edges, vec![(1, 0), (2, 1), (2, 5), (5, 3), (5, 4)]);
        let tree = s.parse_tree().unwrap();
        assert_eq!(tree.root, 2);
        assert_eq!(tree.children[2], vec![1, 5]);
        assert_eq!(tree.descendants(2), vec![1, 0, 5, 3, 4]);
    }

    #[test]
    fn conllu_cycle_names_sentence() {
        let bad = "# sent_id = 9
1\ta\ta\tDET\t_\t_\t2\tdet\t_\t_
2\tb\tb\tNOUN\t_\t_\t1\tnsubj\t_\t_
3\tc\tc\tVERB\t_\t_\t0\troot\t_\t_

";
        match Corpus::read_conllu(bad.as_bytes()) {
            Err(Error::InvalidTree { id, .. }) => assert_eq!(id, 9),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn conllu_short_line_names_line() {
        let bad = "1\ta\ta\n";
        assert!(matches!(
            Corpus::read_conllu(bad.as_bytes()),
            Err(Error::Malformed { line: 1, .. })
        ));
    }

    #[test]
    fn tree_validation() {
        assert!(validate_tree(3, &[(0, 1), (0, 2)]).is_ok());
        assert!(validate_tree(3, &[(0, 1)]).is_err());
        assert!(validate_tree(3, &[(0, 1), (1, 2), (2, 0)]).is_err());
        assert!(validate_tree(2, &[(0, 1), (0, 1)]).is_err());
    }

    #[test]
    fn conllu_round_trip_through_jsonl() {
        let corpus = Corpus::read_conllu(CONLLU.as_bytes()).unwrap();
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf).unwrap();
        let again = Corpus::read_jsonl(buf.as_slice()).unwrap();
        assert_eq!(corpus, again);
        assert!(again.pos_vocab().contains("NOUN"));
        assert!(again.terminals().contains("NOUN"));
    }

    proptest! {
        #[test]
        fn tokenize_idempotent(text in "[a-zA-Z0-9 ,.?!'\"()éİ¿…-]{0,40}") {
            let once = tokenize(&text);
            let twice = tokenize(&once.join(" "));
            prop_assert_eq!(once, twice);
        }

        #[test]
        fn jsonl_round_trip(texts in proptest::collection::vec("[a-zA-Z ,.?]{0,30}", 0..8),
                            labels in proptest::collection::vec(proptest::option::of(any::<bool>()), 8)) {
            let sentences: Vec<Sentence> = texts
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    let mut s = Sentence::new(i as u64 * 3 + 1, t.clone());
                    s.gold_label = labels[i];
                    s
                })
                .collect();
            let corpus = Corpus::new(sentences).unwrap();
            let mut buf = Vec::new();
            corpus.write_jsonl(&mut buf).unwrap();
            let again = Corpus::read_jsonl(buf.as_slice()).unwrap();
            prop_assert_eq!(corpus, again);
        }
    }
}
