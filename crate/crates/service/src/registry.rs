//! On-disk layout shared by the CLI and the server:
//!
//! ```text
//! <root>/corpora/<name>/corpus.jsonl
//! <root>/corpora/<name>/info.json
//! <root>/corpora/<name>/index-<grammar>-d<depth>-g<gaps>.json
//! <root>/sessions/<id>/events.jsonl
//! <root>/sessions/<id>/checkpoint.json
//! ```

use std::path::{Path, PathBuf};

use rulemine::engine::write_json_atomic;
use rulemine::index::{build_index, SketchIndex};
use rulemine::{Corpus, Error, Grammar, Result};
use serde::{Deserialize, Serialize};

pub const DATA_ENV: &str = "RULEMINE_DATA";
pub const DEFAULT_DATA_DIR: &str = "rulemine-data";
const INFO_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub v: u32,
    pub name: String,
    pub sentences: usize,
    pub gold: bool,
    /// Every sentence carries a dependency parse.
    pub parses: bool,
}

impl CorpusInfo {
    pub fn of(name: &str, corpus: &Corpus) -> Self {
        CorpusInfo {
            v: INFO_VERSION,
            name: name.to_string(),
            sentences: corpus.len(),
            gold: corpus.has_gold(),
            parses: corpus.sentences().iter().all(|s| s.dep_edges.is_some()),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Registry {
    root: PathBuf,
}

fn io(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Corpus names double as directory names.
pub fn validate_name(name: &str) -> Result<()> {
    let ok = !name.is_empty()
        && name.len() <= 64
        && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "corpus name {name:?}: use 1-64 letters, digits, '-' or '_'"
        )))
    }
}

pub fn index_file_name(grammar: &Grammar) -> String {
    format!("index-{}-d{}-g{}.json", grammar.id, grammar.max_depth, grammar.max_gaps)
}

impl Registry {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self> {
        let root = root.into();
        for dir in [root.join("corpora"), root.join("sessions")] {
            std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        }
        Ok(Registry { root })
    }

    /// Opens the directory named by `RULEMINE_DATA`, or `./rulemine-data`.
    pub fn from_env() -> Result<Self> {
        Registry::open(std::env::var_os(DATA_ENV).map_or_else(|| PathBuf::from(DEFAULT_DATA_DIR), PathBuf::from))
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn sessions_dir(&self) -> PathBuf {
        self.root.join("sessions")
    }

    pub fn corpus_dir(&self, name: &str) -> Result<PathBuf> {
        validate_name(name)?;
        Ok(self.root.join("corpora").join(name))
    }

    pub fn exists(&self, name: &str) -> bool {
        self.corpus_dir(name)
            .map(|d| d.join("corpus.jsonl").is_file())
            .unwrap_or(false)
    }

    /// Stores `corpus` under `name`. Replacing a corpus drops its cached indexes.
    pub fn ingest(&self, name: &str, corpus: &Corpus, replace: bool) -> Result<CorpusInfo> {
        let dir = self.corpus_dir(name)?;
        if self.exists(name) && !replace {
            return Err(Error::Config(format!("corpus {name:?} already exists")));
        }
        std::fs::create_dir_all(&dir).map_err(|e| io(&dir, e))?;
        for entry in std::fs::read_dir(&dir).map_err(|e| io(&dir, e))? {
            let path = entry.map_err(|e| io(&dir, e))?.path();
            let stale = path
                .file_name()
                .and_then(|f| f.to_str())
                .is_some_and(|f| f.starts_with("index-"));
            if stale {
                std::fs::remove_file(&path).map_err(|e| io(&path, e))?;
            }
        }
        let tmp = dir.join("corpus.jsonl.tmp");
        corpus.save_jsonl(&tmp)?;
        let path = dir.join("corpus.jsonl");
        std::fs::rename(&tmp, &path).map_err(|e| io(&path, e))?;
        let info = CorpusInfo::of(name, corpus);
        write_json_atomic(&dir.join("info.json"), &info)?;
        Ok(info)
    }

    pub fn info(&self, name: &str) -> Result<CorpusInfo> {
        let path = self.corpus_dir(name)?.join("info.json");
        let text = std::fs::read_to_string(&path).map_err(|e| io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Registered corpora, by name.
    pub fn list(&self) -> Result<Vec<CorpusInfo>> {
        let dir = self.root.join("corpora");
        let mut names = Vec::new();
        for entry in std::fs::read_dir(&dir).map_err(|e| io(&dir, e))? {
            let entry = entry.map_err(|e| io(&dir, e))?;
            if let Some(name) = entry.file_name().to_str() {
                if self.exists(name) {
                    names.push(name.to_string());
                }
            }
        }
        names.sort();
        names.iter().map(|n| self.info(n)).collect()
    }

    pub fn load_corpus(&self, name: &str) -> Result<Corpus> {
        let path = self.corpus_dir(name)?.join("corpus.jsonl");
        Corpus::load(&path, rulemine::CorpusFormat::Jsonl)
    }

    pub fn index_path(&self, name: &str, grammar: &Grammar) -> Result<PathBuf> {
        Ok(self.corpus_dir(name)?.join(index_file_name(grammar)))
    }

    /// Builds the index for `grammar` and caches it next to the corpus.
    pub fn build_index(&self, name: &str, corpus: &Corpus, grammar: &Grammar, shards: usize) -> Result<SketchIndex> {
        let index = build_index(corpus, grammar, shards)?;
        let path = self.index_path(name, grammar)?;
        let tmp = path.with_extension("tmp");
        index.save(&tmp)?;
        std::fs::rename(&tmp, &path).map_err(|e| io(&path, e))?;
        Ok(index)
    }

    /// The cached index, built on first use.
    pub fn load_index(&self, name: &str, corpus: &Corpus, grammar: &Grammar, shards: usize) -> Result<SketchIndex> {
        let path = self.index_path(name, grammar)?;
        if path.is_file() {
            match SketchIndex::load(&path) {
                Ok(index) if *index.as_dyn().grammar() == *grammar => return Ok(index),
                Ok(_) => tracing::warn!(?path, "cached index has another grammar; rebuilding"),
                Err(e) => tracing::warn!(?path, error = %e, "unreadable cached index; rebuilding"),
            }
        }
        self.build_index(name, corpus, grammar, shards)
    }
}
