//! Interactive discovery of labeling rules over a sentence corpus.

pub mod bench;
pub mod classifier;
pub mod corpus;
pub mod engine;
pub mod error;
pub mod grammar;
pub mod hierarchy;
pub mod index;
pub mod oracle;
pub mod theory;
pub mod traversal;

pub use corpus::{Corpus, CorpusFormat, DocId, DocSet, Sentence};
pub use error::{Error, Result};
pub use grammar::{Grammar, GrammarId, Heuristic};
