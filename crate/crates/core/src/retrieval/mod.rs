//! Corpus ingestion, a local BM25 index, and a remote-retriever client.

pub mod bm25;
pub mod remote;

pub use bm25::Bm25Index;
pub use remote::RemoteRetriever;

use serde::{Deserialize, Serialize};
use std::io::BufRead;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RetrievalError {
    #[error("empty corpus")]
    EmptyCorpus,
    #[error("duplicate doc_id {0:?}")]
    DuplicateDocId(String),
    #[error("document {0:?} has empty text")]
    EmptyDocument(String),
    #[error("k must be >= 1")]
    InvalidK,
    #[error("corpus line {line}: {message}")]
    MalformedCorpus { line: usize, message: String },
    #[error("index at {0} is missing or unreadable")]
    MissingIndex(String),
    #[error("remote retriever protocol error: {0}")]
    Protocol(String),
    #[error("remote retriever transport error: {0}")]
    Transport(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// One passage of the retrieval corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusDocument {
    pub doc_id: String,
    #[serde(default)]
    pub title: Option<String>,
    pub text: String,
}

/// A scored hit: ranks start at 1 and scores are non-increasing with rank.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RetrievedPassage {
    pub doc: CorpusDocument,
    pub score: f64,
    pub rank: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexStats {
    pub doc_count: usize,
    pub total_tokens: u64,
    pub avg_doc_len: f64,
    pub vocab_size: usize,
}

/// Lowercase and split on non-alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_string)
        .collect()
}

/// Anything that can answer top-k queries over a corpus.
pub trait Retriever: Send + Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedPassage>, RetrievalError>;
    /// True when retrieval leaves the process over the network.
    fn is_network(&self) -> bool {
        false
    }
}

/// Read a JSONL corpus: one `{"doc_id", "title"?, "text"}` object per line.
pub fn read_corpus_jsonl(path: &Path) -> Result<Vec<CorpusDocument>, RetrievalError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut docs = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let doc: CorpusDocument =
            serde_json::from_str(&line).map_err(|e| RetrievalError::MalformedCorpus {
                line: idx + 1,
                message: e.to_string(),
            })?;
        docs.push(doc);
    }
    Ok(docs)
}
