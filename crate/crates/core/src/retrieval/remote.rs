//! Client for a remote retrieval service.
//!
//! Expects `GET {endpoint}?q=<query>&k=<k>` to return a JSON array of
//! `{doc_id, title?, text, score}` objects; hits are re-ranked locally by
//! score in case the service returns them unordered.

use super::{CorpusDocument, RetrievalError, RetrievedPassage, Retriever};
use serde::Deserialize;
use std::time::Duration;

#[derive(Debug, Deserialize)]
struct RemoteHit {
    doc_id: String,
    #[serde(default)]
    title: Option<String>,
    text: String,
    score: f64,
}

pub struct RemoteRetriever {
    endpoint: String,
    client: reqwest::blocking::Client,
}

impl RemoteRetriever {
    pub fn new(endpoint: impl Into<String>) -> Result<Self, RetrievalError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_secs(30))
            .build()
            .map_err(|e| RetrievalError::Transport(e.to_string()))?;
        Ok(Self {
            endpoint: endpoint.into(),
            client,
        })
    }
}

/// Parse and rank a raw response body. Split out so the protocol contract
/// is testable without a live endpoint.
pub fn parse_remote_response(body: &str, k: usize) -> Result<Vec<RetrievedPassage>, RetrievalError> {
    let hits: Vec<RemoteHit> =
        serde_json::from_str(body).map_err(|e| RetrievalError::Protocol(e.to_string()))?;
    let mut hits: Vec<RemoteHit> = hits;
    hits.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.doc_id.cmp(&b.doc_id)));
    Ok(hits
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, hit)| RetrievedPassage {
            doc: CorpusDocument {
                doc_id: hit.doc_id,
                title: hit.title,
                text: hit.text,
            },
            score: hit.score,
            rank: i + 1,
        })
        .collect())
}

impl Retriever for RemoteRetriever {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedPassage>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        let response = self
            .client
            .get(&self.endpoint)
            .query(&[("q", query), ("k", &k.to_string())])
            .send()
            .map_err(|e| RetrievalError::Transport(e.to_string()))?;
        let status = response.status();
        let body = response
            .text()
            .map_err(|e| RetrievalError::Transport(e.to_string()))?;
        if !status.is_success() {
            return Err(RetrievalError::Protocol(format!(
                "status {status}: {}",
                body.chars().take(200).collect::<String>()
            )));
        }
        parse_remote_response(&body, k)
    }

    fn is_network(&self) -> bool {
        true
    }
}
