//! BM25 inverted index with top-k ranking.
//!
//! Scoring uses k1=1.2, b=0.75 and the non-negative IDF form
//! `ln((N - df + 0.5) / (df + 0.5) + 1)`. Zero-score documents are excluded
//! and ties break by ascending `doc_id`.

use super::{
    tokenize, CorpusDocument, IndexStats, RetrievalError, RetrievedPassage, Retriever,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::Path;

pub const BM25_K1: f64 = 1.2;
pub const BM25_B: f64 = 0.75;

const INDEX_FILE: &str = "index.json";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Posting {
    doc: u32,
    tf: u32,
}

/// Immutable inverted index over a fixed corpus.
#[derive(Debug, Serialize, Deserialize)]
pub struct Bm25Index {
    docs: Vec<CorpusDocument>,
    doc_lengths: Vec<u32>,
    postings: BTreeMap<String, Vec<Posting>>,
    stats: IndexStats,
}

impl Bm25Index {
    /// Build from a corpus stream. Fails on an empty corpus, a duplicate
    /// `doc_id`, or a document with empty text.
    pub fn build<I>(corpus: I) -> Result<Self, RetrievalError>
    where
        I: IntoIterator<Item = CorpusDocument>,
    {
        let mut docs = Vec::new();
        let mut doc_lengths = Vec::new();
        let mut postings: BTreeMap<String, Vec<Posting>> = BTreeMap::new();
        let mut seen_ids = HashSet::new();
        let mut total_tokens = 0u64;

        for doc in corpus {
            if doc.text.trim().is_empty() {
                return Err(RetrievalError::EmptyDocument(doc.doc_id));
            }
            if !seen_ids.insert(doc.doc_id.clone()) {
                return Err(RetrievalError::DuplicateDocId(doc.doc_id));
            }
            let idx = docs.len() as u32;
            let tokens = tokenize(&doc.text);
            let mut tf: BTreeMap<&str, u32> = BTreeMap::new();
            for token in &tokens {
                *tf.entry(token.as_str()).or_insert(0) += 1;
            }
            for (term, count) in tf {
                postings
                    .entry(term.to_string())
                    .or_default()
                    .push(Posting { doc: idx, tf: count });
            }
            total_tokens += tokens.len() as u64;
            doc_lengths.push(tokens.len() as u32);
            docs.push(doc);
        }

        if docs.is_empty() {
            return Err(RetrievalError::EmptyCorpus);
        }
        let stats = IndexStats {
            doc_count: docs.len(),
            total_tokens,
            avg_doc_len: total_tokens as f64 / docs.len() as f64,
            vocab_size: postings.len(),
        };
        Ok(Self {
            docs,
            doc_lengths,
            postings,
            stats,
        })
    }

    pub fn stats(&self) -> &IndexStats {
        &self.stats
    }

    /// Top-k documents by BM25. A query that normalizes to zero tokens
    /// returns an empty list.
    pub fn search(&self, query: &str, k: usize) -> Vec<RetrievedPassage> {
        let query_tokens = tokenize(query);
        if query_tokens.is_empty() || k == 0 {
            return Vec::new();
        }
        let n = self.stats.doc_count as f64;
        let avgdl = self.stats.avg_doc_len;
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for token in &query_tokens {
            let Some(postings) = self.postings.get(token) else {
                continue;
            };
            let df = postings.len() as f64;
            let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
            for posting in postings {
                let dl = self.doc_lengths[posting.doc as usize] as f64;
                let tf = posting.tf as f64;
                let tf_norm =
                    tf * (BM25_K1 + 1.0) / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl));
                *scores.entry(posting.doc).or_insert(0.0) += idf * tf_norm;
            }
        }
        let mut scored: Vec<(u32, f64)> =
            scores.into_iter().filter(|(_, s)| *s > 0.0).collect();
        scored.sort_by(|a, b| {
            b.1.total_cmp(&a.1)
                .then_with(|| self.docs[a.0 as usize].doc_id.cmp(&self.docs[b.0 as usize].doc_id))
        });
        scored
            .into_iter()
            .take(k)
            .enumerate()
            .map(|(i, (doc, score))| RetrievedPassage {
                doc: self.docs[doc as usize].clone(),
                score,
                rank: i + 1,
            })
            .collect()
    }

    /// Persist to `dir/index.json` (deterministic bytes for a fixed corpus).
    pub fn save(&self, dir: &Path) -> Result<(), RetrievalError> {
        std::fs::create_dir_all(dir)?;
        let body = serde_json::to_vec(self)
            .map_err(|e| RetrievalError::Protocol(format!("index serialization: {e}")))?;
        crate::util::atomic_write(&dir.join(INDEX_FILE), &body)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self, RetrievalError> {
        let path = dir.join(INDEX_FILE);
        let bytes = std::fs::read(&path)
            .map_err(|_| RetrievalError::MissingIndex(path.display().to_string()))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| RetrievalError::Protocol(format!("index deserialization: {e}")))
    }

    pub fn index_file(dir: &Path) -> std::path::PathBuf {
        dir.join(INDEX_FILE)
    }
}

impl Retriever for Bm25Index {
    fn retrieve(&self, query: &str, k: usize) -> Result<Vec<RetrievedPassage>, RetrievalError> {
        if k == 0 {
            return Err(RetrievalError::InvalidK);
        }
        Ok(self.search(query, k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, text: &str) -> CorpusDocument {
        CorpusDocument {
            doc_id: id.to_string(),
            title: None,
            text: text.to_string(),
        }
    }

    fn toy_corpus() -> Vec<CorpusDocument> {
        vec![
            doc("d1", "lebron james nba points record"),
            doc("d2", "kareem abdul jabbar nba scoring record"),
            doc("d3", "paris france eiffel tower"),
            doc("d4", "nba season scoring leaders history nba"),
            doc("d5", "record label music industry"),
        ]
    }

    // Independent scorer: no index, recount everything per (doc, query).
    fn brute_force_bm25(
        corpus: &[CorpusDocument],
        query: &str,
        k: usize,
    ) -> Vec<(String, f64)> {
        let token_lists: Vec<Vec<String>> = corpus.iter().map(|d| tokenize(&d.text)).collect();
        let n = corpus.len() as f64;
        let total: usize = token_lists.iter().map(Vec::len).sum();
        let avgdl = total as f64 / n;
        let query_tokens = tokenize(query);
        let mut results = Vec::new();
        for (i, d) in corpus.iter().enumerate() {
            let dl = token_lists[i].len() as f64;
            let mut score = 0.0;
            for qt in &query_tokens {
                let df = token_lists
                    .iter()
                    .filter(|toks| toks.iter().any(|t| t == qt))
                    .count() as f64;
                if df == 0.0 {
                    continue;
                }
                let tf = token_lists[i].iter().filter(|t| *t == qt).count() as f64;
                if tf == 0.0 {
                    continue;
                }
                let idf = ((n - df + 0.5) / (df + 0.5) + 1.0).ln();
                score += idf * tf * (BM25_K1 + 1.0)
                    / (tf + BM25_K1 * (1.0 - BM25_B + BM25_B * dl / avgdl));
            }
            if score > 0.0 {
                results.push((d.doc_id.clone(), score));
            }
        }
        results.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        results.truncate(k);
        results
    }

    #[test]
    fn stats_arithmetic() {
        let index = Bm25Index::build(vec![
            doc("a", "one two three four"),
            doc("b", "five six seven"),
            doc("c", "eight nine ten"),
        ])
        .unwrap();
        let stats = index.stats();
        assert_eq!(stats.doc_count, 3);
        assert_eq!(stats.total_tokens, 10);
        assert!((stats.avg_doc_len - 10.0 / 3.0).abs() < 1e-12);
        assert_eq!(stats.vocab_size, 10);
    }

    #[test]
    fn duplicate_and_empty_inputs_rejected() {
        let err = Bm25Index::build(vec![doc("d1", "x"), doc("d1", "y")]).unwrap_err();
        assert!(err.to_string().contains("d1"));
        assert!(matches!(
            Bm25Index::build(Vec::new()),
            Err(RetrievalError::EmptyCorpus)
        ));
        assert!(matches!(
            Bm25Index::build(vec![doc("d1", "  ")]),
            Err(RetrievalError::EmptyDocument(_))
        ));
    }

    #[test]
    fn rebuild_is_deterministic() {
        let a = Bm25Index::build(toy_corpus()).unwrap();
        let b = Bm25Index::build(toy_corpus()).unwrap();
        assert_eq!(a.stats(), b.stats());
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn unknown_terms_and_empty_queries_return_nothing() {
        let index = Bm25Index::build(toy_corpus()).unwrap();
        assert!(index.search("zebra quantum", 5).is_empty());
        assert!(index.search("?!", 5).is_empty());
    }

    #[test]
    fn k_larger_than_corpus_returns_all_scoring_docs() {
        let index = Bm25Index::build(toy_corpus()).unwrap();
        let hits = index.search("nba", 50);
        assert_eq!(hits.len(), 3); // d1, d2, d4 mention nba
        assert_eq!(hits.iter().map(|h| h.rank).collect::<Vec<_>>(), [1, 2, 3]);
    }

    #[test]
    fn score_matches_closed_form_when_dl_equals_avgdl() {
        // d1 has 5 tokens and avgdl is 5 for this corpus slice, so the tf
        // normalization collapses to 1 and score = idf(nba) + idf(record).
        let corpus = vec![
            doc("d1", "lebron james nba points record"),
            doc("d2", "kareem abdul jabbar nba scoring record"),
            doc("d3", "paris france eiffel tower"),
        ];
        let index = Bm25Index::build(corpus).unwrap();
        let hits = index.search("nba scoring record", 3);
        let d1 = hits.iter().find(|h| h.doc.doc_id == "d1").unwrap();
        let expected = 2.0 * ((3.0 - 2.0 + 0.5) / 2.5 + 1.0f64).ln();
        assert!((d1.score - expected).abs() < 1e-12, "got {}", d1.score);
        // d2 holds the rarer "scoring" term and outranks d1.
        assert_eq!(hits[0].doc.doc_id, "d2");
    }

    #[test]
    fn toy_query_matches_brute_force_oracle() {
        let corpus = toy_corpus();
        let index = Bm25Index::build(corpus.clone()).unwrap();
        let expected = brute_force_bm25(&corpus, "nba scoring record", 5);
        let got = index.search("nba scoring record", 5);
        assert_eq!(got.len(), expected.len());
        for (hit, (id, score)) in got.iter().zip(&expected) {
            assert_eq!(&hit.doc.doc_id, id);
            assert!((hit.score - score).abs() < 1e-9);
        }
    }

    #[test]
    fn randomized_corpora_match_brute_force_oracle() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let vocab: Vec<String> = (0..40).map(|i| format!("w{i}")).collect();
        for _ in 0..10 {
            let n_docs = rng.gen_range(1..=60);
            let corpus: Vec<CorpusDocument> = (0..n_docs)
                .map(|i| {
                    let len = rng.gen_range(1..=30);
                    let text = (0..len)
                        .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
                        .collect::<Vec<_>>()
                        .join(" ");
                    doc(&format!("doc{i:03}"), &text)
                })
                .collect();
            let index = Bm25Index::build(corpus.clone()).unwrap();
            for _ in 0..10 {
                let qlen = rng.gen_range(1..=4);
                let query = (0..qlen)
                    .map(|_| vocab[rng.gen_range(0..vocab.len())].clone())
                    .collect::<Vec<_>>()
                    .join(" ");
                let k = rng.gen_range(1..=10);
                let expected = brute_force_bm25(&corpus, &query, k);
                let got = index.search(&query, k);
                assert_eq!(got.len(), expected.len(), "query {query:?}");
                for (hit, (id, score)) in got.iter().zip(&expected) {
                    assert_eq!(&hit.doc.doc_id, id, "query {query:?}");
                    assert!((hit.score - score).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn top_k_is_prefix_of_top_k_plus_one() {
        let index = Bm25Index::build(toy_corpus()).unwrap();
        for query in ["nba scoring record", "record", "nba paris"] {
            for k in 1..5 {
                let smaller = index.search(query, k);
                let larger = index.search(query, k + 1);
                for (a, b) in smaller.iter().zip(&larger) {
                    assert_eq!(a.doc.doc_id, b.doc.doc_id);
                    assert_eq!(a.score, b.score);
                }
            }
        }
    }

    #[test]
    fn scores_non_increasing_with_rank() {
        let index = Bm25Index::build(toy_corpus()).unwrap();
        let hits = index.search("nba scoring record history", 5);
        for pair in hits.windows(2) {
            assert!(pair[0].score >= pair[1].score);
        }
    }

    #[test]
    fn save_and_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let index = Bm25Index::build(toy_corpus()).unwrap();
        index.save(dir.path()).unwrap();
        let loaded = Bm25Index::load(dir.path()).unwrap();
        assert_eq!(loaded.stats(), index.stats());
        let a = index.search("nba scoring record", 5);
        let b = loaded.search("nba scoring record", 5);
        assert_eq!(a.len(), b.len());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.doc.doc_id, y.doc.doc_id);
            assert_eq!(x.score, y.score);
        }
    }
}
