//! Answer normalization, EM/F1 metrics over answer sets, and run-level
//! aggregation of pipeline traces.

pub mod sweep;

use crate::pipeline::trace::PipelineTrace;
use crate::qa_repair::QAInstance;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("trace id {0:?} not present in dataset")]
    UnknownTraceId(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// Normalize an answer string: lowercase, strip punctuation, drop standalone
/// articles (a/an/the), collapse whitespace.
pub fn normalize_answer(s: &str) -> String {
    let lower = s.to_lowercase();
    let no_punct: String = lower.chars().filter(|c| !c.is_ascii_punctuation()).collect();
    no_punct
        .split_whitespace()
        .filter(|t| !matches!(*t, "a" | "an" | "the"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// 1 iff the normalized prediction equals some normalized gold answer.
pub fn exact_match(prediction: &str, answers: &[String]) -> u8 {
    let pred = normalize_answer(prediction);
    answers
        .iter()
        .any(|a| normalize_answer(a) == pred)
        .into()
}

/// Token-level F1, maximized over the answer set.
///
/// Tokens are whitespace splits of the normalized strings; overlap is
/// multiset intersection. Both token lists empty scores 1, exactly one
/// empty scores 0.
pub fn f1_score(prediction: &str, answers: &[String]) -> f64 {
    let pred_tokens = tokens(prediction);
    answers
        .iter()
        .map(|a| f1_single(&pred_tokens, &tokens(a)))
        .fold(0.0, f64::max)
}

fn tokens(s: &str) -> Vec<String> {
    normalize_answer(s)
        .split_whitespace()
        .map(str::to_string)
        .collect()
}

fn f1_single(pred: &[String], gold: &[String]) -> f64 {
    if pred.is_empty() || gold.is_empty() {
        return if pred.is_empty() && gold.is_empty() { 1.0 } else { 0.0 };
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in gold {
        *counts.entry(t.as_str()).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for t in pred {
        if let Some(c) = counts.get_mut(t.as_str()) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / pred.len() as f64;
    let r = overlap as f64 / gold.len() as f64;
    2.0 * p * r / (p + r)
}

/// Per-instance score row.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InstanceScore {
    pub id: String,
    pub prediction: String,
    pub em: u8,
    pub f1: f64,
}

/// Aggregated scores for one run.
///
/// `em`/`f1` are percentages averaged over non-failed instances; `n` counts
/// every trace seen and `failed` the subset excluded from the means.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub dataset: String,
    pub config: String,
    pub n: usize,
    pub failed: usize,
    pub em: f64,
    pub f1: f64,
    #[serde(skip)]
    pub rows: Vec<InstanceScore>,
}

/// Score every trace's final answer against the dataset's gold (or repaired)
/// answer sets. Failed traces are counted but excluded from the means.
pub fn evaluate_run(
    traces: &[PipelineTrace],
    dataset: &[QAInstance],
    use_repaired: bool,
    dataset_id: &str,
    config_id: &str,
) -> Result<EvalResult, EvalError> {
    let by_id: HashMap<&str, &QAInstance> =
        dataset.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut rows = Vec::new();
    let mut failed = 0usize;
    for trace in traces {
        let instance = by_id
            .get(trace.instance_id.as_str())
            .ok_or_else(|| EvalError::UnknownTraceId(trace.instance_id.clone()))?;
        let prediction = match (&trace.error, &trace.final_answer) {
            (None, Some(answer)) => answer,
            _ => {
                failed += 1;
                continue;
            }
        };
        let answers = match (&instance.repaired_answers, use_repaired) {
            (Some(repaired), true) => repaired,
            _ => &instance.gold_answers,
        };
        rows.push(InstanceScore {
            id: trace.instance_id.clone(),
            prediction: prediction.clone(),
            em: exact_match(prediction, answers),
            f1: f1_score(prediction, answers),
        });
    }
    let scored = rows.len() as f64;
    let (em, f1) = if rows.is_empty() {
        (0.0, 0.0)
    } else {
        (
            100.0 * rows.iter().map(|r| r.em as f64).sum::<f64>() / scored,
            100.0 * rows.iter().map(|r| r.f1).sum::<f64>() / scored,
        )
    };
    Ok(EvalResult {
        dataset: dataset_id.to_string(),
        config: config_id.to_string(),
        n: traces.len(),
        failed,
        em,
        f1,
        rows,
    })
}
