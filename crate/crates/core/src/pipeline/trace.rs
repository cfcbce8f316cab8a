//! Per-instance audit record: every stage's inputs, outputs, calls, and
//! timings, serialized one JSON object per line.

use super::{ConflictReport, ContextEvidence, ParameterEvidence, Preset, StageToggles};
use crate::backend::PurposeTag;
use crate::retrieval::RetrievedPassage;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;

pub const TRACE_VERSION: u32 = 1;

/// One completion as seen by the pipeline: doubles as the per-instance
/// slice of the backend call log.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CallTrace {
    pub purpose: PurposeTag,
    pub prompt: String,
    pub completion: String,
    pub digest: String,
    pub from_cache: bool,
    pub latency_ms: u64,
    pub timestamp_unix_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageStatus {
    Executed,
    Skipped,
    Error,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageStatusMap {
    pub stage1: StageStatus,
    pub stage2: StageStatus,
    pub stage3: StageStatus,
    pub synthesis: StageStatus,
}

impl Default for StageStatusMap {
    fn default() -> Self {
        Self {
            stage1: StageStatus::Skipped,
            stage2: StageStatus::Skipped,
            stage3: StageStatus::Skipped,
            synthesis: StageStatus::Skipped,
        }
    }
}

/// Parsed answer fields from the synthesis completion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SynthesisFields {
    pub reasoning: String,
    pub uncertainty: String,
    pub labels_found: bool,
}

#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct TraceTiming {
    pub started_unix_ms: u64,
    pub wall_ms: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PipelineTrace {
    pub trace_version: u32,
    pub instance_id: String,
    pub question: String,
    pub preset: Preset,
    pub stage_toggles: StageToggles,
    pub stages: StageStatusMap,
    pub parameter_evidence: Option<ParameterEvidence>,
    pub retrieved: Option<Vec<RetrievedPassage>>,
    pub context_evidence: Option<ContextEvidence>,
    pub conflict: Option<ConflictReport>,
    pub final_answer: Option<String>,
    pub synthesis: Option<SynthesisFields>,
    pub warnings: Vec<String>,
    pub calls: Vec<CallTrace>,
    pub error: Option<String>,
    pub timing: TraceTiming,
}

impl PipelineTrace {
    pub fn new(instance_id: impl Into<String>, question: impl Into<String>) -> Self {
        Self {
            trace_version: TRACE_VERSION,
            instance_id: instance_id.into(),
            question: question.into(),
            preset: Preset::CareRag,
            stage_toggles: StageToggles::default(),
            stages: StageStatusMap::default(),
            parameter_evidence: None,
            retrieved: None,
            context_evidence: None,
            conflict: None,
            final_answer: None,
            synthesis: None,
            warnings: Vec::new(),
            calls: Vec::new(),
            error: None,
            timing: TraceTiming::default(),
        }
    }

    /// Calls tagged with a given purpose (per-instance call accounting).
    pub fn calls_with_purpose(&self, purpose: PurposeTag) -> usize {
        self.calls.iter().filter(|c| c.purpose == purpose).count()
    }
}

pub fn write_traces_jsonl(path: &Path, traces: &[PipelineTrace]) -> std::io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for trace in traces {
        serde_json::to_writer(&mut file, trace)?;
        file.write_all(b"\n")?;
    }
    file.flush()
}

pub fn read_traces_jsonl(path: &Path) -> std::io::Result<Vec<PipelineTrace>> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut traces = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let trace: PipelineTrace = serde_json::from_str(&line).map_err(|e| {
            std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("trace line {}: {e}", idx + 1),
            )
        })?;
        traces.push(trace);
    }
    Ok(traces)
}

/// Recursively null out wall-clock fields so two traces can be compared
/// for replay determinism.
pub fn strip_volatile_fields(value: &mut serde_json::Value) {
    match value {
        serde_json::Value::Object(map) => {
            for key in ["timestamp_unix_ms", "latency_ms", "started_unix_ms", "wall_ms"] {
                if map.contains_key(key) {
                    map.insert(key.to_string(), serde_json::Value::Null);
                }
            }
            for (_, v) in map.iter_mut() {
                strip_volatile_fields(v);
            }
        }
        serde_json::Value::Array(items) => {
            for item in items {
                strip_volatile_fields(item);
            }
        }
        _ => {}
    }
}

/// A trace serialized with volatile fields nulled, for byte comparisons.
pub fn canonical_trace_json(trace: &PipelineTrace) -> String {
    let mut value = serde_json::to_value(trace).expect("trace serializes");
    strip_volatile_fields(&mut value);
    value.to_string()
}
