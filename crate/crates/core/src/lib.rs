//! Conflict-aware retrieval-augmented generation engine.
//!
//! The pipeline elicits the model's internal answers (parameter-aware
//! evidence), refines retrieved passages into context-aware evidence,
//! detects conflicts between the two, and synthesizes a final answer from
//! everything plus the conflict report. Around that core sit a BM25
//! retriever, pluggable completion backends, a QA-repair pre-processor for
//! flawed gold answers, and an EM/F1 evaluation harness with ablation and
//! retrieval-depth sweeps.

pub mod backend;
pub mod config;
pub mod evaluation;
pub mod pipeline;
pub mod qa_repair;
pub mod retrieval;
pub mod util;

pub use backend::{Backend, BackendError, CompletionRequest, CompletionResult, PurposeTag};
pub use config::{build_env, Manifest, RunConfig, RunEnv};
pub use evaluation::{evaluate_run, exact_match, f1_score, normalize_answer, EvalResult};
pub use pipeline::{run_pipeline, PipelineTrace, Preset, StageToggles};
pub use qa_repair::{repair_dataset, NoiseReport, QAInstance};
pub use retrieval::{Bm25Index, CorpusDocument, RetrievedPassage, Retriever};
