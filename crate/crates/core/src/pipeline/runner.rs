//! Batch driver: runs the pipeline over a dataset with bounded
//! parallelism, preserving dataset order in the trace stream.

use super::{run_pipeline, PipelineTrace};
use crate::config::{RunConfig, RunEnv};
use crate::qa_repair::QAInstance;
use crate::util::parallel_map_indexed;

pub struct BatchOutcome {
    pub traces: Vec<PipelineTrace>,
    pub failed: usize,
}

/// Run every instance through the configured pipeline. Instance failures
/// land in their traces; this function itself does not fail.
pub fn run_batch(dataset: &[QAInstance], config: &RunConfig, env: &RunEnv) -> BatchOutcome {
    let traces = parallel_map_indexed(dataset, config.concurrency, |_, instance| {
        run_pipeline(instance, config, env)
    });
    let failed = traces.iter().filter(|t| t.error.is_some()).count();
    BatchOutcome { traces, failed }
}
