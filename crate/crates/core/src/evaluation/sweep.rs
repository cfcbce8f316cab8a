//! Experiment sweeps: retrieval depth, perspective count, and stage
//! ablations, with CSV output for plotting.

use super::{evaluate_run, EvalResult};
use crate::config::{RunConfig, RunEnv};
use crate::pipeline::runner::run_batch;
use crate::pipeline::{PipelineTrace, Preset};
use crate::qa_repair::QAInstance;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SweepError {
    #[error("sweep spec: {0}")]
    Spec(String),
    #[error("evaluation: {0}")]
    Eval(#[from] super::EvalError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationVariant {
    Full,
    NoStage1,
    NoStage2,
    NoStage3,
}

impl AblationVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            AblationVariant::Full => "full",
            AblationVariant::NoStage1 => "no_stage1",
            AblationVariant::NoStage2 => "no_stage2",
            AblationVariant::NoStage3 => "no_stage3",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "full" => Some(Self::Full),
            "no_stage1" => Some(Self::NoStage1),
            "no_stage2" => Some(Self::NoStage2),
            "no_stage3" => Some(Self::NoStage3),
            _ => None,
        }
    }

    pub fn all() -> [Self; 4] {
        [Self::Full, Self::NoStage1, Self::NoStage2, Self::NoStage3]
    }
}

/// What to vary across the sweep.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "parameter", content = "values")]
pub enum SweepValues {
    K(Vec<usize>),
    N(Vec<usize>),
    Ablation(Vec<AblationVariant>),
}

impl SweepValues {
    pub fn parameter_name(&self) -> &'static str {
        match self {
            SweepValues::K(_) => "k",
            SweepValues::N(_) => "n",
            SweepValues::Ablation(_) => "ablation",
        }
    }

    fn len(&self) -> usize {
        match self {
            SweepValues::K(v) => v.len(),
            SweepValues::N(v) => v.len(),
            SweepValues::Ablation(v) => v.len(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub values: SweepValues,
    pub base: RunConfig,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<(), SweepError> {
        if self.values.len() == 0 {
            return Err(SweepError::Spec("value list must be non-empty".into()));
        }
        match &self.values {
            SweepValues::K(values) if values.iter().any(|&k| k < 1) => {
                Err(SweepError::Spec("k values must be >= 1".into()))
            }
            SweepValues::N(values) if values.iter().any(|&n| n < 1) => {
                Err(SweepError::Spec("n values must be >= 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// One sweep point: the configured value, its scores, and the raw traces.
pub struct SweepPoint {
    pub value: String,
    pub result: EvalResult,
    pub traces: Vec<PipelineTrace>,
}

fn config_for_value(base: &RunConfig, values: &SweepValues, idx: usize) -> (String, RunConfig) {
    let mut config = base.clone();
    match values {
        SweepValues::K(list) => {
            config.k = list[idx];
            (list[idx].to_string(), config)
        }
        SweepValues::N(list) => {
            config.n = list[idx];
            (list[idx].to_string(), config)
        }
        SweepValues::Ablation(list) => {
            config.preset = Preset::CareRag;
            config.stages = Default::default();
            match list[idx] {
                AblationVariant::Full => {}
                AblationVariant::NoStage1 => config.stages.stage1 = false,
                AblationVariant::NoStage2 => config.stages.stage2 = false,
                AblationVariant::NoStage3 => config.stages.stage3 = false,
            }
            (list[idx].as_str().to_string(), config)
        }
    }
}

/// Run one full evaluation per sweep value. The shared environment keeps
/// the completion cache warm across values with coinciding prompts.
/// Instance failures are recorded per point; the sweep continues.
pub fn run_sweep(
    spec: &SweepSpec,
    dataset: &[QAInstance],
    env: &RunEnv,
    dataset_id: &str,
    use_repaired: bool,
) -> Result<Vec<SweepPoint>, SweepError> {
    spec.validate()?;
    let mut points = Vec::with_capacity(spec.values.len());
    for idx in 0..spec.values.len() {
        let (value, config) = config_for_value(&spec.base, &spec.values, idx);
        let config_id = format!("{}={value}", spec.values.parameter_name());
        let outcome = run_batch(dataset, &config, env);
        let result = evaluate_run(&outcome.traces, dataset, use_repaired, dataset_id, &config_id)?;
        points.push(SweepPoint {
            value,
            result,
            traces: outcome.traces,
        });
    }
    Ok(points)
}

/// CSV table with columns `param,value,em,f1,n,failed`.
pub fn write_sweep_csv(
    path: &Path,
    parameter: &str,
    points: &[SweepPoint],
) -> Result<(), SweepError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "param,value,em,f1,n,failed")?;
    for point in points {
        writeln!(
            file,
            "{parameter},{},{},{},{},{}",
            point.value, point.result.em, point.result.f1, point.result.n, point.result.failed
        )?;
    }
    file.flush()?;
    Ok(())
}
