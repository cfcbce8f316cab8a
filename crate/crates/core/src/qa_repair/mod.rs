//! QA repair pre-processing: flag flawed gold answers, classify the flaw
//! (mismatch vs outdated), generate repaired answers, and report noise
//! ratios. Repair augments the gold answer set, never replaces it.

pub mod prompts;

pub use prompts::RepairTemplates;

use crate::backend::{Backend, BackendError, CompletionRequest, PurposeTag};
use crate::evaluation::normalize_answer;
use crate::pipeline::SamplingPlan;
use crate::util::parallel_map_indexed;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::LazyLock;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RepairError {
    #[error("backend: {0}")]
    Backend(#[from] BackendError),
    #[error("classifier output unparseable: {0:?}")]
    Unparseable(String),
    #[error("repair output missing 'Repaired Answer:' line: {0:?}")]
    MissingRepairedAnswer(String),
    #[error("repair_instance called with gamma=0 classification")]
    NotFlagged,
    #[error("instance {0:?} has an empty gold answer set")]
    EmptyGold(String),
    #[error("dataset line {line}: {message}")]
    MalformedDataset { line: usize, message: String },
    #[error("serialization: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// A question with its gold answers; the unit of evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QAInstance {
    pub id: String,
    pub question: String,
    #[serde(rename = "answers")]
    pub gold_answers: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repaired_answers: Option<Vec<String>>,
    #[serde(skip)]
    pub repair_meta: Option<RepairRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlawCategory {
    Mismatch,
    Outdated,
    Both,
    None,
}

impl FlawCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            FlawCategory::Mismatch => "mismatch",
            FlawCategory::Outdated => "outdated",
            FlawCategory::Both => "both",
            FlawCategory::None => "none",
        }
    }
}

/// Audit record for one classified (and possibly repaired) instance.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RepairRecord {
    pub instance_id: String,
    pub gamma: u8,
    pub category: FlawCategory,
    pub original_answers: Vec<String>,
    pub repaired_answers: Option<Vec<String>>,
    pub repaired_question: Option<String>,
    pub rationale: String,
    pub raw_output: String,
    pub error: Option<String>,
}

/// Per-dataset repair statistics. Percentages are over flagged instances;
/// an instance in the `both` category counts toward both percentages.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct NoiseReport {
    pub total: usize,
    pub processed: usize,
    pub repairs: usize,
    pub mismatch_pct: f64,
    pub outdated_pct: f64,
    pub both_count: usize,
    pub errors: usize,
}

#[derive(Debug, Clone)]
pub struct Classification {
    pub gamma: u8,
    pub category: FlawCategory,
    pub rationale: String,
    pub raw_output: String,
}

/// Shared knobs for the repair operations.
pub struct RepairContext<'a> {
    pub backend: &'a Backend,
    pub model_id: &'a str,
    pub templates: &'a RepairTemplates,
    pub sampling: &'a SamplingPlan,
    pub reference_date: &'a str,
    pub strict: bool,
}

impl<'a> RepairContext<'a> {
    fn call(&self, purpose: PurposeTag, prompt: String) -> Result<String, RepairError> {
        let request = CompletionRequest::new(
            self.model_id,
            prompt,
            self.sampling.params_for(purpose),
            purpose,
        );
        Ok(self.backend.complete(&request)?.text)
    }
}

fn render_gold(answers: &[String]) -> String {
    answers
        .iter()
        .map(|a| format!("{a:?}"))
        .collect::<Vec<_>>()
        .join(", ")
}

static FLAG_RE: LazyLock<regex::Regex> =
    LazyLock::new(|| regex::Regex::new(r"(?i)Flag:\s*(0|1)").expect("flag regex"));
static CATEGORY_RE: LazyLock<regex::Regex> = LazyLock::new(|| {
    regex::Regex::new(r"(?i)Category:\s*(mismatch|outdated|both|none)").expect("category regex")
});
static RATIONALE_RE: LazyLock<regex::Regex> =
    LazyLock::new(|| regex::Regex::new(r"(?is)Rationale:\s*(.+)").expect("rationale regex"));

fn parse_classification(raw: &str) -> Option<(u8, FlawCategory, String)> {
    let gamma = if &FLAG_RE.captures(raw)?[1] == "1" { 1 } else { 0 };
    let category = match CATEGORY_RE.captures(raw)?[1].to_lowercase().as_str() {
        "mismatch" => FlawCategory::Mismatch,
        "outdated" => FlawCategory::Outdated,
        "both" => FlawCategory::Both,
        _ => FlawCategory::None,
    };
    // The flag and category must agree.
    if (gamma == 1) == (category == FlawCategory::None) {
        return None;
    }
    let rationale = RATIONALE_RE
        .captures(raw)
        .map(|c| c[1].trim().to_string())
        .unwrap_or_default();
    Some((gamma, category, rationale))
}

/// Ask the backend whether the gold answers are flawed and how.
///
/// An unparseable or self-contradictory output is an error in strict mode
/// and a clean `(0, none)` verdict in lenient mode.
pub fn classify_flaw(
    question: &str,
    gold_answers: &[String],
    context: Option<&str>,
    cx: &RepairContext,
) -> Result<Classification, RepairError> {
    if gold_answers.is_empty() {
        return Err(RepairError::EmptyGold(question.to_string()));
    }
    let mut prompt =
        cx.templates
            .render_classify(question, &render_gold(gold_answers), cx.reference_date);
    if let Some(context) = context {
        prompt.push_str(&format!("\n\nContext (optional):\n{context}"));
    }
    let raw = cx.call(PurposeTag::RepairClassify, prompt)?;
    match parse_classification(&raw) {
        Some((gamma, category, rationale)) => Ok(Classification {
            gamma,
            category,
            rationale,
            raw_output: raw,
        }),
        None if cx.strict => Err(RepairError::Unparseable(raw)),
        None => Ok(Classification {
            gamma: 0,
            category: FlawCategory::None,
            rationale: "<parse failure>".to_string(),
            raw_output: raw,
        }),
    }
}

static REPAIRED_ANSWER_RE: LazyLock<regex::Regex> =
    LazyLock::new(|| regex::Regex::new(r"(?im)^\s*Repaired Answer:\s*(.+)$").expect("ra regex"));
static REPAIRED_QUESTION_RE: LazyLock<regex::Regex> =
    LazyLock::new(|| regex::Regex::new(r"(?im)^\s*Repaired Question:\s*(.+)$").expect("rq regex"));

/// Generate the repaired answer for a flagged instance and attach the
/// audit record. The repaired set is the original set plus the new answer
/// (union augmentation, never deletion).
pub fn repair_instance(
    instance: &QAInstance,
    classification: &Classification,
    cx: &RepairContext,
) -> Result<QAInstance, RepairError> {
    if classification.gamma != 1 {
        return Err(RepairError::NotFlagged);
    }
    let prompt = cx.templates.render_generate(
        &instance.question,
        &render_gold(&instance.gold_answers),
        cx.reference_date,
        classification.category.as_str(),
    );
    let raw = cx.call(PurposeTag::RepairGenerate, prompt)?;
    let repaired_answer = REPAIRED_ANSWER_RE
        .captures(&raw)
        .map(|c| c[1].trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| RepairError::MissingRepairedAnswer(raw.clone()))?;
    let repaired_question = REPAIRED_QUESTION_RE
        .captures(&raw)
        .map(|c| c[1].trim().to_string())
        .filter(|s| !s.is_empty() && normalize_answer(s) != normalize_answer(&instance.question));

    let mut repaired_set = instance.gold_answers.clone();
    if !repaired_set
        .iter()
        .any(|a| normalize_answer(a) == normalize_answer(&repaired_answer))
    {
        repaired_set.push(repaired_answer);
    }

    let record = RepairRecord {
        instance_id: instance.id.clone(),
        gamma: 1,
        category: classification.category,
        original_answers: instance.gold_answers.clone(),
        repaired_answers: Some(repaired_set.clone()),
        repaired_question,
        rationale: classification.rationale.clone(),
        raw_output: format!("{}\n---\n{raw}", classification.raw_output),
        error: None,
    };
    Ok(QAInstance {
        repaired_answers: Some(repaired_set),
        repair_meta: Some(record),
        ..instance.clone()
    })
}

#[derive(Debug, Clone, Copy)]
pub struct RepairOptions {
    pub sample_limit: Option<usize>,
    pub seed: u64,
    pub concurrency: usize,
}

impl Default for RepairOptions {
    fn default() -> Self {
        Self {
            sample_limit: None,
            seed: 0,
            concurrency: crate::backend::DEFAULT_CONCURRENCY,
        }
    }
}

/// Read a JSONL dataset of QA instances.
pub fn read_dataset_jsonl(path: &Path) -> Result<Vec<QAInstance>, RepairError> {
    let file = std::fs::File::open(path)?;
    let reader = std::io::BufReader::new(file);
    let mut instances = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let instance: QAInstance =
            serde_json::from_str(&line).map_err(|e| RepairError::MalformedDataset {
                line: idx + 1,
                message: e.to_string(),
            })?;
        if instance.gold_answers.is_empty() {
            return Err(RepairError::EmptyGold(instance.id));
        }
        if let Some(repaired) = &instance.repaired_answers {
            if repaired.is_empty() {
                return Err(RepairError::MalformedDataset {
                    line: idx + 1,
                    message: format!("instance {:?} has an empty repaired_answers set", instance.id),
                });
            }
        }
        instances.push(instance);
    }
    Ok(instances)
}

pub fn write_dataset_jsonl(path: &Path, instances: &[QAInstance]) -> Result<(), RepairError> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    for instance in instances {
        serde_json::to_writer(&mut file, instance)?;
        file.write_all(b"\n")?;
    }
    file.flush()?;
    Ok(())
}

/// Indices selected for processing: all of them, or a seeded sample without
/// replacement, returned in input order.
fn sampled_indices(total: usize, options: &RepairOptions) -> Vec<usize> {
    match options.sample_limit {
        Some(limit) if limit < total => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(options.seed);
            let mut picked = rand::seq::index::sample(&mut rng, total, limit).into_vec();
            picked.sort_unstable();
            picked
        }
        _ => (0..total).collect(),
    }
}

/// Classify and repair a dataset file, writing the repaired JSONL, a
/// sidecar audit JSONL of repair records, and returning the noise report.
///
/// Instances outside the sample pass through untouched. Per-instance
/// backend failures are recorded in the audit log and skipped; I/O errors
/// abort.
pub fn repair_dataset(
    in_path: &Path,
    out_path: &Path,
    cx: &RepairContext,
    options: &RepairOptions,
) -> Result<NoiseReport, RepairError> {
    let instances = read_dataset_jsonl(in_path)?;
    let selected = sampled_indices(instances.len(), options);
    let selected_set: HashSet<usize> = selected.iter().copied().collect();

    let targets: Vec<&QAInstance> = selected.iter().map(|&i| &instances[i]).collect();
    let outcomes: Vec<Result<QAInstance, (String, RepairError)>> =
        parallel_map_indexed(&targets, options.concurrency, |_, instance| {
            process_one(instance, cx).map_err(|e| (instance.id.clone(), e))
        });

    let mut by_index: std::collections::HashMap<usize, Result<QAInstance, (String, RepairError)>> =
        selected.iter().copied().zip(outcomes).collect();

    let mut output = Vec::with_capacity(instances.len());
    let mut records = Vec::new();
    let mut report = NoiseReport {
        total: instances.len(),
        processed: selected.len(),
        ..Default::default()
    };
    let mut mismatch = 0usize;
    let mut outdated = 0usize;

    for (idx, instance) in instances.into_iter().enumerate() {
        if !selected_set.contains(&idx) {
            output.push(instance);
            continue;
        }
        match by_index.remove(&idx).expect("outcome for selected index") {
            Ok(processed) => {
                if let Some(record) = &processed.repair_meta {
                    if record.gamma == 1 {
                        report.repairs += 1;
                        match record.category {
                            FlawCategory::Mismatch => mismatch += 1,
                            FlawCategory::Outdated => outdated += 1,
                            FlawCategory::Both => {
                                mismatch += 1;
                                outdated += 1;
                                report.both_count += 1;
                            }
                            FlawCategory::None => {}
                        }
                    }
                    records.push(record.clone());
                }
                output.push(processed);
            }
            Err((id, err)) => {
                report.errors += 1;
                records.push(RepairRecord {
                    instance_id: id,
                    gamma: 0,
                    category: FlawCategory::None,
                    original_answers: instance.gold_answers.clone(),
                    repaired_answers: None,
                    repaired_question: None,
                    rationale: String::new(),
                    raw_output: String::new(),
                    error: Some(err.to_string()),
                });
                output.push(instance);
            }
        }
    }

    if report.repairs > 0 {
        report.mismatch_pct = 100.0 * mismatch as f64 / report.repairs as f64;
        report.outdated_pct = 100.0 * outdated as f64 / report.repairs as f64;
    }

    write_dataset_jsonl(out_path, &output)?;
    let audit_path = audit_path_for(out_path);
    let mut audit = std::io::BufWriter::new(std::fs::File::create(&audit_path)?);
    for record in &records {
        serde_json::to_writer(&mut audit, record)?;
        audit.write_all(b"\n")?;
    }
    audit.flush()?;
    Ok(report)
}

pub fn audit_path_for(out_path: &Path) -> std::path::PathBuf {
    let mut name = out_path.as_os_str().to_os_string();
    name.push(".audit.jsonl");
    std::path::PathBuf::from(name)
}

fn process_one(instance: &QAInstance, cx: &RepairContext) -> Result<QAInstance, RepairError> {
    let classification = classify_flaw(&instance.question, &instance.gold_answers, None, cx)?;
    if classification.gamma == 1 {
        repair_instance(instance, &classification, cx)
    } else {
        let mut clean = instance.clone();
        clean.repair_meta = Some(RepairRecord {
            instance_id: instance.id.clone(),
            gamma: 0,
            category: FlawCategory::None,
            original_answers: instance.gold_answers.clone(),
            repaired_answers: None,
            repaired_question: None,
            rationale: classification.rationale,
            raw_output: classification.raw_output,
            error: None,
        });
        Ok(clean)
    }
}
