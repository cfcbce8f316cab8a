//! The four-stage inference procedure: parameter-record comparison,
//! retrieval refinement, conflict-driven summarization, and conflict-aware
//! synthesis, with full trace capture.

pub mod parse;
pub mod runner;
pub mod templates;
pub mod trace;

pub use parse::{parse_conflict_output, parse_synthesis_output, SynthesisSections};
pub use templates::{PromptTemplate, TemplateId, TemplateSet};
pub use trace::{CallTrace, PipelineTrace, StageStatus, StageStatusMap, SynthesisFields};

use crate::backend::{Backend, BackendError, CompletionRequest, PurposeTag, SamplingParams};
use crate::config::{RunConfig, RunEnv};
use crate::evaluation::normalize_answer;
use crate::qa_repair::QAInstance;
use crate::retrieval::RetrievedPassage;
use crate::util::now_unix_ms;
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashSet};
use std::time::Instant;
use thiserror::Error;

/// Placeholder E_c when retrieval produced nothing or was disabled.
pub const NO_EVIDENCE_SENTINEL: &str = "NO RETRIEVED EVIDENCE";
/// Placeholder consolidated E_p when stage 1 is disabled.
pub const NO_PARAMETER_EVIDENCE: &str = "(no parameter evidence)";
/// Rationale fed to synthesis when stage 3 is disabled.
pub const CONFLICT_DISABLED_RATIONALE: &str = "(conflict detection disabled)";
/// Rationale recorded when lenient parsing swallowed a flagless detector output.
pub const PARSE_FAILURE_RATIONALE: &str = "<parse failure>";

const VANILLA_TEMPLATE: &str = "\
Task: Answer the question using the retrieved context passages below.

Context Passages:
{passages}

Question: {question}

Answer:";

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("{stage} backend call failed: {source}")]
    Backend {
        stage: &'static str,
        #[source]
        source: BackendError,
        partial_answers: Vec<String>,
    },
    #[error("conflict detector output has no flag line (strict mode, after retry)")]
    ConflictUnparseable { raw: String },
    #[error("cannot merge parameter answers: every entry normalizes to empty")]
    AllAnswersEmpty,
    #[error("retrieval failed: {0}")]
    Retrieval(#[from] crate::retrieval::RetrievalError),
    #[error("template error: {0}")]
    Template(String),
    #[error("invalid pipeline input: {0}")]
    InvalidInput(String),
}

/// Parameter-aware evidence: the raw answer list plus its merged form.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParameterEvidence {
    pub answers: Vec<String>,
    pub merged: Vec<String>,
    pub consolidated_text: String,
}

impl ParameterEvidence {
    /// Sentinel used when stage 1 is disabled.
    pub fn sentinel() -> Self {
        Self {
            answers: Vec::new(),
            merged: Vec::new(),
            consolidated_text: NO_PARAMETER_EVIDENCE.to_string(),
        }
    }
}

/// Context-aware evidence distilled from retrieved passages.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ContextEvidence {
    pub text: String,
    pub source_passages: Vec<String>,
    pub augmented_note: Option<String>,
    pub sentinel: bool,
}

impl ContextEvidence {
    pub fn sentinel() -> Self {
        Self {
            text: NO_EVIDENCE_SENTINEL.to_string(),
            source_passages: Vec::new(),
            augmented_note: None,
            sentinel: true,
        }
    }

    /// Evidence text with the conflict note appended when present.
    pub fn rendered(&self) -> String {
        match &self.augmented_note {
            Some(note) => format!("{}\n\n{note}", self.text),
            None => self.text.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParseStatus {
    Clean,
    LenientDefault,
    Error,
}

/// Conflict flag and rationale from the detector.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ConflictReport {
    pub flag: u8,
    pub rationale: String,
    pub raw_output: String,
    pub parse_status: ParseStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    CareRag,
    NoRag,
    VanillaRag,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageToggles {
    pub stage1: bool,
    pub stage2: bool,
    pub stage3: bool,
}

impl Default for StageToggles {
    fn default() -> Self {
        Self {
            stage1: true,
            stage2: true,
            stage3: true,
        }
    }
}

/// Per-purpose sampling parameters with a shared default.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SamplingPlan {
    pub default: SamplingParams,
    #[serde(default)]
    pub overrides: BTreeMap<PurposeTag, SamplingParams>,
}

impl SamplingPlan {
    pub fn params_for(&self, purpose: PurposeTag) -> SamplingParams {
        self.overrides.get(&purpose).copied().unwrap_or(self.default)
    }
}

/// Everything a stage operation needs to issue completions.
pub struct StageContext<'a> {
    pub generator: &'a Backend,
    pub detector: &'a Backend,
    pub model_id: &'a str,
    pub detector_model_id: &'a str,
    pub templates: &'a TemplateSet,
    pub sampling: &'a SamplingPlan,
    pub strict_parsing: bool,
}

impl<'a> StageContext<'a> {
    fn call(
        &self,
        backend: &Backend,
        model_id: &str,
        purpose: PurposeTag,
        prompt: String,
        calls: &mut Vec<CallTrace>,
    ) -> Result<String, BackendError> {
        let request = CompletionRequest::new(
            model_id,
            prompt.clone(),
            self.sampling.params_for(purpose),
            purpose,
        );
        let digest = crate::backend::cache_key(&request);
        let result = backend.complete(&request)?;
        calls.push(CallTrace {
            purpose,
            prompt,
            completion: result.text.clone(),
            digest,
            from_cache: result.from_cache,
            latency_ms: result.latency_ms,
            timestamp_unix_ms: now_unix_ms(),
        });
        Ok(result.text)
    }

    fn generate(
        &self,
        purpose: PurposeTag,
        prompt: String,
        calls: &mut Vec<CallTrace>,
    ) -> Result<String, BackendError> {
        self.call(self.generator, self.model_id, purpose, prompt, calls)
    }

    fn detect(
        &self,
        prompt: String,
        calls: &mut Vec<CallTrace>,
    ) -> Result<String, BackendError> {
        self.call(
            self.detector,
            self.detector_model_id,
            PurposeTag::Conflict,
            prompt,
            calls,
        )
    }
}

fn numbered_list(items: &[String]) -> String {
    items
        .iter()
        .enumerate()
        .map(|(i, item)| format!("{}. {item}", i + 1))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Stage I: one initial answer, then n-1 iterative answers each shown the
/// running evidence list, followed by a merge.
pub fn elicit_parameter_evidence(
    question: &str,
    n: usize,
    cx: &StageContext,
    calls: &mut Vec<CallTrace>,
) -> Result<ParameterEvidence, PipelineError> {
    if n < 1 {
        return Err(PipelineError::InvalidInput("n must be >= 1".into()));
    }
    let mut answers: Vec<String> = Vec::with_capacity(n);
    let backend_err = |answers: &[String]| {
        let partial = answers.to_vec();
        move |source: BackendError| PipelineError::Backend {
            stage: "stage1",
            source,
            partial_answers: partial.clone(),
        }
    };

    let init_prompt = cx.templates.init.render(&[("question", question)]);
    let a0 = cx
        .generate(PurposeTag::Init, init_prompt, calls)
        .map_err(backend_err(&answers))?;
    answers.push(a0);

    for _ in 1..n {
        let listed = numbered_list(&answers);
        let prompt = cx.templates.iter.render(&[
            ("question", question),
            ("previous_parameter_answers", &listed),
        ]);
        let next = cx
            .generate(PurposeTag::Iter, prompt, calls)
            .map_err(backend_err(&answers))?;
        answers.push(next);
    }

    let (merged, consolidated_text) = merge_parameter_evidence(&answers)?;
    Ok(ParameterEvidence {
        answers,
        merged,
        consolidated_text,
    })
}

/// Deduplicate answers by normalized form, keeping the first occurrence
/// verbatim, and render the merged list as numbered "Perspective i:" lines.
pub fn merge_parameter_evidence(
    answers: &[String],
) -> Result<(Vec<String>, String), PipelineError> {
    if answers.is_empty() || answers.iter().all(|a| a.trim().is_empty()) {
        return Err(PipelineError::AllAnswersEmpty);
    }
    let mut merged: Vec<String> = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    for answer in answers {
        if seen.insert(normalize_answer(answer)) {
            merged.push(answer.clone());
        }
    }
    let consolidated = merged
        .iter()
        .enumerate()
        .map(|(i, a)| format!("Perspective {}: {a}", i + 1))
        .collect::<Vec<_>>()
        .join("\n");
    Ok((merged, consolidated))
}

/// Render passages as bullets in rank order for the refinement prompt.
pub fn render_passage_bullets(passages: &[RetrievedPassage]) -> String {
    passages
        .iter()
        .map(|p| match &p.doc.title {
            Some(title) => format!("- {title}: {}", p.doc.text),
            None => format!("- {}", p.doc.text),
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Stage II: distill retrieved passages into context-aware evidence. Empty
/// input short-circuits to the sentinel without a backend call.
pub fn refine_context(
    question: &str,
    passages: &[RetrievedPassage],
    cx: &StageContext,
    calls: &mut Vec<CallTrace>,
) -> Result<ContextEvidence, PipelineError> {
    if passages.is_empty() {
        return Ok(ContextEvidence::sentinel());
    }
    let bullets = render_passage_bullets(passages);
    let prompt = cx.templates.refine.render(&[
        ("question", question),
        ("context_evidences", &bullets),
    ]);
    let text = cx
        .generate(PurposeTag::Refine, prompt, calls)
        .map_err(|source| PipelineError::Backend {
            stage: "stage2",
            source,
            partial_answers: Vec::new(),
        })?;
    Ok(ContextEvidence {
        text,
        source_passages: passages.iter().map(|p| p.doc.doc_id.clone()).collect(),
        augmented_note: None,
        sentinel: false,
    })
}

/// Stage III: ask the detector whether the two evidence sources contradict.
///
/// Strict mode retries a flagless output once and then fails; lenient mode
/// defaults to no-conflict with a parse-failure marker.
pub fn detect_conflict(
    question: &str,
    parameter: &ParameterEvidence,
    context: &ContextEvidence,
    cx: &StageContext,
    calls: &mut Vec<CallTrace>,
) -> Result<ConflictReport, PipelineError> {
    let prompt = cx.templates.conflict.render(&[
        ("question", question),
        ("consolidated_parameter_response", &parameter.consolidated_text),
        ("context_aware_evidence_summary", &context.text),
    ]);
    let backend_err = |source: BackendError| PipelineError::Backend {
        stage: "stage3",
        source,
        partial_answers: Vec::new(),
    };
    let raw = cx.detect(prompt.clone(), calls).map_err(backend_err)?;
    if let Some(report) = clean_report(&raw) {
        return Ok(report);
    }
    if cx.strict_parsing {
        let retry = cx.detect(prompt, calls).map_err(backend_err)?;
        if let Some(report) = clean_report(&retry) {
            return Ok(report);
        }
        return Err(PipelineError::ConflictUnparseable { raw: retry });
    }
    Ok(ConflictReport {
        flag: 0,
        rationale: PARSE_FAILURE_RATIONALE.to_string(),
        raw_output: raw,
        parse_status: ParseStatus::LenientDefault,
    })
}

fn clean_report(raw: &str) -> Option<ConflictReport> {
    parse_conflict_output(raw).map(|(flag, rationale)| ConflictReport {
        flag,
        rationale: if rationale.is_empty() {
            "(no rationale provided)".to_string()
        } else {
            rationale
        },
        raw_output: raw.to_string(),
        parse_status: ParseStatus::Clean,
    })
}

/// Append (or replace) the conflict note on the context evidence.
pub fn augment_context(mut context: ContextEvidence, rationale: &str) -> ContextEvidence {
    let note = if rationale.trim().is_empty() {
        "CONFLICT NOTE: (unspecified)".to_string()
    } else {
        format!("CONFLICT NOTE: {rationale}")
    };
    context.augmented_note = Some(note);
    context
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub final_answer: String,
    pub reasoning: String,
    pub uncertainty: String,
    pub raw: String,
    pub labels_found: bool,
}

/// Stage IV: synthesize the final answer from both evidence sources and the
/// conflict report, then split the labeled output sections.
pub fn synthesize(
    question: &str,
    parameter: &ParameterEvidence,
    context: &ContextEvidence,
    report: &ConflictReport,
    cx: &StageContext,
    calls: &mut Vec<CallTrace>,
) -> Result<SynthesisOutcome, PipelineError> {
    let summary = context.rendered();
    let flag = report.flag.to_string();
    let prompt = cx.templates.synth.render(&[
        ("question", question),
        ("consolidated_parameter_response", &parameter.consolidated_text),
        ("context_aware_evidence_summary", &summary),
        ("delta_c", &flag),
        ("r_c", &report.rationale),
    ]);
    let raw = cx
        .generate(PurposeTag::Synth, prompt, calls)
        .map_err(|source| PipelineError::Backend {
            stage: "synthesis",
            source,
            partial_answers: Vec::new(),
        })?;
    let sections = parse_synthesis_output(&raw);
    Ok(SynthesisOutcome {
        final_answer: sections.final_answer,
        reasoning: sections.reasoning,
        uncertainty: sections.uncertainty,
        raw,
        labels_found: sections.labels_found,
    })
}

/// Execute the configured pipeline for one instance. Never panics or
/// returns an error: failures are recorded in the trace's error field.
pub fn run_pipeline(instance: &QAInstance, config: &RunConfig, env: &RunEnv) -> PipelineTrace {
    let started = now_unix_ms();
    let clock = Instant::now();
    let mut trace = PipelineTrace::new(&instance.id, &instance.question);
    trace.preset = config.preset;
    trace.stage_toggles = config.stages;

    let plan = config.sampling_plan();
    let cx = StageContext {
        generator: &env.generator,
        detector: &env.detector,
        model_id: &config.backend.model_id,
        detector_model_id: config.detector_model_id(),
        templates: &env.templates,
        sampling: &plan,
        strict_parsing: config.strict_parsing,
    };

    let outcome = match config.preset {
        Preset::CareRag => care_rag_flow(instance, config, env, &cx, &mut trace),
        Preset::NoRag => no_rag_flow(instance, &cx, &mut trace),
        Preset::VanillaRag => vanilla_flow(instance, config, env, &cx, &mut trace),
    };
    if let Err(err) = outcome {
        if let PipelineError::Backend { partial_answers, .. } = &err {
            if !partial_answers.is_empty() && trace.parameter_evidence.is_none() {
                trace.parameter_evidence = Some(ParameterEvidence {
                    answers: partial_answers.clone(),
                    merged: Vec::new(),
                    consolidated_text: String::new(),
                });
            }
        }
        trace.error = Some(err.to_string());
    }

    trace.timing.started_unix_ms = started;
    trace.timing.wall_ms = clock.elapsed().as_millis() as u64;
    trace
}

fn care_rag_flow(
    instance: &QAInstance,
    config: &RunConfig,
    env: &RunEnv,
    cx: &StageContext,
    trace: &mut PipelineTrace,
) -> Result<(), PipelineError> {
    let question = &instance.question;

    // Stage I
    let parameter = if config.stages.stage1 {
        trace.stages.stage1 = StageStatus::Error;
        let evidence = elicit_parameter_evidence(question, config.n, cx, &mut trace.calls)?;
        trace.stages.stage1 = StageStatus::Executed;
        evidence
    } else {
        ParameterEvidence::sentinel()
    };
    trace.parameter_evidence = Some(parameter.clone());

    // Stage II
    let context = if config.stages.stage2 {
        trace.stages.stage2 = StageStatus::Error;
        let retriever = env
            .retriever
            .as_ref()
            .ok_or_else(|| PipelineError::InvalidInput("stage2 enabled without a retriever".into()))?;
        let passages = retriever.retrieve(question, config.k)?;
        trace.retrieved = Some(passages.clone());
        let evidence = refine_context(question, &passages, cx, &mut trace.calls)?;
        trace.stages.stage2 = StageStatus::Executed;
        evidence
    } else {
        ContextEvidence::sentinel()
    };
    trace.context_evidence = Some(context.clone());

    // Stage III
    let (context, report) = if config.stages.stage3 {
        trace.stages.stage3 = StageStatus::Error;
        let report = detect_conflict(question, &parameter, &context, cx, &mut trace.calls)
            .inspect_err(|err| {
                if let PipelineError::ConflictUnparseable { raw } = err {
                    trace.conflict = Some(ConflictReport {
                        flag: 0,
                        rationale: String::new(),
                        raw_output: raw.clone(),
                        parse_status: ParseStatus::Error,
                    });
                }
            })?;
        trace.stages.stage3 = StageStatus::Executed;
        trace.conflict = Some(report.clone());
        let context = if report.flag == 1 {
            let augmented = augment_context(context, &report.rationale);
            trace.context_evidence = Some(augmented.clone());
            augmented
        } else {
            context
        };
        (context, report)
    } else {
        let synthetic = ConflictReport {
            flag: 0,
            rationale: CONFLICT_DISABLED_RATIONALE.to_string(),
            raw_output: String::new(),
            parse_status: ParseStatus::Clean,
        };
        (context, synthetic)
    };

    // Stage IV
    trace.stages.synthesis = StageStatus::Error;
    let synth = synthesize(question, &parameter, &context, &report, cx, &mut trace.calls)?;
    trace.stages.synthesis = StageStatus::Executed;
    if !synth.labels_found {
        trace
            .warnings
            .push("synthesis output missing 'Final Answer:' label; whole completion used".into());
    }
    trace.final_answer = Some(synth.final_answer);
    trace.synthesis = Some(SynthesisFields {
        reasoning: synth.reasoning,
        uncertainty: synth.uncertainty,
        labels_found: synth.labels_found,
    });
    Ok(())
}

fn no_rag_flow(
    instance: &QAInstance,
    cx: &StageContext,
    trace: &mut PipelineTrace,
) -> Result<(), PipelineError> {
    trace.stages.stage1 = StageStatus::Error;
    let prompt = cx.templates.init.render(&[("question", instance.question.as_str())]);
    let answer = cx
        .generate(PurposeTag::Init, prompt, &mut trace.calls)
        .map_err(|source| PipelineError::Backend {
            stage: "stage1",
            source,
            partial_answers: Vec::new(),
        })?;
    trace.stages.stage1 = StageStatus::Executed;
    trace.parameter_evidence = Some(ParameterEvidence {
        answers: vec![answer.clone()],
        merged: vec![answer.clone()],
        consolidated_text: format!("Perspective 1: {answer}"),
    });
    trace.final_answer = Some(answer);
    Ok(())
}

fn vanilla_flow(
    instance: &QAInstance,
    config: &RunConfig,
    env: &RunEnv,
    cx: &StageContext,
    trace: &mut PipelineTrace,
) -> Result<(), PipelineError> {
    trace.stages.stage2 = StageStatus::Error;
    let retriever = env
        .retriever
        .as_ref()
        .ok_or_else(|| PipelineError::InvalidInput("vanilla_rag requires a retriever".into()))?;
    let passages = retriever.retrieve(&instance.question, config.k)?;
    trace.retrieved = Some(passages.clone());
    trace.stages.stage2 = StageStatus::Skipped; // retrieval only, no refinement call

    trace.stages.synthesis = StageStatus::Error;
    let prompt = VANILLA_TEMPLATE
        .replace("{passages}", &render_passage_bullets(&passages))
        .replace("{question}", &instance.question);
    let answer = cx
        .generate(PurposeTag::Synth, prompt, &mut trace.calls)
        .map_err(|source| PipelineError::Backend {
            stage: "synthesis",
            source,
            partial_answers: Vec::new(),
        })?;
    trace.stages.synthesis = StageStatus::Executed;
    trace.final_answer = Some(answer);
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{Backend, ScriptRule};
    use crate::retrieval::CorpusDocument;

    struct Fixture {
        generator: Backend,
        detector: Backend,
        templates: TemplateSet,
        sampling: SamplingPlan,
    }

    impl Fixture {
        fn new(rules: Vec<ScriptRule>) -> Self {
            let generator = Backend::scripted(rules.clone()).unwrap();
            let detector = Backend::scripted(rules).unwrap();
            Self {
                generator,
                detector,
                templates: TemplateSet::builtin(),
                sampling: SamplingPlan::default(),
            }
        }

        fn cx(&self) -> StageContext<'_> {
            StageContext {
                generator: &self.generator,
                detector: &self.detector,
                model_id: "model",
                detector_model_id: "detector-model",
                templates: &self.templates,
                sampling: &self.sampling,
                strict_parsing: true,
            }
        }
    }

    fn passage(id: &str, text: &str, rank: usize) -> RetrievedPassage {
        RetrievedPassage {
            doc: CorpusDocument {
                doc_id: id.to_string(),
                title: None,
                text: text.to_string(),
            },
            score: 1.0 / rank as f64,
            rank,
        }
    }

    #[test]
    fn elicit_single_answer() {
        let fixture = Fixture::new(vec![ScriptRule::contains(
            "using only your internal knowledge",
            "LeBron James",
        )]);
        let mut calls = Vec::new();
        let evidence = elicit_parameter_evidence(
            "Who scored the most points in their NBA career?",
            1,
            &fixture.cx(),
            &mut calls,
        )
        .unwrap();
        assert_eq!(evidence.answers, ["LeBron James"]);
        assert_eq!(evidence.merged, ["LeBron James"]);
        assert_eq!(evidence.consolidated_text, "Perspective 1: LeBron James");
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].purpose, PurposeTag::Init);
    }

    #[test]
    fn elicit_three_distinct_answers_issues_three_tagged_calls() {
        let fixture = Fixture::new(vec![
            ScriptRule::contains("using only your internal knowledge", "X"),
            ScriptRule::contains("2. Y", "Z"),
            ScriptRule::contains("more detailed/nuanced", "Y"),
        ]);
        let mut calls = Vec::new();
        let evidence = elicit_parameter_evidence("q?", 3, &fixture.cx(), &mut calls).unwrap();
        assert_eq!(evidence.answers, ["X", "Y", "Z"]);
        assert_eq!(
            calls.iter().map(|c| c.purpose).collect::<Vec<_>>(),
            [PurposeTag::Init, PurposeTag::Iter, PurposeTag::Iter]
        );
        // Running evidence rendered as a numbered list into the iter prompt.
        assert!(calls[1].prompt.contains("1. X"));
        assert!(calls[2].prompt.contains("1. X\n2. Y"));
    }

    #[test]
    fn elicit_dedups_repeated_answers() {
        let fixture = Fixture::new(vec![
            ScriptRule::contains("using only your internal knowledge", "Paris"),
            ScriptRule::contains("more detailed/nuanced", "Paris"),
        ]);
        let mut calls = Vec::new();
        let evidence = elicit_parameter_evidence("q?", 2, &fixture.cx(), &mut calls).unwrap();
        assert_eq!(evidence.answers, ["Paris", "Paris"]);
        assert_eq!(evidence.merged, ["Paris"]);
    }

    #[test]
    fn elicit_backend_failure_carries_partials() {
        let fixture = Fixture::new(vec![ScriptRule::contains(
            "using only your internal knowledge",
            "first",
        )]);
        // No rule matches the iter prompt, so the second call fails.
        let mut calls = Vec::new();
        let err = elicit_parameter_evidence("q?", 2, &fixture.cx(), &mut calls).unwrap_err();
        match err {
            PipelineError::Backend { stage, partial_answers, .. } => {
                assert_eq!(stage, "stage1");
                assert_eq!(partial_answers, ["first"]);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn merge_contract() {
        let strings = |v: &[&str]| v.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let (merged, _) = merge_parameter_evidence(&strings(&["A", "A"])).unwrap();
        assert_eq!(merged, ["A"]);

        let (merged, _) =
            merge_parameter_evidence(&strings(&["LeBron James", "lebron james."])).unwrap();
        assert_eq!(merged, ["LeBron James"]);

        let (merged, consolidated) = merge_parameter_evidence(&strings(&["A", "B"])).unwrap();
        assert_eq!(merged, ["A", "B"]);
        assert_eq!(consolidated, "Perspective 1: A\nPerspective 2: B");

        assert!(matches!(
            merge_parameter_evidence(&strings(&["", ""])),
            Err(PipelineError::AllAnswersEmpty)
        ));
        assert!(matches!(
            merge_parameter_evidence(&strings(&["", "  "])),
            Err(PipelineError::AllAnswersEmpty)
        ));
        assert!(matches!(
            merge_parameter_evidence(&[]),
            Err(PipelineError::AllAnswersEmpty)
        ));
    }

    #[test]
    fn refine_empty_passages_short_circuits() {
        let fixture = Fixture::new(vec![ScriptRule::contains("anything", "never used")]);
        let mut calls = Vec::new();
        let evidence = refine_context("q?", &[], &fixture.cx(), &mut calls).unwrap();
        assert!(evidence.sentinel);
        assert_eq!(evidence.text, NO_EVIDENCE_SENTINEL);
        assert!(calls.is_empty());
    }

    #[test]
    fn refine_renders_rank_ordered_bullets() {
        let fixture = Fixture::new(vec![ScriptRule::contains(
            "Context Refinement Prompt",
            "Retrieved evidences state Kareem Abdul-Jabbar was the all-time leading scorer (38,387 points). One passage indicates that as of 2023, James holds the record, suggesting a change.",
        )]);
        let passages = vec![
            passage("c1", "Kareem Abdul-Jabbar is the all-time leading scorer in the NBA, with 38,387 total points.", 1),
            passage("c3", "As of 2023, James holds the record.", 2),
        ];
        let mut calls = Vec::new();
        let evidence =
            refine_context("Who scored the most points in their NBA career?", &passages, &fixture.cx(), &mut calls)
                .unwrap();
        assert!(evidence.text.contains("Kareem Abdul-Jabbar"));
        assert!(evidence.text.contains("James holds the record"));
        assert_eq!(evidence.source_passages, ["c1", "c3"]);
        assert_eq!(calls.len(), 1);
        assert_eq!(calls[0].purpose, PurposeTag::Refine);
        let prompt = &calls[0].prompt;
        let first = prompt.find("- Kareem Abdul-Jabbar").unwrap();
        let second = prompt.find("- As of 2023").unwrap();
        assert!(first < second);
    }

    #[test]
    fn refine_handles_ambiguous_entity_case() {
        let fixture = Fixture::new(vec![ScriptRule::contains(
            "Context Refinement Prompt",
            "Two distinct individuals named Henry Feilden are mentioned: Colonel Henry Wemyss Feilden (1838-1921), a British Army officer and Arctic explorer, and Henry Master Feilden (1818-1875), a Conservative politician. The query is ambiguous without further specification.",
        )]);
        let passages = vec![
            passage("h1", "Colonel Henry Wemyss Feilden CB (1838-1921) was a British Army officer, naturalist and Arctic explorer.", 1),
            passage("h2", "Henry Master Feilden (1818-1875) was a Conservative politician.", 2),
        ];
        let mut calls = Vec::new();
        let evidence =
            refine_context("Who was Henry Feilden?", &passages, &fixture.cx(), &mut calls).unwrap();
        assert!(evidence.text.contains("Two distinct individuals"));
        assert!(evidence.text.contains("ambiguous"));
    }

    fn evidence_pair(parameter: &str, context: &str) -> (ParameterEvidence, ContextEvidence) {
        (
            ParameterEvidence {
                answers: vec![parameter.to_string()],
                merged: vec![parameter.to_string()],
                consolidated_text: format!("Perspective 1: {parameter}"),
            },
            ContextEvidence {
                text: context.to_string(),
                source_passages: vec!["c1".into()],
                augmented_note: None,
                sentinel: false,
            },
        )
    }

    #[test]
    fn detect_conflict_nba_case_flags_one() {
        let fixture = Fixture::new(vec![ScriptRule::contains(
            "Conflict Detection Prompt",
            "Conflict: 1\nparameter knowledge states LeBron James, while context-derived information states Kareem Abdul-Jabbar. These conflict.",
        )]);
        let (ep, ec) = evidence_pair(
            "LeBron James",
            "According to retrieved text, Kareem Abdul-Jabbar is the top scorer.",
        );
        let mut calls = Vec::new();
        let report = detect_conflict(
            "Who scored the most points in their NBA career?",
            &ep,
            &ec,
            &fixture.cx(),
            &mut calls,
        )
        .unwrap();
        assert_eq!(report.flag, 1);
        assert!(report.rationale.contains("Kareem Abdul-Jabbar"));
        assert_eq!(report.parse_status, ParseStatus::Clean);
        // Detector sees the consolidated perspectives and the evidence text.
        assert!(calls[0].prompt.contains("Perspective 1: LeBron James"));
        assert!(calls[0].prompt.contains("top scorer"));
    }

    #[test]
    fn detect_conflict_consistent_sources_flag_zero() {
        let fixture = Fixture::new(vec![ScriptRule::contains(
            "Conflict Detection Prompt",
            "Conflict: 0\nNo conflict detected. Both parameter knowledge and context-derived information consistently identify Stephen Stills as the author and Judy Collins as the subject of the song.",
        )]);
        let (ep, ec) = evidence_pair(
            "Stephen Stills wrote it about Judy Collins, his former girlfriend.",
            "The song \"Suite: Judy Blue Eyes\" was written by Stephen Stills. It references Judy Collins and their relationship.",
        );
        let mut calls = Vec::new();
        let report = detect_conflict(
            "Who was \"Suite: Judy Blue Eyes\" written about?",
            &ep,
            &ec,
            &fixture.cx(),
            &mut calls,
        )
        .unwrap();
        assert_eq!(report.flag, 0);
        assert!(report.rationale.contains("Judy Collins"));
    }

    #[test]
    fn detect_conflict_strict_retries_once_then_errors() {
        let fixture = Fixture::new(vec![ScriptRule::contains(
            "Conflict Detection Prompt",
            "no flag here",
        )]);
        let (ep, ec) = evidence_pair("a", "b");
        let mut calls = Vec::new();
        let err = detect_conflict("q?", &ep, &ec, &fixture.cx(), &mut calls).unwrap_err();
        assert!(matches!(err, PipelineError::ConflictUnparseable { .. }));
        assert_eq!(calls.len(), 2);
    }

    #[test]
    fn detect_conflict_lenient_defaults_to_zero() {
        let fixture = Fixture::new(vec![ScriptRule::contains(
            "Conflict Detection Prompt",
            "no flag here",
        )]);
        let (ep, ec) = evidence_pair("a", "b");
        let mut calls = Vec::new();
        let mut cx = fixture.cx();
        cx.strict_parsing = false;
        let report = detect_conflict("q?", &ep, &ec, &cx, &mut calls).unwrap();
        assert_eq!(report.flag, 0);
        assert_eq!(report.rationale, PARSE_FAILURE_RATIONALE);
        assert_eq!(report.parse_status, ParseStatus::LenientDefault);
        assert_eq!(calls.len(), 1);
    }

    #[test]
    fn augment_sets_replaces_and_defaults_the_note() {
        let (_, ec) = evidence_pair("a", "grounded text");
        let once = augment_context(ec, "X");
        assert_eq!(once.augmented_note.as_deref(), Some("CONFLICT NOTE: X"));
        assert_eq!(once.text, "grounded text");
        let twice = augment_context(once, "Y");
        assert_eq!(twice.augmented_note.as_deref(), Some("CONFLICT NOTE: Y"));
        let blank = augment_context(twice, "");
        assert_eq!(blank.augmented_note.as_deref(), Some("CONFLICT NOTE: (unspecified)"));
    }

    #[test]
    fn synthesize_no_conflict_case() {
        let fixture = Fixture::new(vec![ScriptRule::contains(
            "Final Answer Synthesis Prompt",
            "Final Answer: Simon & Garfunkel were the original artists of the song \"Sound of Silence,\" released in 1964.\nReasoning for Final Answer: Both evidence sources consistently identify Simon & Garfunkel and the conflict flag confirms no discrepancy.\nAmbiguity/Uncertainty Assessment: None detected.",
        )]);
        let (ep, ec) = evidence_pair(
            "Simon & Garfunkel",
            "Based on the provided context, Simon & Garfunkel are identified as the original artists of \"Sound of Silence\" released in 1964. No conflicting information found in context.",
        );
        let report = ConflictReport {
            flag: 0,
            rationale: "No conflict detected between parameter knowledge and context-derived information.".into(),
            raw_output: String::new(),
            parse_status: ParseStatus::Clean,
        };
        let mut calls = Vec::new();
        let out = synthesize(
            "Who is the original artist of Sound of Silence, released in 1964?",
            &ep,
            &ec,
            &report,
            &fixture.cx(),
            &mut calls,
        )
        .unwrap();
        assert!(out.final_answer.contains("Simon & Garfunkel"));
        assert!(out.labels_found);
        assert!(calls[0].prompt.contains("Conflict Detection Flag (delta_c): 0"));
    }

    #[test]
    fn synthesize_conflict_case_substitutes_flag_and_note() {
        let fixture = Fixture::new(vec![ScriptRule::contains(
            "Final Answer Synthesis Prompt",
            "Final Answer: LeBron James is NBA's all-time leading scorer.\nReasoning for Final Answer: The historical record belongs to Kareem Abdul-Jabbar but has since been surpassed.\nAmbiguity/Uncertainty Assessment: None.",
        )]);
        let (ep, ec) = evidence_pair("LeBron James", "Kareem is the top scorer per context.");
        let ec = augment_context(ec, "Sources disagree about the record holder.");
        let report = ConflictReport {
            flag: 1,
            rationale: "Sources disagree about the record holder.".into(),
            raw_output: String::new(),
            parse_status: ParseStatus::Clean,
        };
        let mut calls = Vec::new();
        let out = synthesize("q?", &ep, &ec, &report, &fixture.cx(), &mut calls).unwrap();
        assert!(out.final_answer.contains("LeBron James"));
        assert!(out.reasoning.contains("Kareem"));
        let prompt = &calls[0].prompt;
        assert!(prompt.contains("Conflict Detection Flag (delta_c): 1"));
        assert!(prompt.contains("CONFLICT NOTE: Sources disagree"));
    }

    #[test]
    fn synthesize_without_labels_traces_fallback() {
        let fixture = Fixture::new(vec![ScriptRule::contains(
            "Final Answer Synthesis Prompt",
            "a bare unlabeled completion",
        )]);
        let (ep, ec) = evidence_pair("a", "b");
        let report = ConflictReport {
            flag: 0,
            rationale: "r".into(),
            raw_output: String::new(),
            parse_status: ParseStatus::Clean,
        };
        let mut calls = Vec::new();
        let out = synthesize("q?", &ep, &ec, &report, &fixture.cx(), &mut calls).unwrap();
        assert!(!out.labels_found);
        assert_eq!(out.final_answer, "a bare unlabeled completion");
    }
}
