//! Prompt templates with named `{placeholder}` slots.
//!
//! Defaults are embedded; a template directory with files named `init.txt`,
//! `iter.txt`, `ref.txt`, `conflict.txt`, `synth.txt` overrides them per
//! file.

use super::PipelineError;
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const INIT_TEMPLATE: &str = "\
Task: Provide a concise and direct answer to the following question using only your internal knowledge.

Question: {question}

Answer (Initial - a_0):";

pub const ITER_TEMPLATE: &str = "\
Task: Based on your previous answer(s) and your internal knowledge, provide a different or more detailed/nuanced answer to the following question.

Question: {question}

Previous parameter Answer(s) (E_p so far): {previous_parameter_answers}

Answer (Iterative - a_i):";

pub const REF_TEMPLATE: &str = "\
Context Refinement Prompt

Instruction: Analyze the provided Context thoroughly in relation to the Question. Your goal is to extract the most relevant factual information, identify any ambiguities or limitations within the context, and conclude with the most likely answer(s) or key insights that can be *purely grounded in the provided Context*. If no complete answer is available from the context, state that and explain why.

Retrieved Context evidences (C):
{context_evidences}

Question (q):
{question}

Your Distilled Context-Aware evidence (E_c) based *only* on the Retrieved Context should include:
- Key factual claims relevant to the Question.
- Identified ambiguities or limitations in the provided Context.
- A concluding summary or answer candidate(s) strictly derived from the Context.";

pub const CONFLICT_TEMPLATE: &str = "\
Conflict Detection Prompt

Instruction: Evaluate if the \"parameter Knowledge Response\" contradicts the \"Context-derived Response\" for the given Question. Consider factual differences (e.g., names, dates, values), temporal mismatches, or significant semantic inconsistencies.
Output 'Conflict: 1' if a contradiction is found.
Output 'Conflict: 0' if there is no contradiction or if they are consistent.
Provide a brief step-by-step reasoning for your decision.

Question (q): {question}

parameter Knowledge Response (Consolidated from E_p): {consolidated_parameter_response}

Context-derived Response (from E_c): {context_aware_evidence_summary}

Analysis and Conflict Decision (delta_c, r_c):";

pub const SYNTH_TEMPLATE: &str = "\
Final Answer Synthesis Prompt

Contextual Note: A potential conflict (indicated by delta_c) between internal parameter knowledge (E_p) and external information (E_c) might have been detected, with rationale r_c.

Your Task is to Synthesize the Best Final Answer (a_hat):
1. Based on all inputs, identify the best-supported single candidate answer.
2. Consider information recency, source reliability, and overall coherence, especially if a conflict (delta_c=1) was detected.
3. If conflict (delta_c=1): Explicitly address the discrepancy from r_c. Attempt to resolve it by selecting more credible information or state remaining uncertainty.
4. If no conflict (delta_c=0): Primarily ground your answer in E_c, using E_p as confirmation.
5. Provide concise reasoning for your chosen answer, citing relevant inputs (E_p, E_c, r_c). Clearly state any remaining ambiguity or temporal uncertainty.

Inputs Provided:
- Question (q): {question}
- parameter Knowledge Response (Consolidated E_p): {consolidated_parameter_response}
- Context-derived Response (E_c): {context_aware_evidence_summary}
- Conflict Detection Flag (delta_c): {delta_c}
- Conflict Rationale (r_c): {r_c}

Required Output Format for Final Answer (a_hat):
- Final Answer: ...
- Reasoning for Final Answer: ... (Address conflict per r_c if delta_c=1)
- Ambiguity/Uncertainty Assessment: ... (If any)";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Init,
    Iter,
    Ref,
    Conflict,
    Synth,
}

impl TemplateId {
    pub fn required_placeholders(self) -> &'static [&'static str] {
        match self {
            TemplateId::Init => &["question"],
            TemplateId::Iter => &["question", "previous_parameter_answers"],
            TemplateId::Ref => &["question", "context_evidences"],
            TemplateId::Conflict => &[
                "question",
                "consolidated_parameter_response",
                "context_aware_evidence_summary",
            ],
            TemplateId::Synth => &[
                "question",
                "consolidated_parameter_response",
                "context_aware_evidence_summary",
                "delta_c",
                "r_c",
            ],
        }
    }

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateId::Init => "init.txt",
            TemplateId::Iter => "iter.txt",
            TemplateId::Ref => "ref.txt",
            TemplateId::Conflict => "conflict.txt",
            TemplateId::Synth => "synth.txt",
        }
    }

    fn builtin_body(self) -> &'static str {
        match self {
            TemplateId::Init => INIT_TEMPLATE,
            TemplateId::Iter => ITER_TEMPLATE,
            TemplateId::Ref => REF_TEMPLATE,
            TemplateId::Conflict => CONFLICT_TEMPLATE,
            TemplateId::Synth => SYNTH_TEMPLATE,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
}

impl PromptTemplate {
    /// Validate that the body names every placeholder the template requires.
    pub fn new(id: TemplateId, body: impl Into<String>) -> Result<Self, PipelineError> {
        let body = body.into();
        for name in id.required_placeholders() {
            if !body.contains(&format!("{{{name}}}")) {
                return Err(PipelineError::Template(format!(
                    "{} template is missing required placeholder {{{name}}}",
                    id.file_name()
                )));
            }
        }
        Ok(Self { id, body })
    }

    pub fn builtin(id: TemplateId) -> Self {
        Self {
            id,
            body: id.builtin_body().to_string(),
        }
    }

    /// Substitute `{name}` slots; unknown slots are left verbatim.
    pub fn render(&self, vars: &[(&str, &str)]) -> String {
        let mut out = self.body.clone();
        for (name, value) in vars {
            out = out.replace(&format!("{{{name}}}"), value);
        }
        out
    }
}

/// The five stage templates used by one run.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    pub init: PromptTemplate,
    pub iter: PromptTemplate,
    pub refine: PromptTemplate,
    pub conflict: PromptTemplate,
    pub synth: PromptTemplate,
}

impl Default for TemplateSet {
    fn default() -> Self {
        Self::builtin()
    }
}

impl TemplateSet {
    pub fn builtin() -> Self {
        Self {
            init: PromptTemplate::builtin(TemplateId::Init),
            iter: PromptTemplate::builtin(TemplateId::Iter),
            refine: PromptTemplate::builtin(TemplateId::Ref),
            conflict: PromptTemplate::builtin(TemplateId::Conflict),
            synth: PromptTemplate::builtin(TemplateId::Synth),
        }
    }

    /// Load from a directory; files present override the embedded defaults,
    /// missing files fall back to them.
    pub fn from_dir(dir: &Path) -> Result<Self, PipelineError> {
        let load = |id: TemplateId| -> Result<PromptTemplate, PipelineError> {
            let path = dir.join(id.file_name());
            if path.is_file() {
                let body = std::fs::read_to_string(&path).map_err(|e| {
                    PipelineError::Template(format!("cannot read {}: {e}", path.display()))
                })?;
                PromptTemplate::new(id, body)
            } else {
                Ok(PromptTemplate::builtin(id))
            }
        };
        Ok(Self {
            init: load(TemplateId::Init)?,
            iter: load(TemplateId::Iter)?,
            refine: load(TemplateId::Ref)?,
            conflict: load(TemplateId::Conflict)?,
            synth: load(TemplateId::Synth)?,
        })
    }
}
