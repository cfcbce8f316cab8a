//! Prompts for the repair classifier and the repair generator.
//!
//! Loadable from the template directory as `repair_classify.txt` and
//! `repair_generate.txt`; defaults embedded. The generate prompt labels the
//! question "Flagged Question:" so scripted tests can tell the two calls
//! apart with substring matchers.

use crate::pipeline::PipelineError;
use std::path::Path;

pub const CLASSIFY_TEMPLATE: &str = "\
Task: Judge whether the gold answer(s) below are still a correct and well-typed answer to the question, as of {reference_date}. An answer is \"outdated\" when later events have invalidated it, \"mismatched\" when it does not answer the question's actual intent or type, \"both\" when both apply, and \"none\" when it remains valid.

Question: {question}
Gold Answer(s): {gold_answers}

Respond in exactly this format:
Flag: <0 or 1>
Category: <mismatch | outdated | both | none>
Rationale: <brief explanation>";

pub const GENERATE_TEMPLATE: &str = "\
Task: The gold answer(s) for the question below were flagged as \"{category}\". Provide a corrected, accurate answer as of {reference_date}. If the question itself needs minimal refinement to be answerable, provide the refined question too; otherwise omit that line.

Flagged Question: {question}
Original Gold Answer(s): {gold_answers}

Respond in exactly this format:
Repaired Answer: <corrected answer>
Repaired Question: <refined question, only if changed>";

const CLASSIFY_FILE: &str = "repair_classify.txt";
const GENERATE_FILE: &str = "repair_generate.txt";

#[derive(Debug, Clone)]
pub struct RepairTemplates {
    pub classify: String,
    pub generate: String,
}

impl Default for RepairTemplates {
    fn default() -> Self {
        Self {
            classify: CLASSIFY_TEMPLATE.to_string(),
            generate: GENERATE_TEMPLATE.to_string(),
        }
    }
}

impl RepairTemplates {
    pub fn from_dir(dir: &Path) -> Result<Self, PipelineError> {
        let load = |file: &str, default: &str| -> Result<String, PipelineError> {
            let path = dir.join(file);
            if path.is_file() {
                std::fs::read_to_string(&path).map_err(|e| {
                    PipelineError::Template(format!("cannot read {}: {e}", path.display()))
                })
            } else {
                Ok(default.to_string())
            }
        };
        let templates = Self {
            classify: load(CLASSIFY_FILE, CLASSIFY_TEMPLATE)?,
            generate: load(GENERATE_FILE, GENERATE_TEMPLATE)?,
        };
        for (name, body, required) in [
            (CLASSIFY_FILE, &templates.classify, &["question", "gold_answers", "reference_date"][..]),
            (GENERATE_FILE, &templates.generate, &["question", "gold_answers", "reference_date", "category"][..]),
        ] {
            for placeholder in required {
                if !body.contains(&format!("{{{placeholder}}}")) {
                    return Err(PipelineError::Template(format!(
                        "{name} is missing required placeholder {{{placeholder}}}"
                    )));
                }
            }
        }
        Ok(templates)
    }

    pub fn render_classify(&self, question: &str, gold_answers: &str, reference_date: &str) -> String {
        self.classify
            .replace("{question}", question)
            .replace("{gold_answers}", gold_answers)
            .replace("{reference_date}", reference_date)
    }

    pub fn render_generate(
        &self,
        question: &str,
        gold_answers: &str,
        reference_date: &str,
        category: &str,
    ) -> String {
        self.generate
            .replace("{question}", question)
            .replace("{gold_answers}", gold_answers)
            .replace("{reference_date}", reference_date)
            .replace("{category}", category)
    }
}
