//! Strict parsers for detector and synthesizer outputs.

use std::sync::LazyLock;

static CONFLICT_RE: LazyLock<regex::Regex> =
    LazyLock::new(|| regex::Regex::new(r"(?i)Conflict:\s*(0|1)").expect("conflict regex"));

/// Extract the conflict flag and rationale from raw detector output.
///
/// The first line matching `Conflict:\s*(0|1)` (case-insensitive) carries
/// the flag; the rationale is everything else — any text after the match on
/// that line plus all remaining lines — trimmed. Returns `None` when no
/// flag line exists.
pub fn parse_conflict_output(raw: &str) -> Option<(u8, String)> {
    let mut flag = None;
    let mut rationale_parts: Vec<&str> = Vec::new();
    for line in raw.lines() {
        if flag.is_none() {
            if let Some(caps) = CONFLICT_RE.captures(line) {
                flag = Some(if &caps[1] == "1" { 1 } else { 0 });
                let rest = &line[caps.get(0).unwrap().end()..];
                if !rest.trim().is_empty() {
                    rationale_parts.push(rest);
                }
                continue;
            }
        }
        rationale_parts.push(line);
    }
    flag.map(|f| (f, rationale_parts.join("\n").trim().to_string()))
}

/// Labeled sections of a synthesis completion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SynthesisSections {
    pub final_answer: String,
    pub reasoning: String,
    pub uncertainty: String,
    /// False when no "Final Answer:" label was found and the whole
    /// completion was taken as the answer.
    pub labels_found: bool,
}

// Checked longest-first so "Reasoning for Final Answer:" never parses as
// "Final Answer:".
const LABELS_LONGEST_FIRST: [(usize, &str); 3] = [
    (2, "Ambiguity/Uncertainty Assessment"),
    (1, "Reasoning for Final Answer"),
    (0, "Final Answer"),
];

// Strip list bullets and bold markers so "- **Final Answer**: x" still parses.
fn strip_decoration(line: &str) -> &str {
    line.trim_start().trim_start_matches(['-', '*', '•']).trim_start()
}

fn match_label(line: &str) -> Option<(usize, &str)> {
    let body = strip_decoration(line);
    for (section, label) in LABELS_LONGEST_FIRST {
        // Tolerate "Label:" and bolded "Label**:".
        for suffix in [":", "**:"] {
            if let Some(rest) = body.strip_prefix(&format!("{label}{suffix}")) {
                return Some((section, rest.trim()));
            }
        }
    }
    None
}

/// Split a synthesis completion into its labeled sections. Content after a
/// label accumulates until the next label. When no "Final Answer:" label
/// exists the entire completion becomes the answer and `labels_found` is
/// false so callers can trace a warning.
pub fn parse_synthesis_output(raw: &str) -> SynthesisSections {
    let mut sections: [Vec<String>; 3] = [Vec::new(), Vec::new(), Vec::new()];
    let mut seen_final = false;
    let mut current: Option<usize> = None;
    for line in raw.lines() {
        match match_label(line) {
            Some((i, rest)) => {
                seen_final |= i == 0;
                current = Some(i);
                if !rest.is_empty() {
                    sections[i].push(rest.to_string());
                }
            }
            None => {
                if let Some(i) = current {
                    sections[i].push(line.to_string());
                }
            }
        }
    }
    if !seen_final {
        return SynthesisSections {
            final_answer: raw.trim().to_string(),
            reasoning: String::new(),
            uncertainty: String::new(),
            labels_found: false,
        };
    }
    let join = |lines: &[String]| lines.join("\n").trim().to_string();
    SynthesisSections {
        final_answer: join(&sections[0]),
        reasoning: join(&sections[1]),
        uncertainty: join(&sections[2]),
        labels_found: true,
    }
}
