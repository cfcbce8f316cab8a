//! Deterministic scripted backend for tests and offline replays.

use super::{BackendError, Completer, CompletionRequest, RawCompletion};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Prompt predicate for one scripted rule.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Literal substring match anywhere in the prompt.
    Contains(String),
    /// Whole-prompt equality.
    Exact(String),
}

impl Matcher {
    pub fn matches(&self, prompt: &str) -> bool {
        match self {
            Matcher::Contains(s) => prompt.contains(s.as_str()),
            Matcher::Exact(s) => prompt == s,
        }
    }
}

/// `(matcher, response)` pair; the first matching rule wins.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScriptRule {
    #[serde(flatten)]
    pub matcher: Matcher,
    pub response: String,
}

impl ScriptRule {
    pub fn contains(pattern: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Contains(pattern.into()),
            response: response.into(),
        }
    }

    pub fn exact(prompt: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            matcher: Matcher::Exact(prompt.into()),
            response: response.into(),
        }
    }
}

/// Ordered rule list; immutable after construction.
pub struct ScriptedBackend {
    rules: Vec<ScriptRule>,
}

impl ScriptedBackend {
    pub fn new(rules: Vec<ScriptRule>) -> Result<Self, BackendError> {
        if rules.is_empty() {
            return Err(BackendError::Config(
                "scripted backend requires at least one rule".into(),
            ));
        }
        Ok(Self { rules })
    }

    /// Load rules from a JSON file: an array of
    /// `{"contains"|"exact": <pattern>, "response": <text>}` objects.
    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let bytes = std::fs::read(path).map_err(|e| {
            BackendError::Config(format!("cannot read transcript {}: {e}", path.display()))
        })?;
        let rules: Vec<ScriptRule> = serde_json::from_slice(&bytes).map_err(|e| {
            BackendError::Config(format!("malformed transcript {}: {e}", path.display()))
        })?;
        Self::new(rules)
    }
}

impl Completer for ScriptedBackend {
    fn complete_raw(&self, request: &CompletionRequest) -> Result<RawCompletion, BackendError> {
        for rule in &self.rules {
            if rule.matcher.matches(&request.prompt) {
                return Ok(RawCompletion {
                    text: rule.response.clone(),
                    usage: None,
                });
            }
        }
        Err(BackendError::UnmatchedStimulus {
            purpose: request.purpose,
            excerpt: request.prompt.chars().take(80).collect(),
        })
    }

    fn is_network(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{PurposeTag, SamplingParams};

    fn request(prompt: &str) -> CompletionRequest {
        CompletionRequest::new("m", prompt, SamplingParams::default(), PurposeTag::Init)
    }

    #[test]
    fn first_matching_rule_wins() {
        let backend = ScriptedBackend::new(vec![
            ScriptRule::contains("Question: Q1", "A1"),
            ScriptRule::contains("Question", "generic"),
        ])
        .unwrap();
        let out = backend.complete_raw(&request("prefix Question: Q1 suffix")).unwrap();
        assert_eq!(out.text, "A1");
        let out = backend.complete_raw(&request("Question: Q2")).unwrap();
        assert_eq!(out.text, "generic");
    }

    #[test]
    fn earlier_rule_takes_precedence_on_overlap() {
        let backend = ScriptedBackend::new(vec![
            ScriptRule::contains("shared", "first"),
            ScriptRule::contains("shared", "second"),
        ])
        .unwrap();
        let out = backend.complete_raw(&request("a shared prompt")).unwrap();
        assert_eq!(out.text, "first");
    }

    #[test]
    fn empty_rule_list_is_config_error() {
        assert!(matches!(
            ScriptedBackend::new(vec![]),
            Err(BackendError::Config(_))
        ));
    }

    #[test]
    fn unmatched_prompt_errors() {
        let backend =
            ScriptedBackend::new(vec![ScriptRule::contains("internal knowledge", "LeBron James")])
                .unwrap();
        let err = backend.complete_raw(&request("nothing relevant")).unwrap_err();
        assert!(matches!(err, BackendError::UnmatchedStimulus { .. }));
    }

    #[test]
    fn exact_matcher_requires_whole_prompt() {
        let backend = ScriptedBackend::new(vec![ScriptRule::exact("exact prompt", "hit")]).unwrap();
        assert!(backend.complete_raw(&request("exact prompt")).is_ok());
        assert!(backend.complete_raw(&request("exact prompt plus")).is_err());
    }

    #[test]
    fn rule_file_round_trip() {
        let rules = vec![
            ScriptRule::contains("internal knowledge", "LeBron James"),
            ScriptRule::exact("p", "r"),
        ];
        let json = serde_json::to_string(&rules).unwrap();
        assert!(json.contains("\"contains\""));
        assert!(json.contains("\"exact\""));
        let parsed: Vec<ScriptRule> = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].response, "LeBron James");
    }
}
