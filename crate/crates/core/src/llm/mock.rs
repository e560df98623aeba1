//! Rule-table mock backend.
//!
//! Rules map a substring of the item under coding to a canned response, so
//! end-to-end tests get exactly computable agreement. Matching targets the
//! final item line of the prompt (the line before the answer cue), not the
//! codebook body, so example texts in the prompt never trigger a rule.

use serde::{Deserialize, Serialize};

use super::{BackendError, CompletionRequest, Transport};

/// First rule whose `contains` matches (case-insensitively) wins.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub contains: String,
    pub respond: String,
}

impl MockRule {
    pub fn new(contains: impl Into<String>, respond: impl Into<String>) -> Self {
        Self { contains: contains.into(), respond: respond.into() }
    }
}

pub(super) struct MockTransport {
    rules: Vec<MockRule>,
    default_response: String,
}

impl MockTransport {
    pub(super) fn new(rules: Vec<MockRule>, default_response: String) -> Self {
        Self { rules, default_response }
    }
}

impl Transport for MockTransport {
    fn call(&self, request: &CompletionRequest) -> Result<String, BackendError> {
        let target = item_line(&request.prompt_text).to_lowercase();
        for rule in &self.rules {
            if target.contains(&rule.contains.to_lowercase()) {
                return Ok(rule.respond.clone());
            }
        }
        Ok(self.default_response.clone())
    }
}

/// Extracts the item text from a rendered prompt: the line before the final
/// answer-cue line, with its `<prefix>: ` stripped. Falls back to the whole
/// prompt when the shape is not recognized.
fn item_line(prompt: &str) -> &str {
    let lines: Vec<&str> = prompt.lines().collect();
    if lines.len() < 2 {
        return prompt;
    }
    let line = lines[lines.len() - 2];
    match line.split_once(": ") {
        Some((_, rest)) => rest,
        None => line,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prompt_for(question: &str) -> CompletionRequest {
        CompletionRequest::for_label(format!(
            "identity\n\nCode: HIGH\nDescription: why things happen\n\ninstruction\n\nQuestion: {question}\nCode:"
        ))
    }

    #[test]
    fn first_matching_rule_wins() {
        let mock = MockTransport::new(
            vec![MockRule::new("why", "HIGH"), MockRule::new("?", "LOW")],
            String::new(),
        );
        assert_eq!(mock.call(&prompt_for("Why were dinosaurs so big?")).unwrap(), "HIGH");
        assert_eq!(mock.call(&prompt_for("How big is a dinosaur?")).unwrap(), "LOW");
    }

    #[test]
    fn rules_ignore_the_codebook_body() {
        // The body mentions "why"; only the final question should match.
        let mock = MockTransport::new(vec![MockRule::new("why", "HIGH")], "LOW".into());
        assert_eq!(mock.call(&prompt_for("How big is a dinosaur?")).unwrap(), "LOW");
    }

    #[test]
    fn default_response_when_nothing_matches() {
        let mock = MockTransport::new(vec![MockRule::new("why", "HIGH")], "banana".into());
        assert_eq!(mock.call(&prompt_for("How big is a dinosaur?")).unwrap(), "banana");
    }

    #[test]
    fn degenerate_prompts_match_whole_text() {
        let mock = MockTransport::new(vec![MockRule::new("why", "HIGH")], String::new());
        let req = CompletionRequest::for_label("why");
        assert_eq!(mock.call(&req).unwrap(), "HIGH");
    }
}
