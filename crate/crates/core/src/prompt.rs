//! Deterministic prompt rendering.
//!
//! A prompt is assembled from five parts, in reading order: the identity
//! modifier, the codebook body (one of two structural styles), the
//! output-space instruction, the item to code, and the answer cue the model
//! completes after. Rendering is a pure function of its inputs; equal inputs
//! produce byte-equal output.
//!
//! The two body styles:
//!
//! * codebook-centered: one `Code:` / `Description:` / `Examples:` block per
//!   code, mirroring how coders read a codebook. Zero-shot drops the
//!   `Examples:` line.
//! * example-centered: one rationale sentence per example,
//!   `"<example>" is an example of "<LABEL>" because <description>`. This
//!   style has no zero-shot form.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{validate_for_spec, CodeEntry, Codebook, DataItem, SpecViolation};
use crate::fingerprint::FingerprintBuilder;

/// Default persona sentence prepended to every prompt.
pub const DEFAULT_IDENTITY: &str =
    "I am a developmental psychologist who has expertise in linguistics.";
/// Default output-space instruction; `{labels}` expands to the authored
/// labels joined with `, `.
pub const DEFAULT_INSTRUCTION: &str = "Choose from the following candidates: {labels}";
/// Default prefix before the item text.
pub const DEFAULT_ITEM_PREFIX: &str = "Question:";
/// Default cue the model completes after.
pub const DEFAULT_ANSWER_CUE: &str = "Code:";

/// Structural style of the prompt body.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PromptStyle {
    #[serde(rename = "codebook-centered")]
    CodebookCentered,
    #[serde(rename = "example-centered")]
    ExampleCentered,
}

impl PromptStyle {
    /// Short token used in variant ids and report columns.
    pub fn token(self) -> &'static str {
        match self {
            PromptStyle::CodebookCentered => "codebook",
            PromptStyle::ExampleCentered => "example",
        }
    }
}

impl std::fmt::Display for PromptStyle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.token())
    }
}

/// One point in the prompt design grid: a body style, a shot count, and the
/// surrounding boilerplate text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub style: PromptStyle,
    /// Examples per code included in the body.
    pub shots: usize,
    pub identity_modifier: String,
    pub instruction_template: String,
    pub item_prefix: String,
    pub answer_cue: String,
    /// When set, examples are drawn by a seeded deterministic shuffle instead
    /// of authored-prefix order.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub selection_seed: Option<u64>,
}

impl PromptSpec {
    pub fn new(style: PromptStyle, shots: usize) -> Self {
        Self {
            style,
            shots,
            identity_modifier: DEFAULT_IDENTITY.into(),
            instruction_template: DEFAULT_INSTRUCTION.into(),
            item_prefix: DEFAULT_ITEM_PREFIX.into(),
            answer_cue: DEFAULT_ANSWER_CUE.into(),
            selection_seed: None,
        }
    }

    /// Default variant id, e.g. `codebook-1shot`.
    pub fn default_id(&self) -> String {
        format!("{}-{}shot", self.style.token(), self.shots)
    }

    fn fingerprint_into(&self, fp: FingerprintBuilder) -> FingerprintBuilder {
        fp.field("style", self.style.token())
            .field_u64("shots", self.shots as u64)
            .field("identity", &self.identity_modifier)
            .field("instruction", &self.instruction_template)
            .field("item_prefix", &self.item_prefix)
            .field("answer_cue", &self.answer_cue)
            .field(
                "selection_seed",
                &self.selection_seed.map(|s| s.to_string()).unwrap_or_default(),
            )
    }
}

/// A fully rendered prompt plus its provenance fingerprint.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RenderedPrompt {
    pub full_text: String,
    /// Stable hash of (codebook, spec, item id, item text); the resume and
    /// replay key for this exact coding call.
    pub spec_fingerprint: String,
    pub item_id: String,
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("codebook does not support this prompt spec: {}", format_violations(.0))]
    SpecViolations(Vec<SpecViolation>),
    #[error("code {label:?} has {available} example(s), need {requested}")]
    InsufficientExamples { label: String, available: usize, requested: usize },
    #[error("item {id:?} has empty text")]
    EmptyItemText { id: String },
}

fn format_violations(violations: &[SpecViolation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

/// Selects the first `shots` examples of a code, in authored order.
pub fn select_examples(entry: &CodeEntry, shots: usize) -> Result<&[String], PromptError> {
    if entry.examples.len() < shots {
        return Err(PromptError::InsufficientExamples {
            label: entry.label.clone(),
            available: entry.examples.len(),
            requested: shots,
        });
    }
    Ok(&entry.examples[..shots])
}

/// Seeded variant of [`select_examples`]: a deterministic Fisher–Yates
/// shuffle (splitmix64 keyed by seed and label) followed by the prefix rule.
pub fn select_examples_seeded(
    entry: &CodeEntry,
    shots: usize,
    seed: u64,
) -> Result<Vec<String>, PromptError> {
    if entry.examples.len() < shots {
        return Err(PromptError::InsufficientExamples {
            label: entry.label.clone(),
            available: entry.examples.len(),
            requested: shots,
        });
    }
    let mut order: Vec<String> = entry.examples.clone();
    let mut state = seed ^ label_seed(&entry.label);
    for i in (1..order.len()).rev() {
        state = splitmix64(&mut state);
        order.swap(i, (state % (i as u64 + 1)) as usize);
    }
    order.truncate(shots);
    Ok(order)
}

fn label_seed(label: &str) -> u64 {
    label.bytes().fold(0xcbf2_9ce4_8422_2325u64, |acc, b| {
        (acc ^ b as u64).wrapping_mul(0x100_0000_01b3)
    })
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn selected(entry: &CodeEntry, spec: &PromptSpec) -> Result<Vec<String>, PromptError> {
    match spec.selection_seed {
        Some(seed) => select_examples_seeded(entry, spec.shots, seed),
        None => select_examples(entry, spec.shots).map(<[String]>::to_vec),
    }
}

fn ensure_supported(codebook: &Codebook, spec: &PromptSpec) -> Result<(), PromptError> {
    let violations = validate_for_spec(codebook, spec);
    if violations.is_empty() {
        Ok(())
    } else {
        Err(PromptError::SpecViolations(violations))
    }
}

/// Renders the codebook-centered body: a `Code:` / `Description:` /
/// `Examples:` block per code in authored order, blocks separated by one
/// blank line. Zero-shot emits no `Examples:` line; multiple examples join
/// with `; ` on a single line.
pub fn render_codebook_centered(codebook: &Codebook, spec: &PromptSpec) -> Result<String, PromptError> {
    ensure_supported(codebook, spec)?;
    let mut blocks = Vec::with_capacity(codebook.codes.len());
    for code in &codebook.codes {
        let mut block = format!("Code: {}\nDescription: {}", code.label, code.description);
        if spec.shots > 0 {
            let examples = selected(code, spec)?;
            block.push_str("\nExamples: ");
            block.push_str(&examples.join("; "));
        }
        blocks.push(block);
    }
    Ok(blocks.join("\n\n"))
}

/// Renders the example-centered body: one rationale sentence per selected
/// example, one per line, grouped by code in authored order.
pub fn render_example_centered(codebook: &Codebook, spec: &PromptSpec) -> Result<String, PromptError> {
    ensure_supported(codebook, spec)?;
    let mut lines = Vec::new();
    for code in &codebook.codes {
        for example in selected(code, spec)? {
            lines.push(format!(
                "\"{}\" is an example of \"{}\" because {}",
                example, code.label, code.description
            ));
        }
    }
    Ok(lines.join("\n"))
}

/// Assembles the complete prompt for one item:
/// identity, body, instruction (with `{labels}` expanded), and the item line
/// followed by the answer cue, each part separated by a blank line.
pub fn build_prompt(
    codebook: &Codebook,
    spec: &PromptSpec,
    item: &DataItem,
) -> Result<RenderedPrompt, PromptError> {
    if item.text.trim().is_empty() {
        return Err(PromptError::EmptyItemText { id: item.id.clone() });
    }
    let body = match spec.style {
        PromptStyle::CodebookCentered => render_codebook_centered(codebook, spec)?,
        PromptStyle::ExampleCentered => render_example_centered(codebook, spec)?,
    };
    let labels = codebook.labels().join(", ");
    let instruction = spec.instruction_template.replace("{labels}", &labels);
    let full_text = format!(
        "{}\n\n{}\n\n{}\n\n{} {}\n{}",
        spec.identity_modifier, body, instruction, spec.item_prefix, item.text, spec.answer_cue
    );
    Ok(RenderedPrompt {
        full_text,
        spec_fingerprint: prompt_fingerprint(codebook, spec, item),
        item_id: item.id.clone(),
    })
}

/// Stable hash of (codebook, spec, item id, item text).
pub fn prompt_fingerprint(codebook: &Codebook, spec: &PromptSpec, item: &DataItem) -> String {
    spec.fingerprint_into(
        FingerprintBuilder::new("prompt")
            .field("codebook", &codebook.fingerprint())
            .field("item_id", &item.id)
            .field("item_text", &item.text),
    )
    .finish()
}
