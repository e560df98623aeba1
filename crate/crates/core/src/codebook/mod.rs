//! Codebook data model: the closed set of codes that drives all prompt
//! construction.
//!
//! A codebook is authored as a single TOML document (see `docs/formats.md`
//! for the grammar) with a `dimension` name, an optional `language` tag, and
//! an ordered list of codes. Each code carries a label, a description of when
//! it applies, and example items. Ordering is preserved exactly as authored
//! because it determines prompt rendering order.

mod dataset;

pub use dataset::{
    check_gold_labels, load_dataset, write_dataset, DataItem, DatasetError, DATASET_FORMAT_VERSION,
};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::labeling::UNPARSEABLE_TOKEN;
use crate::prompt::{PromptSpec, PromptStyle};

/// Current codebook file format version.
pub const CODEBOOK_FORMAT_VERSION: u32 = 1;

/// One code in a codebook: label, description, and example items.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodeEntry {
    pub label: String,
    pub description: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub examples: Vec<String>,
}

/// A named coding dimension with an ordered, closed set of codes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Codebook {
    pub dimension_name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub language_tag: Option<String>,
    pub codes: Vec<CodeEntry>,
}

impl Codebook {
    /// Authored labels in authored order.
    pub fn labels(&self) -> Vec<String> {
        self.codes.iter().map(|c| c.label.clone()).collect()
    }

    /// Looks up a code by label, case-insensitively.
    pub fn find_code(&self, label: &str) -> Option<&CodeEntry> {
        let needle = label.to_lowercase();
        self.codes.iter().find(|c| c.label.to_lowercase() == needle)
    }

    /// True when `label` names a code in this book (case-insensitive).
    pub fn contains_label(&self, label: &str) -> bool {
        self.find_code(label).is_some()
    }

    /// Canonical content fingerprint, stable across re-parses.
    pub fn fingerprint(&self) -> String {
        let mut fp = crate::fingerprint::FingerprintBuilder::new("codebook")
            .field("dimension", &self.dimension_name)
            .field("language", self.language_tag.as_deref().unwrap_or(""));
        for code in &self.codes {
            fp = fp
                .field("label", &code.label)
                .field("description", &code.description)
                .field_list("examples", &code.examples);
        }
        fp.finish()
    }
}

/// Errors raised while parsing or validating a codebook document.
///
/// Each variant names the offending location as a field path into the
/// document (e.g. `codes[1].label`).
#[derive(Debug, Error)]
pub enum CodebookError {
    #[error("malformed codebook document: {0}")]
    Malformed(#[from] toml::de::Error),
    #[error("unsupported format_version {found} (expected {CODEBOOK_FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("{path}: dimension must be non-empty")]
    EmptyDimension { path: String },
    #[error("{path}: a codebook needs at least 2 codes, found {found}")]
    TooFewCodes { path: String, found: usize },
    #[error("{path}: label must be non-empty and contain no newlines")]
    BadLabel { path: String },
    #[error("{path}: label {label:?} is reserved for unmatched model output")]
    ReservedLabel { path: String, label: String },
    #[error("{path}: duplicate label {label:?} (labels are compared case-insensitively)")]
    DuplicateLabel { path: String, label: String },
    #[error("{path}: description must be non-empty")]
    EmptyDescription { path: String },
    #[error("{path}: example text must be non-empty")]
    EmptyExample { path: String },
}

#[derive(Debug, Serialize, Deserialize)]
struct CodebookDoc {
    format_version: u32,
    dimension: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    language: Option<String>,
    codes: Vec<CodeEntry>,
}

/// Parses a codebook from its TOML document form and checks every invariant.
///
/// Codes come back in authored order; labels are stored as authored and
/// compared case-insensitively.
pub fn parse_codebook(source: &str) -> Result<Codebook, CodebookError> {
    let doc: CodebookDoc = toml::from_str(source)?;
    if doc.format_version != CODEBOOK_FORMAT_VERSION {
        return Err(CodebookError::UnsupportedVersion { found: doc.format_version });
    }
    if doc.dimension.trim().is_empty() {
        return Err(CodebookError::EmptyDimension { path: "dimension".into() });
    }
    if doc.codes.len() < 2 {
        return Err(CodebookError::TooFewCodes { path: "codes".into(), found: doc.codes.len() });
    }
    let mut seen: Vec<String> = Vec::with_capacity(doc.codes.len());
    for (i, code) in doc.codes.iter().enumerate() {
        let at = |field: &str| format!("codes[{i}].{field}");
        if code.label.trim().is_empty() || code.label.contains('\n') || code.label.contains('\r') {
            return Err(CodebookError::BadLabel { path: at("label") });
        }
        if code.label.to_lowercase() == UNPARSEABLE_TOKEN.to_lowercase() {
            return Err(CodebookError::ReservedLabel {
                path: at("label"),
                label: code.label.clone(),
            });
        }
        let folded = code.label.to_lowercase();
        if seen.contains(&folded) {
            return Err(CodebookError::DuplicateLabel {
                path: at("label"),
                label: code.label.clone(),
            });
        }
        seen.push(folded);
        if code.description.trim().is_empty() {
            return Err(CodebookError::EmptyDescription { path: at("description") });
        }
        for (j, example) in code.examples.iter().enumerate() {
            if example.trim().is_empty() {
                return Err(CodebookError::EmptyExample { path: format!("codes[{i}].examples[{j}]") });
            }
        }
    }
    Ok(Codebook {
        dimension_name: doc.dimension,
        language_tag: doc.language,
        codes: doc.codes,
    })
}

/// Serializes a codebook back to its document form.
///
/// `parse_codebook(serialize_codebook(cb))` yields a structurally equal book.
pub fn serialize_codebook(codebook: &Codebook) -> String {
    let doc = CodebookDoc {
        format_version: CODEBOOK_FORMAT_VERSION,
        dimension: codebook.dimension_name.clone(),
        language: codebook.language_tag.clone(),
        codes: codebook.codes.clone(),
    };
    toml::to_string(&doc).expect("codebook serialization cannot fail")
}

/// One way a codebook fails to support a prompt spec.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SpecViolation {
    /// The example-centered style is built entirely from examples, so it
    /// needs at least one per code.
    ExampleCenteredNeedsExamples,
    /// A code has fewer examples than the spec's shot count.
    InsufficientExamples { label: String, available: usize, required: usize },
    /// The instruction template must contain exactly one `{labels}` slot.
    InstructionPlaceholder { count: usize },
}

impl std::fmt::Display for SpecViolation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SpecViolation::ExampleCenteredNeedsExamples => {
                write!(f, "example-centered prompts require at least one example per code (shots >= 1)")
            }
            SpecViolation::InsufficientExamples { label, available, required } => write!(
                f,
                "code {label:?} has {available} example(s) but the spec needs {required}"
            ),
            SpecViolation::InstructionPlaceholder { count } => write!(
                f,
                "instruction template must contain exactly one {{labels}} placeholder, found {count}"
            ),
        }
    }
}

/// Checks whether `codebook` can support `spec`: every code must carry at
/// least `spec.shots` examples, and the example-centered style needs at least
/// one shot. Violations come back as data, not errors; an empty list means ok.
pub fn validate_for_spec(codebook: &Codebook, spec: &PromptSpec) -> Vec<SpecViolation> {
    let mut violations = Vec::new();
    let placeholders = spec.instruction_template.matches("{labels}").count();
    if placeholders != 1 {
        violations.push(SpecViolation::InstructionPlaceholder { count: placeholders });
    }
    if spec.style == PromptStyle::ExampleCentered && spec.shots == 0 {
        violations.push(SpecViolation::ExampleCenteredNeedsExamples);
    }
    for code in &codebook.codes {
        if code.examples.len() < spec.shots {
            violations.push(SpecViolation::InsufficientExamples {
                label: code.label.clone(),
                available: code.examples.len(),
                required: spec.shots,
            });
        }
    }
    violations
}
