//! Experiment plans and the design-grid runner.
//!
//! A plan names a dataset, a codebook, a gold coder, a backend, and a list of
//! prompt variants (defaulting to the five-point grid: codebook-centered at
//! zero/one/five shots plus example-centered at one/five shots). Running a
//! plan codes every (variant, item) pair exactly once, persisting each result
//! as it lands so interrupted runs resume from the record file, and the
//! report layer turns the record into per-variant agreement rows.

mod record;
mod report;
mod run;

pub use record::{RunRecordFile, RECORD_FORMAT_VERSION};
pub use report::{build_report, export_report, ExpertRow, ExperimentReport, ReportFormat, VariantRow};
pub use run::{collect_record, run_experiment, run_with_client, RunRecord, VariantResults};

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agreement::{AgreementError, Scale, UnparseablePolicy};
use crate::codebook::{Codebook, CodebookError, DatasetError, SpecViolation};
use crate::fingerprint::FingerprintBuilder;
use crate::llm::{BackendConfig, BackendError};
use crate::prompt::{PromptSpec, PromptStyle};

/// Current plan file format version.
pub const PLAN_FORMAT_VERSION: u32 = 1;

/// The default design grid: codebook-centered at 0/1/5 shots and
/// example-centered at 1/5 shots. Example-centered has no zero-shot form.
pub fn default_grid() -> Vec<(PromptStyle, usize)> {
    vec![
        (PromptStyle::CodebookCentered, 0),
        (PromptStyle::CodebookCentered, 1),
        (PromptStyle::CodebookCentered, 5),
        (PromptStyle::ExampleCentered, 1),
        (PromptStyle::ExampleCentered, 5),
    ]
}

/// One named variant of the grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanVariant {
    pub id: String,
    pub spec: PromptSpec,
}

/// A fully resolved experiment plan. Paths are absolute or relative to the
/// process working directory; [`load_plan`] resolves them against the plan
/// file's own directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub plan_id: String,
    pub dataset_path: PathBuf,
    pub codebook_path: PathBuf,
    pub gold_coder: String,
    pub variants: Vec<PlanVariant>,
    pub backend: BackendConfig,
    pub unparseable_policy: UnparseablePolicy,
    pub scale: Scale,
    /// Abort a variant once more than this fraction of its items hit
    /// terminal backend errors.
    pub abort_ratio: f64,
}

impl ExperimentPlan {
    /// Builds a plan over the default grid.
    pub fn new(
        plan_id: impl Into<String>,
        dataset_path: impl Into<PathBuf>,
        codebook_path: impl Into<PathBuf>,
        gold_coder: impl Into<String>,
        backend: BackendConfig,
    ) -> Result<Self, ExperimentError> {
        let variants = default_grid()
            .into_iter()
            .map(|(style, shots)| {
                let spec = PromptSpec::new(style, shots);
                PlanVariant { id: spec.default_id(), spec }
            })
            .collect();
        let plan = Self {
            plan_id: plan_id.into(),
            dataset_path: dataset_path.into(),
            codebook_path: codebook_path.into(),
            gold_coder: gold_coder.into(),
            variants,
            backend,
            unparseable_policy: UnparseablePolicy::CountAsLabel,
            scale: Scale::LandisKoch,
            abort_ratio: 0.2,
        };
        plan.validate_shape()?;
        Ok(plan)
    }

    /// Structural checks that need no codebook: variant ids unique, shot/style
    /// combinations legal, abort ratio sane.
    pub fn validate_shape(&self) -> Result<(), ExperimentError> {
        if self.variants.is_empty() {
            return Err(ExperimentError::PlanInvalid("plan has no variants".into()));
        }
        if !(0.0..=1.0).contains(&self.abort_ratio) {
            return Err(ExperimentError::PlanInvalid(format!(
                "abort_ratio {} is outside [0, 1]",
                self.abort_ratio
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for variant in &self.variants {
            if variant.id.trim().is_empty()
                || variant.id.contains(',')
                || variant.id.contains('\n')
            {
                return Err(ExperimentError::PlanInvalid(format!(
                    "variant id {:?} must be non-empty and contain no commas or newlines",
                    variant.id
                )));
            }
            if !seen.insert(&variant.id) {
                return Err(ExperimentError::PlanInvalid(format!(
                    "duplicate variant id {:?}",
                    variant.id
                )));
            }
            if variant.spec.style == PromptStyle::ExampleCentered && variant.spec.shots == 0 {
                return Err(ExperimentError::VariantUnsupported {
                    variant_id: variant.id.clone(),
                    violations: vec![SpecViolation::ExampleCenteredNeedsExamples],
                });
            }
        }
        Ok(())
    }

    /// Full validation against a loaded codebook: every variant must pass
    /// [`crate::codebook::validate_for_spec`].
    pub fn validate_against(&self, codebook: &Codebook) -> Result<(), ExperimentError> {
        self.validate_shape()?;
        for variant in &self.variants {
            let violations = crate::codebook::validate_for_spec(codebook, &variant.spec);
            if !violations.is_empty() {
                return Err(ExperimentError::VariantUnsupported {
                    variant_id: variant.id.clone(),
                    violations,
                });
            }
        }
        Ok(())
    }

    /// Stable fingerprint over everything that determines coding output:
    /// plan id, model id, and each variant's spec. Codebook and item identity
    /// live in the per-result prompt fingerprints, so editing the dataset
    /// never strands an otherwise valid record file.
    pub fn fingerprint(&self) -> String {
        let mut fp = FingerprintBuilder::new("experiment-plan")
            .field("plan_id", &self.plan_id)
            .field("model_id", &self.backend.model_id);
        for variant in &self.variants {
            let spec_json =
                serde_json::to_string(&variant.spec).expect("prompt spec serializes");
            fp = fp.field(&variant.id, &spec_json);
        }
        fp.finish()
    }
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error("failed to read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("failed to parse plan {path}: {source}")]
    PlanParse { path: String, source: Box<toml::de::Error> },
    #[error("unsupported plan format_version {found} (expected {PLAN_FORMAT_VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("invalid plan: {0}")]
    PlanInvalid(String),
    #[error("variant {variant_id:?} is not supported by the codebook: {}", format_violations(.violations))]
    VariantUnsupported { variant_id: String, violations: Vec<SpecViolation> },
    #[error(transparent)]
    Codebook(#[from] CodebookError),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Agreement(#[from] AgreementError),
    #[error("run record {path} line {line}: {message}")]
    RecordCorrupt { path: String, line: usize, message: String },
    #[error(
        "run record {path} belongs to a different plan (found fingerprint {found}, expected {expected}); \
         use a fresh record file per plan"
    )]
    RecordMismatch { path: String, expected: String, found: String },
    #[error(
        "variant {variant_id:?} aborted: {failed} of {total} items hit terminal backend errors \
         (threshold {threshold:.0}%)"
    )]
    AbortThreshold { variant_id: String, failed: usize, total: usize, threshold: f64 },
    #[error("run record is incomplete: variant {variant_id:?} is missing {missing} item(s)")]
    IncompleteRecord { variant_id: String, missing: usize },
    #[error("unsupported report format {0:?}")]
    UnsupportedFormat(String),
}

fn format_violations(violations: &[SpecViolation]) -> String {
    violations.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; ")
}

#[derive(Debug, Deserialize)]
struct PlanDoc {
    format_version: u32,
    plan_id: String,
    dataset: PathBuf,
    codebook: PathBuf,
    gold_coder: String,
    #[serde(default)]
    unparseable_policy: Option<UnparseablePolicy>,
    #[serde(default)]
    scale: Option<Scale>,
    #[serde(default)]
    abort_ratio: Option<f64>,
    #[serde(default)]
    prompt: Option<PromptDefaultsDoc>,
    #[serde(default)]
    variants: Vec<VariantDoc>,
    backend: BackendConfig,
}

#[derive(Debug, Default, Deserialize)]
struct PromptDefaultsDoc {
    identity_modifier: Option<String>,
    instruction_template: Option<String>,
    item_prefix: Option<String>,
    answer_cue: Option<String>,
    selection_seed: Option<u64>,
}

#[derive(Debug, Deserialize)]
struct VariantDoc {
    id: Option<String>,
    style: PromptStyle,
    shots: usize,
    identity_modifier: Option<String>,
    instruction_template: Option<String>,
    item_prefix: Option<String>,
    answer_cue: Option<String>,
    selection_seed: Option<u64>,
}

/// Parses a plan document, resolving relative paths against `base_dir`.
pub fn parse_plan(source: &str, base_dir: &Path) -> Result<ExperimentPlan, ExperimentError> {
    let doc: PlanDoc = toml::from_str(source).map_err(|source| ExperimentError::PlanParse {
        path: base_dir.display().to_string(),
        source: Box::new(source),
    })?;
    if doc.format_version != PLAN_FORMAT_VERSION {
        return Err(ExperimentError::UnsupportedVersion { found: doc.format_version });
    }
    let defaults = doc.prompt.unwrap_or_default();
    let apply = |spec: &mut PromptSpec,
                 identity: &Option<String>,
                 instruction: &Option<String>,
                 prefix: &Option<String>,
                 cue: &Option<String>,
                 seed: &Option<u64>| {
        if let Some(v) = identity {
            spec.identity_modifier = v.clone();
        }
        if let Some(v) = instruction {
            spec.instruction_template = v.clone();
        }
        if let Some(v) = prefix {
            spec.item_prefix = v.clone();
        }
        if let Some(v) = cue {
            spec.answer_cue = v.clone();
        }
        if let Some(v) = seed {
            spec.selection_seed = Some(*v);
        }
    };

    let variant_docs: Vec<VariantDoc> = if doc.variants.is_empty() {
        default_grid()
            .into_iter()
            .map(|(style, shots)| VariantDoc {
                id: None,
                style,
                shots,
                identity_modifier: None,
                instruction_template: None,
                item_prefix: None,
                answer_cue: None,
                selection_seed: None,
            })
            .collect()
    } else {
        doc.variants
    };

    let variants = variant_docs
        .into_iter()
        .map(|v| {
            let mut spec = PromptSpec::new(v.style, v.shots);
            apply(
                &mut spec,
                &defaults.identity_modifier,
                &defaults.instruction_template,
                &defaults.item_prefix,
                &defaults.answer_cue,
                &defaults.selection_seed,
            );
            apply(
                &mut spec,
                &v.identity_modifier,
                &v.instruction_template,
                &v.item_prefix,
                &v.answer_cue,
                &v.selection_seed,
            );
            let id = v.id.unwrap_or_else(|| spec.default_id());
            PlanVariant { id, spec }
        })
        .collect();

    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base_dir.join(p) };
    let mut backend = doc.backend;
    backend.cache_path = backend.cache_path.map(&resolve);
    backend.record_to = backend.record_to.map(&resolve);
    let plan = ExperimentPlan {
        plan_id: doc.plan_id,
        dataset_path: resolve(doc.dataset),
        codebook_path: resolve(doc.codebook),
        gold_coder: doc.gold_coder,
        variants,
        backend,
        unparseable_policy: doc.unparseable_policy.unwrap_or(UnparseablePolicy::CountAsLabel),
        scale: doc.scale.unwrap_or(Scale::LandisKoch),
        abort_ratio: doc.abort_ratio.unwrap_or(0.2),
    };
    plan.validate_shape()?;
    Ok(plan)
}

/// Loads a plan file; relative dataset/codebook paths resolve against the
/// plan file's directory.
pub fn load_plan(path: &Path) -> Result<ExperimentPlan, ExperimentError> {
    let source = std::fs::read_to_string(path).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    parse_plan(&source, base)
}
