//! Deductive qualitative coding with LLM completion backends.
//!
//! The pipeline runs in five stages, each backed by a module:
//!
//! 1. [`codebook`]: parse and validate the codebook (the closed label set
//!    with descriptions and examples) and the dataset to be coded.
//! 2. [`prompt`]: render a `(Codebook, PromptSpec, DataItem)` triple into
//!    the exact prompt text, in one of two structural styles and with a
//!    configurable number of examples per code.
//! 3. [`llm`]: obtain a completion from an HTTP, mock, or record/replay
//!    backend at deterministic decoding settings.
//! 4. [`labeling`]: normalize the raw continuation into a codebook label
//!    (or the `UNPARSEABLE` sentinel) and batch-code datasets.
//! 5. [`agreement`] / [`experiment`]: score label sequences against
//!    reference coders with Cohen's kappa and run the full prompt-design
//!    grid, producing resumable run records and comparative reports.
//!
//! Everything downstream of the backend is a pure function of its inputs:
//! rendering, normalization, and agreement math are all byte-deterministic,
//! and replayed runs reproduce reports exactly.

pub mod agreement;
pub mod codebook;
pub mod experiment;
pub mod fingerprint;
pub mod labeling;
pub mod llm;
pub mod prompt;

pub use agreement::{
    cohen_kappa, confusion_matrix, interpret_kappa, AgreementError, AgreementReport,
    ConfusionMatrix, LabelSequence, Scale, UnparseablePolicy,
};
pub use codebook::{
    parse_codebook, serialize_codebook, validate_for_spec, CodeEntry, Codebook, CodebookError,
    DataItem, DatasetError, SpecViolation,
};
pub use experiment::{
    build_report, export_report, run_experiment, ExperimentError, ExperimentPlan,
    ExperimentReport, ReportFormat, RunRecord,
};
pub use labeling::{
    code_batch, code_item, normalize_label, translate_item, Assigned, BatchOutcome, CodingResult,
    LabelingError,
};
pub use llm::{
    BackendConfig, BackendError, BackendKind, Client, CompletionRequest, CompletionResponse,
    MockRule, ResponseCache, RetryPolicy,
};
pub use prompt::{
    build_prompt, render_codebook_centered, render_example_centered, select_examples,
    PromptError, PromptSpec, PromptStyle, RenderedPrompt,
};
