//! The `deduct` command line: deductive coding end to end.
//!
//! Subcommands mirror the pipeline stages: `validate` and `render` inspect
//! codebooks and prompts, `code` and `translate` run a backend over a
//! dataset, `agree` scores two coders, and `experiment`/`report` drive the
//! full prompt-design grid. Exit codes: 0 success, 1 validation or usage
//! error, 2 runtime or backend failure.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use deduct_core::agreement::{Scale, UnparseablePolicy};
use deduct_core::experiment::ReportFormat;
use deduct_core::llm::{BackendConfig, BackendKind, MockRule};
use deduct_core::prompt::PromptStyle;

/// Default name of the environment variable holding the API credential for
/// the http backend. Secrets are only ever read from the environment.
pub const DEFAULT_AUTH_ENV: &str = "DEDUCT_API_KEY";

#[derive(Parser)]
#[command(
    name = "deduct",
    version,
    about = "Deductive coding with LLM backends and Cohen's kappa agreement reports"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a codebook file, optionally against a prompt spec
    Validate(ValidateArgs),
    /// Print the exact prompt that would be sent for one item
    Render(RenderArgs),
    /// Code every item in a dataset with one prompt spec
    Code(CodeArgs),
    /// Translate a dataset's text through the backend
    Translate(TranslateArgs),
    /// Score agreement between two label columns
    Agree(AgreeArgs),
    /// Run an experiment plan and report per-variant agreement
    Experiment(ExperimentArgs),
    /// Rebuild reports from a persisted run record without coding
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
pub enum StyleChoice {
    #[value(name = "codebook", alias = "codebook-centered")]
    Codebook,
    #[value(name = "example", alias = "example-centered")]
    Example,
}

impl From<StyleChoice> for PromptStyle {
    fn from(choice: StyleChoice) -> Self {
        match choice {
            StyleChoice::Codebook => PromptStyle::CodebookCentered,
            StyleChoice::Example => PromptStyle::ExampleCentered,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum PolicyChoice {
    Exclude,
    Count,
}

impl From<PolicyChoice> for UnparseablePolicy {
    fn from(choice: PolicyChoice) -> Self {
        match choice {
            PolicyChoice::Exclude => UnparseablePolicy::ExcludeUnparseable,
            PolicyChoice::Count => UnparseablePolicy::CountAsLabel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum ScaleChoice {
    #[value(name = "landis-koch")]
    LandisKoch,
    #[value(name = "mchugh")]
    McHugh,
}

impl From<ScaleChoice> for Scale {
    fn from(choice: ScaleChoice) -> Self {
        match choice {
            ScaleChoice::LandisKoch => Scale::LandisKoch,
            ScaleChoice::McHugh => Scale::McHugh,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum FormatChoice {
    Table,
    Csv,
    Record,
}

impl From<FormatChoice> for ReportFormat {
    fn from(choice: FormatChoice) -> Self {
        match choice {
            FormatChoice::Table => ReportFormat::Table,
            FormatChoice::Csv => ReportFormat::Csv,
            FormatChoice::Record => ReportFormat::Record,
        }
    }
}

/// Prompt spec overrides shared by `validate`, `render`, and `code`.
#[derive(Args)]
pub struct SpecFlags {
    /// Prompt body style
    #[arg(long, value_enum, default_value = "codebook")]
    pub style: StyleChoice,
    /// Examples per code included in the prompt
    #[arg(long, default_value_t = 0)]
    pub shots: usize,
    /// Identity sentence prepended to the prompt
    #[arg(long)]
    pub identity: Option<String>,
    /// Output-space instruction template; must contain one {labels} slot
    #[arg(long)]
    pub instruction: Option<String>,
    /// Prefix before the item text
    #[arg(long)]
    pub item_prefix: Option<String>,
    /// Cue the model completes after
    #[arg(long)]
    pub answer_cue: Option<String>,
    /// Draw examples by seeded shuffle instead of authored order
    #[arg(long)]
    pub selection_seed: Option<u64>,
}

impl SpecFlags {
    pub fn to_spec(&self) -> deduct_core::PromptSpec {
        let mut spec = deduct_core::PromptSpec::new(self.style.into(), self.shots);
        if let Some(v) = &self.identity {
            spec.identity_modifier = v.clone();
        }
        if let Some(v) = &self.instruction {
            spec.instruction_template = v.clone();
        }
        if let Some(v) = &self.item_prefix {
            spec.item_prefix = v.clone();
        }
        if let Some(v) = &self.answer_cue {
            spec.answer_cue = v.clone();
        }
        spec.selection_seed = self.selection_seed;
        spec
    }
}

/// Backend selection shared by `code`, `translate`, and agree-from-records.
#[derive(Args)]
pub struct BackendFlags {
    /// Backend implementation
    #[arg(long, value_enum, default_value = "mock")]
    pub backend: BackendChoice,
    /// Model identifier sent to the backend and stamped on results
    #[arg(long, default_value = "default-model")]
    pub model: String,
    /// Completions endpoint URL (http backend)
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Environment variable holding the API credential (http backend);
    /// defaults to DEDUCT_API_KEY when that variable is set
    #[arg(long)]
    pub auth_env: Option<String>,
    /// Response cache file: the replay backend reads it, live backends
    /// record into it
    #[arg(long)]
    pub cache: Option<PathBuf>,
    /// Maximum concurrent backend requests
    #[arg(long)]
    pub max_parallel: Option<usize>,
    /// Mock rule "substring=>response" (repeatable; first match wins)
    #[arg(long = "mock-rule", value_name = "SUBSTRING=>RESPONSE")]
    pub mock_rule: Vec<String>,
    /// Mock response when no rule matches
    #[arg(long, default_value = "")]
    pub mock_default: String,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum BackendChoice {
    Http,
    Mock,
    Replay,
}

impl BackendFlags {
    pub fn to_config(&self) -> Result<BackendConfig, CliFailure> {
        let mut rules = Vec::new();
        for raw in &self.mock_rule {
            let (contains, respond) = raw.split_once("=>").ok_or_else(|| {
                usage(format!("mock rule {raw:?} must look like SUBSTRING=>RESPONSE"))
            })?;
            rules.push(MockRule::new(contains, respond));
        }
        let mut config = BackendConfig::mock(&self.model, rules, &self.mock_default);
        if let Some(p) = self.max_parallel {
            config.max_parallel = p;
        }
        match self.backend {
            BackendChoice::Mock => {
                if let Some(cache) = &self.cache {
                    config.record_to = Some(cache.clone());
                }
            }
            BackendChoice::Replay => {
                config.kind = BackendKind::Replay;
                config.cache_path = Some(self.cache.clone().ok_or_else(|| {
                    usage("the replay backend requires --cache pointing at a recorded response file")
                })?);
            }
            BackendChoice::Http => {
                config.kind = BackendKind::Http;
                config.endpoint = Some(self.endpoint.clone().ok_or_else(|| {
                    usage("the http backend requires --endpoint")
                })?);
                config.auth_env = match &self.auth_env {
                    Some(name) => Some(name.clone()),
                    // Soft default: authenticate when DEDUCT_API_KEY exists,
                    // otherwise send unauthenticated requests.
                    None if std::env::var(DEFAULT_AUTH_ENV).is_ok() => {
                        Some(DEFAULT_AUTH_ENV.to_string())
                    }
                    None => None,
                };
                if let Some(cache) = &self.cache {
                    config.record_to = Some(cache.clone());
                }
            }
        }
        Ok(config)
    }
}

#[derive(Args)]
struct ValidateArgs {
    /// Codebook file to check
    #[arg(long)]
    codebook: PathBuf,
    /// Also check support for this prompt style
    #[arg(long, value_enum)]
    style: Option<StyleChoice>,
    /// Also check support for this shot count
    #[arg(long)]
    shots: Option<usize>,
    /// Instruction template to check (must contain one {labels} slot)
    #[arg(long)]
    instruction: Option<String>,
}

#[derive(Args)]
struct RenderArgs {
    #[arg(long)]
    codebook: PathBuf,
    /// Item text to code
    #[arg(long)]
    text: String,
    #[command(flatten)]
    spec: SpecFlags,
}

#[derive(Args)]
struct CodeArgs {
    #[arg(long)]
    codebook: PathBuf,
    #[arg(long)]
    dataset: PathBuf,
    #[command(flatten)]
    spec: SpecFlags,
    #[command(flatten)]
    backend: BackendFlags,
    /// Write results (one JSON record per line) here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
    /// Re-ask the backend up to N times when the output is unparseable
    /// (useful only for sampling backends; deterministic ones repeat)
    #[arg(long, default_value_t = 0)]
    retry_unparseable: u32,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    dataset: PathBuf,
    /// Source language tag (e.g. fr)
    #[arg(long)]
    source: String,
    /// Target language tag (e.g. en)
    #[arg(long)]
    target: String,
    #[command(flatten)]
    backend: BackendFlags,
    /// Where to write the derived dataset
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct AgreeArgs {
    /// Dataset carrying the gold label columns
    #[arg(long)]
    dataset: PathBuf,
    /// Run-record or batch-result file (JSON lines); when given, scores the
    /// recorded model labels against --gold
    #[arg(long)]
    records: Option<PathBuf>,
    /// Gold coder column to score against (records mode)
    #[arg(long)]
    gold: Option<String>,
    /// Restrict records to one variant id (records mode)
    #[arg(long)]
    spec_id: Option<String>,
    /// First coder column (dataset mode)
    #[arg(long)]
    coder_a: Option<String>,
    /// Second coder column (dataset mode)
    #[arg(long)]
    coder_b: Option<String>,
    /// Codebook fixing the label space (required in records mode)
    #[arg(long)]
    codebook: Option<PathBuf>,
    /// How unparseable outcomes are scored
    #[arg(long, value_enum, default_value = "count")]
    policy: PolicyChoice,
    #[arg(long, value_enum, default_value = "landis-koch")]
    scale: ScaleChoice,
    #[arg(long, value_enum, default_value = "table")]
    format: FormatChoice,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    /// Plan file to execute
    #[arg(long)]
    plan: PathBuf,
    /// Run record path (default: `<out-dir>/<plan_id>.records.jsonl`)
    #[arg(long)]
    records: Option<PathBuf>,
    /// Directory for report files
    #[arg(long, default_value = ".")]
    out_dir: PathBuf,
    /// Override the plan's backend parallelism
    #[arg(long)]
    max_parallel: Option<usize>,
    /// Override the plan's response cache: replay reads it, live backends
    /// record into it
    #[arg(long)]
    cache: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    plan: PathBuf,
    #[arg(long)]
    records: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: FormatChoice,
    /// Write the report here instead of stdout
    #[arg(long)]
    out: Option<PathBuf>,
}

/// A user-visible failure with its process exit code.
#[derive(Debug)]
pub struct CliFailure {
    pub code: u8,
    pub message: String,
}

pub fn usage(message: impl std::fmt::Display) -> CliFailure {
    CliFailure { code: 1, message: message.to_string() }
}

pub fn runtime(message: impl std::fmt::Display) -> CliFailure {
    CliFailure { code: 2, message: message.to_string() }
}

impl From<deduct_core::CodebookError> for CliFailure {
    fn from(e: deduct_core::CodebookError) -> Self {
        usage(e)
    }
}

impl From<deduct_core::DatasetError> for CliFailure {
    fn from(e: deduct_core::DatasetError) -> Self {
        usage(e)
    }
}

impl From<deduct_core::PromptError> for CliFailure {
    fn from(e: deduct_core::PromptError) -> Self {
        usage(e)
    }
}

impl From<deduct_core::AgreementError> for CliFailure {
    fn from(e: deduct_core::AgreementError) -> Self {
        usage(e)
    }
}

impl From<deduct_core::BackendError> for CliFailure {
    fn from(e: deduct_core::BackendError) -> Self {
        runtime(e)
    }
}

impl From<deduct_core::LabelingError> for CliFailure {
    fn from(e: deduct_core::LabelingError) -> Self {
        match e {
            deduct_core::LabelingError::Prompt(inner) => usage(inner),
            other => runtime(other),
        }
    }
}

impl From<deduct_core::ExperimentError> for CliFailure {
    fn from(e: deduct_core::ExperimentError) -> Self {
        use deduct_core::ExperimentError::*;
        match e {
            Backend(_) | AbortThreshold { .. } | IncompleteRecord { .. } => runtime(e),
            _ => usage(e),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Validate(args) => commands::validate(args),
        Command::Render(args) => commands::render(args),
        Command::Code(args) => commands::code(args),
        Command::Translate(args) => commands::translate(args),
        Command::Agree(args) => commands::agree(args),
        Command::Experiment(args) => commands::experiment(args),
        Command::Report(args) => commands::report(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            ExitCode::from(failure.code)
        }
    }
}
