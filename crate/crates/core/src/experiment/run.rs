//! Grid execution with per-item persistence and resume.

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant, SystemTime};

use super::{ExperimentError, ExperimentPlan, RunRecordFile};
use crate::codebook::{check_gold_labels, load_dataset, parse_codebook, Codebook, DataItem};
use crate::labeling::{code_item, run_bounded, CodingResult, ItemError};
use crate::llm::Client;
use crate::prompt::prompt_fingerprint;

/// One variant's outcomes: successful results in item order plus an error
/// ledger for items that failed.
#[derive(Debug, Clone)]
pub struct VariantResults {
    pub variant_id: String,
    pub results: Vec<CodingResult>,
    pub errors: Vec<ItemError>,
}

/// The outcome of a run: per-variant results plus cache accounting.
#[derive(Debug)]
pub struct RunRecord {
    pub plan_fingerprint: String,
    pub model_id: String,
    pub per_variant: Vec<VariantResults>,
    /// Results served from the record file instead of the backend.
    pub cached_hits: u64,
    /// Transport calls that reached a live backend during this run.
    pub live_calls: u64,
    pub started_at: SystemTime,
    pub elapsed: Duration,
}

impl RunRecord {
    /// True when every (variant, item) pair produced a result.
    pub fn is_complete(&self, item_count: usize) -> bool {
        self.per_variant
            .iter()
            .all(|v| v.errors.is_empty() && v.results.len() == item_count)
    }
}

fn load_inputs(plan: &ExperimentPlan) -> Result<(Codebook, Vec<DataItem>), ExperimentError> {
    let codebook_source =
        std::fs::read_to_string(&plan.codebook_path).map_err(|source| ExperimentError::Io {
            path: plan.codebook_path.display().to_string(),
            source,
        })?;
    let codebook = parse_codebook(&codebook_source)?;
    let items = load_dataset(&plan.dataset_path)?;
    check_gold_labels(&items, &codebook)?;
    Ok((codebook, items))
}

/// Runs the full plan, persisting each result to `record_path` as it lands.
/// Re-running against the same record file is a no-op for every completed
/// (variant, item) pair.
pub fn run_experiment(
    plan: &ExperimentPlan,
    record_path: &Path,
) -> Result<RunRecord, ExperimentError> {
    let (codebook, items) = load_inputs(plan)?;
    let client = Client::from_config(&plan.backend)?;
    run_with_client(plan, &codebook, &items, &client, record_path)
}

/// [`run_experiment`] with a caller-supplied client, for custom or
/// instrumented backends.
pub fn run_with_client(
    plan: &ExperimentPlan,
    codebook: &Codebook,
    items: &[DataItem],
    client: &Client,
    record_path: &Path,
) -> Result<RunRecord, ExperimentError> {
    execute(plan, codebook, items, Some(client), record_path)
}

/// Reassembles a [`RunRecord`] from a persisted record file without touching
/// any backend. Errors if any (variant, item) pair is missing.
pub fn collect_record(
    plan: &ExperimentPlan,
    record_path: &Path,
) -> Result<RunRecord, ExperimentError> {
    if !record_path.exists() {
        return Err(ExperimentError::Io {
            path: record_path.display().to_string(),
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "run record not found"),
        });
    }
    let (codebook, items) = load_inputs(plan)?;
    execute(plan, &codebook, items.as_slice(), None, record_path)
}

enum Slot {
    Done(CodingResult),
    Failed(ItemError),
    /// Not attempted: either the abort threshold tripped or no client exists.
    Missing,
}

fn execute(
    plan: &ExperimentPlan,
    codebook: &Codebook,
    items: &[DataItem],
    client: Option<&Client>,
    record_path: &Path,
) -> Result<RunRecord, ExperimentError> {
    plan.validate_against(codebook)?;
    let started_at = SystemTime::now();
    let clock = Instant::now();
    let plan_fingerprint = plan.fingerprint();
    let record_file = if client.is_some() {
        RunRecordFile::open(record_path, &plan_fingerprint, &plan.backend.model_id)?
    } else {
        RunRecordFile::open_readonly(record_path, &plan_fingerprint, &plan.backend.model_id)?
    };
    let cached_hits = std::sync::atomic::AtomicU64::new(0);
    let record = Mutex::new(record_file);

    let max_parallel = client.map_or(1, Client::max_parallel);
    let mut per_variant = Vec::with_capacity(plan.variants.len());
    for variant in &plan.variants {
        let failed = AtomicUsize::new(0);
        let abort_limit = plan.abort_ratio * items.len() as f64;
        let slots = run_bounded(items, max_parallel, |item| {
            let fingerprint = prompt_fingerprint(codebook, &variant.spec, item);
            {
                let record = record.lock().expect("record lock poisoned");
                if let Some(hit) = record.lookup(&fingerprint) {
                    cached_hits.fetch_add(1, Ordering::SeqCst);
                    // Two variants may share one spec (and thus one
                    // fingerprint); attribute the reused result to the
                    // variant being served.
                    let mut result = hit.clone();
                    result.spec_id = variant.id.clone();
                    return Slot::Done(result);
                }
            }
            let Some(client) = client else {
                return Slot::Missing;
            };
            // Stop burning quota once the variant is past its error budget.
            if failed.load(Ordering::SeqCst) as f64 > abort_limit {
                return Slot::Missing;
            }
            match code_item(item, codebook, &variant.spec, client) {
                Ok(mut result) => {
                    result.spec_id = variant.id.clone();
                    let mut record = record.lock().expect("record lock poisoned");
                    match record.append_result(&result) {
                        Ok(()) => Slot::Done(result),
                        Err(e) => Slot::Failed(ItemError {
                            item_id: item.id.clone(),
                            message: format!("failed to persist result: {e}"),
                        }),
                    }
                }
                Err(e) => {
                    failed.fetch_add(1, Ordering::SeqCst);
                    let message = e.to_string();
                    let mut record = record.lock().expect("record lock poisoned");
                    let _ = record.append_error(&variant.id, &item.id, &message);
                    Slot::Failed(ItemError { item_id: item.id.clone(), message })
                }
            }
        });

        let mut results = Vec::new();
        let mut errors = Vec::new();
        let mut missing = 0usize;
        for slot in slots {
            match slot {
                Slot::Done(result) => results.push(result),
                Slot::Failed(error) => errors.push(error),
                Slot::Missing => missing += 1,
            }
        }
        if errors.len() as f64 > abort_limit {
            return Err(ExperimentError::AbortThreshold {
                variant_id: variant.id.clone(),
                failed: errors.len(),
                total: items.len(),
                threshold: plan.abort_ratio * 100.0,
            });
        }
        if client.is_none() && missing > 0 {
            return Err(ExperimentError::IncompleteRecord {
                variant_id: variant.id.clone(),
                missing,
            });
        }
        per_variant.push(VariantResults { variant_id: variant.id.clone(), results, errors });
    }

    Ok(RunRecord {
        plan_fingerprint,
        model_id: plan.backend.model_id.clone(),
        per_variant,
        cached_hits: cached_hits.load(Ordering::SeqCst),
        live_calls: client.map_or(0, Client::live_calls),
        started_at,
        elapsed: clock.elapsed(),
    })
}
