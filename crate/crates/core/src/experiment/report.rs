//! Turning a run record into comparative agreement reports.

use serde::{Deserialize, Serialize};

use super::{ExperimentError, ExperimentPlan, RunRecord};
use crate::agreement::{
    cohen_kappa, confusion_matrix, interpret, AgreementReport, LabelSequence, Scale,
    UnparseablePolicy,
};
use crate::codebook::{load_dataset, parse_codebook, DataItem};
use crate::prompt::PromptStyle;

/// Agreement between one prompt variant and the gold coder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantRow {
    pub variant_id: String,
    pub style: PromptStyle,
    pub shots: usize,
    pub agreement: AgreementReport,
}

/// Agreement between two gold coders on the items they both labeled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExpertRow {
    pub coder_a: String,
    pub coder_b: String,
    pub agreement: AgreementReport,
}

/// The comparative report: one row per plan variant (ranked by kappa,
/// descending) plus one expert-vs-expert row per gold-coder pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub plan_id: String,
    pub model_id: String,
    pub gold_coder: String,
    pub scale: Scale,
    pub unparseable_policy: UnparseablePolicy,
    pub variant_rows: Vec<VariantRow>,
    pub expert_rows: Vec<ExpertRow>,
}

/// Output format for [`export_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    /// Human-readable aligned table.
    Table,
    /// CSV with numeric columns fixed at 4 decimal places.
    Csv,
    /// Structured JSON record.
    Record,
}

impl std::str::FromStr for ReportFormat {
    type Err = ExperimentError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "table" => Ok(ReportFormat::Table),
            "csv" => Ok(ReportFormat::Csv),
            "record" => Ok(ReportFormat::Record),
            other => Err(ExperimentError::UnsupportedFormat(other.to_string())),
        }
    }
}

/// Scores every variant in `record` against the plan's gold coder and ranks
/// the rows by kappa. Requires a complete record (every variant has a result
/// for every item).
pub fn build_report(
    record: &RunRecord,
    plan: &ExperimentPlan,
) -> Result<ExperimentReport, ExperimentError> {
    let codebook_source =
        std::fs::read_to_string(&plan.codebook_path).map_err(|source| ExperimentError::Io {
            path: plan.codebook_path.display().to_string(),
            source,
        })?;
    let codebook = parse_codebook(&codebook_source)?;
    let items = load_dataset(&plan.dataset_path)?;
    let labels = codebook.labels();

    let mut variant_rows = Vec::with_capacity(record.per_variant.len());
    for (variant_results, variant) in record.per_variant.iter().zip(&plan.variants) {
        if variant_results.variant_id != variant.id {
            return Err(ExperimentError::PlanInvalid(format!(
                "run record variant {:?} does not match plan variant {:?}",
                variant_results.variant_id, variant.id
            )));
        }
        let missing = items.len().saturating_sub(variant_results.results.len());
        if missing > 0 || !variant_results.errors.is_empty() {
            return Err(ExperimentError::IncompleteRecord {
                variant_id: variant_results.variant_id.clone(),
                missing: missing.max(variant_results.errors.len()),
            });
        }
        let aligned = crate::agreement::align_and_filter(
            &variant_results.results,
            &items,
            &plan.gold_coder,
            plan.unparseable_policy,
            &labels,
        )?;
        let mut agreement = cohen_kappa(&confusion_matrix(&aligned.model, &aligned.gold)?);
        agreement.dropped = aligned.dropped;
        interpret(&mut agreement, plan.scale)?;
        variant_rows.push(VariantRow {
            variant_id: variant_results.variant_id.clone(),
            style: variant.spec.style,
            shots: variant.spec.shots,
            agreement,
        });
    }
    variant_rows.sort_by(|a, b| {
        b.agreement
            .kappa
            .partial_cmp(&a.agreement.kappa)
            .unwrap_or(std::cmp::Ordering::Equal)
    });

    let expert_rows = expert_pairs(&items, &labels, plan.scale)?;
    Ok(ExperimentReport {
        plan_id: plan.plan_id.clone(),
        model_id: record.model_id.clone(),
        gold_coder: plan.gold_coder.clone(),
        scale: plan.scale,
        unparseable_policy: plan.unparseable_policy,
        variant_rows,
        expert_rows,
    })
}

/// Pairwise agreement between gold coders, over items both labeled.
fn expert_pairs(
    items: &[DataItem],
    labels: &[String],
    scale: Scale,
) -> Result<Vec<ExpertRow>, ExperimentError> {
    let mut coders: Vec<String> = items
        .iter()
        .flat_map(|item| item.gold_labels.keys().cloned())
        .collect();
    coders.sort();
    coders.dedup();

    let mut rows = Vec::new();
    for (i, a) in coders.iter().enumerate() {
        for b in &coders[i + 1..] {
            let mut a_labels = Vec::new();
            let mut b_labels = Vec::new();
            for item in items {
                if let (Some(la), Some(lb)) = (item.gold_labels.get(a), item.gold_labels.get(b)) {
                    a_labels.push(la.clone());
                    b_labels.push(lb.clone());
                }
            }
            if a_labels.is_empty() {
                continue;
            }
            let seq_a = LabelSequence::new(a.clone(), a_labels, labels.to_vec());
            let seq_b = LabelSequence::new(b.clone(), b_labels, labels.to_vec());
            let mut agreement = cohen_kappa(&confusion_matrix(&seq_a, &seq_b)?);
            interpret(&mut agreement, scale)?;
            rows.push(ExpertRow { coder_a: a.clone(), coder_b: b.clone(), agreement });
        }
    }
    Ok(rows)
}

struct Row {
    variant: String,
    style: String,
    shots: String,
    n: String,
    dropped: String,
    kappa: String,
    p_o: String,
    p_e: String,
    band: String,
}

const COLUMNS: [&str; 9] =
    ["variant", "style", "shots", "n", "dropped", "kappa", "p_o", "p_e", "band"];

fn rows_of(report: &ExperimentReport) -> Vec<Row> {
    let mut rows = Vec::new();
    for row in &report.variant_rows {
        rows.push(Row {
            variant: row.variant_id.clone(),
            style: row.style.token().to_string(),
            shots: row.shots.to_string(),
            n: row.agreement.n.to_string(),
            dropped: row.agreement.dropped.to_string(),
            kappa: format!("{:.4}", row.agreement.kappa),
            p_o: format!("{:.4}", row.agreement.observed_agreement),
            p_e: format!("{:.4}", row.agreement.expected_agreement),
            band: row.agreement.band.clone().unwrap_or_default(),
        });
    }
    for row in &report.expert_rows {
        rows.push(Row {
            variant: format!("{}-vs-{}", row.coder_a, row.coder_b),
            style: "expert".to_string(),
            shots: String::new(),
            n: row.agreement.n.to_string(),
            dropped: row.agreement.dropped.to_string(),
            kappa: format!("{:.4}", row.agreement.kappa),
            p_o: format!("{:.4}", row.agreement.observed_agreement),
            p_e: format!("{:.4}", row.agreement.expected_agreement),
            band: row.agreement.band.clone().unwrap_or_default(),
        });
    }
    rows
}

impl Row {
    fn cells(&self) -> [&str; 9] {
        [
            &self.variant,
            &self.style,
            &self.shots,
            &self.n,
            &self.dropped,
            &self.kappa,
            &self.p_o,
            &self.p_e,
            &self.band,
        ]
    }
}

/// Serializes a report. Exports are pure functions of the report: exporting
/// twice yields byte-identical documents.
pub fn export_report(
    report: &ExperimentReport,
    format: ReportFormat,
) -> Result<String, ExperimentError> {
    let rows = rows_of(report);
    match format {
        ReportFormat::Csv => {
            let mut out = String::new();
            out.push_str(&COLUMNS.join(","));
            out.push('\n');
            for row in &rows {
                out.push_str(&row.cells().join(","));
                out.push('\n');
            }
            Ok(out)
        }
        ReportFormat::Table => {
            let mut widths: Vec<usize> = COLUMNS.iter().map(|c| c.len()).collect();
            for row in &rows {
                for (w, cell) in widths.iter_mut().zip(row.cells()) {
                    *w = (*w).max(cell.len());
                }
            }
            let render = |cells: [&str; 9]| -> String {
                cells
                    .iter()
                    .zip(&widths)
                    .map(|(cell, w)| format!("{cell:<w$}"))
                    .collect::<Vec<_>>()
                    .join("  ")
                    .trim_end()
                    .to_string()
            };
            let mut out = String::new();
            out.push_str(&render(COLUMNS));
            out.push('\n');
            let dashes: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
            let dash_cells: [&str; 9] = std::array::from_fn(|i| dashes[i].as_str());
            out.push_str(&render(dash_cells));
            out.push('\n');
            for row in &rows {
                out.push_str(&render(row.cells()));
                out.push('\n');
            }
            Ok(out)
        }
        ReportFormat::Record => {
            let mut out = serde_json::to_string_pretty(report).expect("report serializes");
            out.push('\n');
            Ok(out)
        }
    }
}
