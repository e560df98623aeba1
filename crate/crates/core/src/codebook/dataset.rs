//! Dataset loading: the items to be coded, with optional reference labels.
//!
//! Datasets are CSV files whose first line declares the format version as a
//! comment (`# format_version = 1`). Required columns are `id` and `text`;
//! any number of `gold.<coder>` columns carry reference labels, and an
//! optional `original_text` column preserves pre-translation text.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use super::Codebook;

/// Current dataset file format version.
pub const DATASET_FORMAT_VERSION: u32 = 1;

/// One unit to be coded: an id, the text, and optional per-coder gold labels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DataItem {
    pub id: String,
    pub text: String,
    /// Reference labels keyed by coder name, e.g. `expert1`.
    pub gold_labels: BTreeMap<String, String>,
    /// Pre-translation text, set by the translation pass.
    pub original_text: Option<String>,
}

impl DataItem {
    pub fn new(id: impl Into<String>, text: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            gold_labels: BTreeMap::new(),
            original_text: None,
        }
    }
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("failed to read dataset {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: first line must declare `# format_version = {DATASET_FORMAT_VERSION}`")]
    MissingVersion { path: String },
    #[error("{path}: unsupported format_version {found} (expected {DATASET_FORMAT_VERSION})")]
    UnsupportedVersion { path: String, found: u32 },
    #[error("{path}: missing required column {column:?}")]
    MissingColumn { path: String, column: String },
    #[error("{path}: unknown column {column:?} (expected id, text, original_text, or gold.<coder>)")]
    UnknownColumn { path: String, column: String },
    #[error("{path} line {line}: {source}")]
    Csv { path: String, line: u64, source: csv::Error },
    #[error("{path} line {line}: duplicate item id {id:?}")]
    DuplicateId { path: String, line: u64, id: String },
    #[error("{path} line {line}: item {id:?} has empty text")]
    EmptyText { path: String, line: u64, id: String },
    #[error("item {id:?}: gold label {label:?} from coder {coder:?} is not in the codebook ({labels})")]
    GoldLabelOutsideCodebook { id: String, coder: String, label: String, labels: String },
}

/// Loads a dataset file. Ids must be unique and texts non-empty; gold labels
/// are read as-is (validate them against a codebook with
/// [`check_gold_labels`]).
pub fn load_dataset(path: &Path) -> Result<Vec<DataItem>, DatasetError> {
    let display = path.display().to_string();
    let raw = std::fs::read_to_string(path)
        .map_err(|source| DatasetError::Io { path: display.clone(), source })?;
    let (version_line, body) = raw
        .split_once('\n')
        .ok_or_else(|| DatasetError::MissingVersion { path: display.clone() })?;
    let version = parse_version_line(version_line)
        .ok_or_else(|| DatasetError::MissingVersion { path: display.clone() })?;
    if version != DATASET_FORMAT_VERSION {
        return Err(DatasetError::UnsupportedVersion { path: display, found: version });
    }

    let mut reader = csv::ReaderBuilder::new().from_reader(body.as_bytes());
    let headers = reader
        .headers()
        .map_err(|source| DatasetError::Csv { path: display.clone(), line: 2, source })?
        .clone();

    let mut id_col = None;
    let mut text_col = None;
    let mut original_col = None;
    let mut gold_cols: Vec<(usize, String)> = Vec::new();
    for (idx, name) in headers.iter().enumerate() {
        match name {
            "id" => id_col = Some(idx),
            "text" => text_col = Some(idx),
            "original_text" => original_col = Some(idx),
            _ => {
                if let Some(coder) = name.strip_prefix("gold.") {
                    if coder.is_empty() || coder.contains(',') || coder.contains('\n') {
                        return Err(DatasetError::UnknownColumn {
                            path: display,
                            column: name.to_string(),
                        });
                    }
                    gold_cols.push((idx, coder.to_string()));
                } else {
                    return Err(DatasetError::UnknownColumn {
                        path: display,
                        column: name.to_string(),
                    });
                }
            }
        }
    }
    let id_col = id_col.ok_or_else(|| DatasetError::MissingColumn {
        path: display.clone(),
        column: "id".into(),
    })?;
    let text_col = text_col.ok_or_else(|| DatasetError::MissingColumn {
        path: display.clone(),
        column: "text".into(),
    })?;

    let mut items = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|source| DatasetError::Csv {
            path: display.clone(),
            line: row_idx as u64 + 3,
            source,
        })?;
        // Body line + 1 for the version comment the csv reader never saw.
        let line = record.position().map_or(row_idx as u64 + 3, |p| p.line() + 1);
        let id = record.get(id_col).unwrap_or("").to_string();
        let text = record.get(text_col).unwrap_or("").to_string();
        if !seen.insert(id.clone()) {
            return Err(DatasetError::DuplicateId { path: display, line, id });
        }
        if text.trim().is_empty() {
            return Err(DatasetError::EmptyText { path: display, line, id });
        }
        let mut gold_labels = BTreeMap::new();
        for (idx, coder) in &gold_cols {
            let value = record.get(*idx).unwrap_or("");
            if !value.is_empty() {
                gold_labels.insert(coder.clone(), value.to_string());
            }
        }
        let original_text = original_col
            .and_then(|idx| record.get(idx))
            .filter(|v| !v.is_empty())
            .map(String::from);
        items.push(DataItem { id, text, gold_labels, original_text });
    }
    Ok(items)
}

/// Verifies that every gold label on every item names a code in `codebook`.
pub fn check_gold_labels(items: &[DataItem], codebook: &Codebook) -> Result<(), DatasetError> {
    for item in items {
        for (coder, label) in &item.gold_labels {
            if !codebook.contains_label(label) {
                return Err(DatasetError::GoldLabelOutsideCodebook {
                    id: item.id.clone(),
                    coder: coder.clone(),
                    label: label.clone(),
                    labels: codebook.labels().join(", "),
                });
            }
        }
    }
    Ok(())
}

/// Writes items back out in the dataset format. Gold columns are the sorted
/// union of coder names; `original_text` appears only when some item has one.
pub fn write_dataset(path: &Path, items: &[DataItem]) -> Result<(), DatasetError> {
    let display = path.display().to_string();
    let io_err = |source| DatasetError::Io { path: display.clone(), source };

    let mut coders: Vec<String> = items
        .iter()
        .flat_map(|i| i.gold_labels.keys().cloned())
        .collect();
    coders.sort();
    coders.dedup();
    let has_original = items.iter().any(|i| i.original_text.is_some());

    let mut out = Vec::new();
    writeln!(out, "# format_version = {DATASET_FORMAT_VERSION}").map_err(io_err)?;
    {
        let mut writer = csv::Writer::from_writer(&mut out);
        let mut header = vec!["id".to_string(), "text".to_string()];
        header.extend(coders.iter().map(|c| format!("gold.{c}")));
        if has_original {
            header.push("original_text".into());
        }
        writer.write_record(&header).map_err(|source| DatasetError::Csv {
            path: display.clone(),
            line: 2,
            source,
        })?;
        for item in items {
            let mut row = vec![item.id.clone(), item.text.clone()];
            for coder in &coders {
                row.push(item.gold_labels.get(coder).cloned().unwrap_or_default());
            }
            if has_original {
                row.push(item.original_text.clone().unwrap_or_default());
            }
            writer.write_record(&row).map_err(|source| DatasetError::Csv {
                path: display.clone(),
                line: 0,
                source,
            })?;
        }
        writer.flush().map_err(io_err)?;
    }
    std::fs::write(path, out).map_err(io_err)
}

fn parse_version_line(line: &str) -> Option<u32> {
    let rest = line.trim().strip_prefix('#')?.trim();
    let value = rest.strip_prefix("format_version")?.trim().strip_prefix('=')?.trim();
    value.parse().ok()
}
