//! Run record persistence: an append-only JSONL file.
//!
//! The first line is a meta record binding the file to a plan fingerprint;
//! every subsequent line is either a coding result or a per-item error. Each
//! result line carries the stable field set {item_id, assigned, raw_output,
//! prompt_fingerprint, spec_id, model_id}. Results are keyed for resume by
//! prompt fingerprint, so a completed (variant, item) pair is never re-coded
//! and stale entries (from an edited codebook or dataset) are never reused.

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::ExperimentError;
use crate::labeling::CodingResult;

/// Current run record format version.
pub const RECORD_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "record_type", rename_all = "snake_case")]
enum RecordLine {
    Meta {
        format_version: u32,
        plan_fingerprint: String,
        model_id: String,
    },
    Result {
        #[serde(flatten)]
        result: CodingResult,
    },
    Error {
        spec_id: String,
        item_id: String,
        message: String,
    },
}

/// An open run record file: previously persisted results plus an append handle.
#[derive(Debug)]
pub struct RunRecordFile {
    path: PathBuf,
    file: File,
    by_fingerprint: HashMap<String, CodingResult>,
}

impl RunRecordFile {
    /// Opens (or creates) a record file for the given plan. An existing file
    /// must carry the same plan fingerprint; results already on disk become
    /// the resume cache. When a fingerprint was recorded more than once the
    /// last line wins.
    pub fn open(
        path: &Path,
        plan_fingerprint: &str,
        model_id: &str,
    ) -> Result<Self, ExperimentError> {
        Self::open_inner(path, plan_fingerprint, model_id, true)
    }

    /// Read-only variant for report rebuilding: never appends a meta line.
    pub fn open_readonly(
        path: &Path,
        plan_fingerprint: &str,
        model_id: &str,
    ) -> Result<Self, ExperimentError> {
        Self::open_inner(path, plan_fingerprint, model_id, false)
    }

    fn open_inner(
        path: &Path,
        plan_fingerprint: &str,
        model_id: &str,
        write_meta: bool,
    ) -> Result<Self, ExperimentError> {
        let display = path.display().to_string();
        let existing = match std::fs::read_to_string(path) {
            Ok(contents) => Some(contents),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(source) => return Err(ExperimentError::Io { path: display, source }),
        };
        let mut by_fingerprint = HashMap::new();
        let mut needs_meta = true;
        if let Some(contents) = existing.filter(|c| !c.trim().is_empty()) {
            needs_meta = false;
            let mut saw_meta = false;
            for (idx, line) in contents.lines().enumerate() {
                if line.trim().is_empty() {
                    continue;
                }
                let parsed: RecordLine =
                    serde_json::from_str(line).map_err(|e| ExperimentError::RecordCorrupt {
                        path: display.clone(),
                        line: idx + 1,
                        message: e.to_string(),
                    })?;
                match parsed {
                    RecordLine::Meta { format_version, plan_fingerprint: found, .. } => {
                        if format_version != RECORD_FORMAT_VERSION {
                            return Err(ExperimentError::RecordCorrupt {
                                path: display,
                                line: idx + 1,
                                message: format!(
                                    "unsupported record format_version {format_version}"
                                ),
                            });
                        }
                        if found != plan_fingerprint {
                            return Err(ExperimentError::RecordMismatch {
                                path: display,
                                expected: plan_fingerprint.to_string(),
                                found,
                            });
                        }
                        saw_meta = true;
                    }
                    RecordLine::Result { result } => {
                        by_fingerprint.insert(result.prompt_fingerprint.clone(), result);
                    }
                    // Error lines are historical; affected items simply retry.
                    RecordLine::Error { .. } => {}
                }
            }
            if !saw_meta {
                return Err(ExperimentError::RecordCorrupt {
                    path: display,
                    line: 1,
                    message: "missing meta record".into(),
                });
            }
        }
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|source| ExperimentError::Io { path: display, source })?;
        let mut record = Self { path: path.to_path_buf(), file, by_fingerprint };
        if needs_meta && write_meta {
            record.append(&RecordLine::Meta {
                format_version: RECORD_FORMAT_VERSION,
                plan_fingerprint: plan_fingerprint.to_string(),
                model_id: model_id.to_string(),
            })?;
        }
        Ok(record)
    }

    pub fn lookup(&self, prompt_fingerprint: &str) -> Option<&CodingResult> {
        self.by_fingerprint.get(prompt_fingerprint)
    }

    /// Number of persisted results.
    pub fn len(&self) -> usize {
        self.by_fingerprint.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_fingerprint.is_empty()
    }

    pub fn append_result(&mut self, result: &CodingResult) -> Result<(), ExperimentError> {
        self.append(&RecordLine::Result { result: result.clone() })?;
        self.by_fingerprint.insert(result.prompt_fingerprint.clone(), result.clone());
        Ok(())
    }

    pub fn append_error(
        &mut self,
        spec_id: &str,
        item_id: &str,
        message: &str,
    ) -> Result<(), ExperimentError> {
        self.append(&RecordLine::Error {
            spec_id: spec_id.to_string(),
            item_id: item_id.to_string(),
            message: message.to_string(),
        })
    }

    fn append(&mut self, line: &RecordLine) -> Result<(), ExperimentError> {
        let json = serde_json::to_string(line).expect("record line serializes");
        writeln!(self.file, "{json}").map_err(|source| ExperimentError::Io {
            path: self.path.display().to_string(),
            source,
        })?;
        self.file.flush().map_err(|source| ExperimentError::Io {
            path: self.path.display().to_string(),
            source,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::Assigned;

    fn result(id: &str, fingerprint: &str) -> CodingResult {
        CodingResult {
            item_id: id.into(),
            assigned: Assigned::Label("HIGH".into()),
            raw_output: "HIGH".into(),
            prompt_fingerprint: fingerprint.into(),
            spec_id: "codebook-0shot".into(),
            model_id: "mock".into(),
        }
    }

    #[test]
    fn results_survive_reopen() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        {
            let mut record = RunRecordFile::open(&path, "fp", "mock").unwrap();
            record.append_result(&result("q1", "abc")).unwrap();
            record.append_error("codebook-0shot", "q2", "boom").unwrap();
        }
        let record = RunRecordFile::open(&path, "fp", "mock").unwrap();
        assert_eq!(record.len(), 1);
        assert_eq!(record.lookup("abc").unwrap().item_id, "q1");
        assert!(record.lookup("missing").is_none());
    }

    #[test]
    fn wrong_plan_fingerprint_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        drop(RunRecordFile::open(&path, "fp-one", "mock").unwrap());
        let err = RunRecordFile::open(&path, "fp-two", "mock").unwrap_err();
        assert!(matches!(err, ExperimentError::RecordMismatch { .. }));
    }

    #[test]
    fn result_lines_carry_the_contract_fields() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        let mut record = RunRecordFile::open(&path, "fp", "mock").unwrap();
        record.append_result(&result("q1", "abc")).unwrap();
        drop(record);

        let contents = std::fs::read_to_string(&path).unwrap();
        let result_line = contents.lines().nth(1).unwrap();
        let value: serde_json::Value = serde_json::from_str(result_line).unwrap();
        for field in ["item_id", "assigned", "raw_output", "prompt_fingerprint", "spec_id", "model_id"] {
            assert!(value.get(field).is_some(), "missing field {field}");
        }
    }

    #[test]
    fn corrupt_lines_report_their_number() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.jsonl");
        std::fs::write(
            &path,
            "{\"record_type\":\"meta\",\"format_version\":1,\"plan_fingerprint\":\"fp\",\"model_id\":\"m\"}\nnot json\n",
        )
        .unwrap();
        let err = RunRecordFile::open(&path, "fp", "m").unwrap_err();
        assert!(matches!(err, ExperimentError::RecordCorrupt { line: 2, .. }));
    }
}
