//! Turning raw model continuations into codebook labels.
//!
//! The instruction constrains the output space but cannot guarantee it, so
//! normalization maps whatever came back onto the label set, falling back to
//! the [`UNPARSEABLE_TOKEN`] sentinel when no unambiguous match exists. The
//! sentinel is a first-class outcome, not an error: the raw output is kept
//! verbatim for audit and the miss flows into agreement scoring under a
//! configurable policy.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::{Codebook, DataItem};
use crate::llm::{BackendError, Client, CompletionRequest};
use crate::prompt::{build_prompt, PromptError, PromptSpec};

/// Sentinel assigned when no codebook label can be recovered from the raw
/// output. Reserved: codebooks may not define a label with this name.
pub const UNPARSEABLE_TOKEN: &str = "UNPARSEABLE";

/// A normalized coding outcome: a codebook label or the sentinel.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Assigned {
    Label(String),
    Unparseable,
}

impl Assigned {
    pub fn as_str(&self) -> &str {
        match self {
            Assigned::Label(label) => label,
            Assigned::Unparseable => UNPARSEABLE_TOKEN,
        }
    }

    pub fn is_unparseable(&self) -> bool {
        matches!(self, Assigned::Unparseable)
    }
}

impl Serialize for Assigned {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.as_str())
    }
}

impl<'de> Deserialize<'de> for Assigned {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(if s == UNPARSEABLE_TOKEN { Assigned::Unparseable } else { Assigned::Label(s) })
    }
}

/// One item's coding outcome with full provenance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CodingResult {
    pub item_id: String,
    pub assigned: Assigned,
    /// The model's continuation, verbatim.
    pub raw_output: String,
    pub prompt_fingerprint: String,
    pub spec_id: String,
    pub model_id: String,
}

#[derive(Debug, Error)]
pub enum LabelingError {
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("backend failure while coding item {item_id:?}: {source}")]
    Backend { item_id: String, source: BackendError },
    #[error("item {item_id:?} has empty text")]
    EmptyText { item_id: String },
}

/// Maps a raw continuation onto the label set:
///
/// 1. take the first line and trim whitespace, quotes, and punctuation;
/// 2. match it case-insensitively against the labels;
/// 3. otherwise, if exactly one label occurs as a whole word anywhere in the
///    raw output (case-insensitively), return it;
/// 4. otherwise the sentinel.
///
/// Deterministic, and never returns a label outside `labels`.
pub fn normalize_label<S: AsRef<str>>(raw: &str, labels: &[S]) -> Assigned {
    let first_line = raw.lines().next().unwrap_or("");
    let trimmed = first_line
        .trim_matches(|c: char| c.is_whitespace() || is_wrapping_punctuation(c))
        .to_lowercase();
    if !trimmed.is_empty() {
        for label in labels {
            if label.as_ref().to_lowercase() == trimmed {
                return Assigned::Label(label.as_ref().to_string());
            }
        }
    }

    let haystack = raw.to_lowercase();
    let mut found: Option<&str> = None;
    for label in labels {
        if contains_whole_word(&haystack, &label.as_ref().to_lowercase()) {
            if found.is_some() {
                return Assigned::Unparseable;
            }
            found = Some(label.as_ref());
        }
    }
    match found {
        Some(label) => Assigned::Label(label.to_string()),
        None => Assigned::Unparseable,
    }
}

fn is_wrapping_punctuation(c: char) -> bool {
    matches!(
        c,
        '"' | '\'' | '`' | '.' | ',' | ';' | ':' | '!' | '?' | '(' | ')' | '[' | ']' | '{' | '}'
            | '*' | '«' | '»' | '“' | '”' | '‘' | '’'
    )
}

fn contains_whole_word(haystack: &str, needle: &str) -> bool {
    if needle.is_empty() {
        return false;
    }
    let mut search_from = 0;
    while let Some(pos) = haystack[search_from..].find(needle) {
        let start = search_from + pos;
        let end = start + needle.len();
        let before_ok = haystack[..start].chars().next_back().is_none_or(|c| !c.is_alphanumeric());
        let after_ok = haystack[end..].chars().next().is_none_or(|c| !c.is_alphanumeric());
        if before_ok && after_ok {
            return true;
        }
        // Advance at least one full character.
        search_from = start + haystack[start..].chars().next().map_or(1, char::len_utf8);
    }
    false
}

/// Codes one item: renders the prompt, obtains a completion, and normalizes
/// the continuation. Deterministic for mock and replay backends.
pub fn code_item(
    item: &DataItem,
    codebook: &Codebook,
    spec: &PromptSpec,
    client: &Client,
) -> Result<CodingResult, LabelingError> {
    let prompt = build_prompt(codebook, spec, item)?;
    let request = CompletionRequest::for_label(prompt.full_text);
    let response = client.complete(&request).map_err(|source| LabelingError::Backend {
        item_id: item.id.clone(),
        source,
    })?;
    let labels = codebook.labels();
    Ok(CodingResult {
        item_id: item.id.clone(),
        assigned: normalize_label(&response.text, &labels),
        raw_output: response.text,
        prompt_fingerprint: prompt.spec_fingerprint,
        spec_id: spec.default_id(),
        model_id: response.model_id,
    })
}

/// A failed item in a batch; the batch itself keeps going.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemError {
    pub item_id: String,
    pub message: String,
}

/// Batch outcome: successful results in input order plus an error ledger.
#[derive(Debug, Default)]
pub struct BatchOutcome {
    pub results: Vec<CodingResult>,
    pub errors: Vec<ItemError>,
}

/// Codes a batch with bounded parallelism (the client's `max_parallel`).
/// Results come back in input order regardless of completion order, and one
/// item's failure never aborts the rest.
pub fn code_batch(
    items: &[DataItem],
    codebook: &Codebook,
    spec: &PromptSpec,
    client: &Client,
) -> BatchOutcome {
    let slots = run_bounded(items, client.max_parallel(), |item| {
        code_item(item, codebook, spec, client)
    });
    let mut outcome = BatchOutcome::default();
    for (item, slot) in items.iter().zip(slots) {
        match slot {
            Ok(result) => outcome.results.push(result),
            Err(err) => outcome.errors.push(ItemError {
                item_id: item.id.clone(),
                message: err.to_string(),
            }),
        }
    }
    outcome
}

/// Runs `work` over `items` on up to `max_parallel` worker threads, returning
/// outputs in input order.
pub(crate) fn run_bounded<T, R, F>(items: &[T], max_parallel: usize, work: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    if items.is_empty() {
        return Vec::new();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let (sender, receiver) = std::sync::mpsc::channel::<(usize, R)>();
    let workers = max_parallel.max(1).min(items.len());
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let sender = sender.clone();
            let next = &next;
            let work = &work;
            scope.spawn(move || loop {
                let index = next.fetch_add(1, std::sync::atomic::Ordering::SeqCst);
                if index >= items.len() {
                    break;
                }
                let result = work(&items[index]);
                if sender.send((index, result)).is_err() {
                    break;
                }
            });
        }
    });
    drop(sender);
    let mut indexed: Vec<(usize, R)> = receiver.into_iter().collect();
    indexed.sort_by_key(|(index, _)| *index);
    indexed.into_iter().map(|(_, result)| result).collect()
}

fn language_display(tag: &str) -> &str {
    match tag.to_lowercase().as_str() {
        "fr" => "French",
        "en" => "English",
        "de" => "German",
        "es" => "Spanish",
        "it" => "Italian",
        _ => tag,
    }
}

/// Translates one item's text through the same backend contract, with a
/// larger token budget. The original text is preserved on the returned item;
/// gold labels carry over unchanged.
pub fn translate_item(
    item: &DataItem,
    source_lang: &str,
    target_lang: &str,
    client: &Client,
) -> Result<DataItem, LabelingError> {
    if item.text.trim().is_empty() {
        return Err(LabelingError::EmptyText { item_id: item.id.clone() });
    }
    let source = language_display(source_lang);
    let target = language_display(target_lang);
    let prompt = format!(
        "Translate the following {source} text into {target}.\n\n{source}: {text}\n{target}:",
        text = item.text
    );
    let request = CompletionRequest::for_translation(prompt);
    let response = client.complete(&request).map_err(|source| LabelingError::Backend {
        item_id: item.id.clone(),
        source,
    })?;
    Ok(DataItem {
        id: item.id.clone(),
        text: response.text.trim().to_string(),
        gold_labels: item.gold_labels.clone(),
        original_text: Some(item.text.clone()),
    })
}

/// Convenience for tests and report layers: gold labels of one coder, keyed
/// by item id.
pub fn gold_map<'a>(items: &'a [DataItem], coder: &str) -> BTreeMap<&'a str, &'a str> {
    items
        .iter()
        .filter_map(|item| {
            item.gold_labels
                .get(coder)
                .map(|label| (item.id.as_str(), label.as_str()))
        })
        .collect()
}
