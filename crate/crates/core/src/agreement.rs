//! Inter-rater reliability between two label sequences: confusion matrix,
//! observed/expected agreement, Cohen's kappa, and interpretation bands.
//!
//! Counts are exact integers; all agreement math runs in double precision.
//! Kappa is `(p_o - p_e) / (1 - p_e)` where `p_o` is the fraction of items
//! both coders labeled identically and `p_e` is the chance agreement implied
//! by the coders' marginal label distributions.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codebook::DataItem;
use crate::labeling::{CodingResult, UNPARSEABLE_TOKEN};

/// One coder's labels, aligned by item index against a fixed label space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSequence {
    pub coder_name: String,
    pub labels: Vec<String>,
    pub label_space: Vec<String>,
}

impl LabelSequence {
    pub fn new(
        coder_name: impl Into<String>,
        labels: Vec<String>,
        label_space: Vec<String>,
    ) -> Self {
        Self { coder_name: coder_name.into(), labels, label_space }
    }
}

/// k×k contingency table; rows are coder A, columns are coder B.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub label_space: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub n: u64,
}

impl ConfusionMatrix {
    pub fn transpose(&self) -> ConfusionMatrix {
        let k = self.label_space.len();
        let mut counts = vec![vec![0u64; k]; k];
        for (i, row) in self.counts.iter().enumerate() {
            for (j, &c) in row.iter().enumerate() {
                counts[j][i] = c;
            }
        }
        ConfusionMatrix { label_space: self.label_space.clone(), counts, n: self.n }
    }
}

/// Interpretation scale for kappa values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scale {
    #[serde(rename = "landis-koch")]
    LandisKoch,
    #[serde(rename = "mchugh")]
    McHugh,
}

impl Scale {
    pub fn name(self) -> &'static str {
        match self {
            Scale::LandisKoch => "landis-koch",
            Scale::McHugh => "mchugh",
        }
    }
}

/// Agreement summary for one coder pair.
///
/// Serializes to the structured record `{kappa, p_o, p_e, n, dropped, scale,
/// band, matrix, ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgreementReport {
    pub kappa: f64,
    #[serde(rename = "p_o")]
    pub observed_agreement: f64,
    #[serde(rename = "p_e")]
    pub expected_agreement: f64,
    pub n: u64,
    /// Items removed by the exclude-unparseable policy before scoring.
    pub dropped: u64,
    pub label_space: Vec<String>,
    pub row_marginals: Vec<u64>,
    pub col_marginals: Vec<u64>,
    pub matrix: Vec<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scale: Option<Scale>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub band: Option<String>,
}

#[derive(Debug, Error)]
pub enum AgreementError {
    #[error("label sequences have different lengths ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("label sequences have different label spaces ({a:?} vs {b:?})")]
    LabelSpaceMismatch { a: Vec<String>, b: Vec<String> },
    #[error("label sequences must contain at least one item")]
    Empty,
    #[error("coder {coder:?} assigned {label:?} which is not in the label space")]
    LabelOutsideSpace { coder: String, label: String },
    #[error("kappa {0} is outside [-1, 1]")]
    KappaOutOfRange(f64),
    #[error("item {item_id:?} has no gold label from coder {coder:?}")]
    MissingGold { item_id: String, coder: String },
    #[error("no result for item {item_id:?}")]
    UnknownItem { item_id: String },
}

/// Builds the contingency table of two aligned sequences.
pub fn confusion_matrix(
    a: &LabelSequence,
    b: &LabelSequence,
) -> Result<ConfusionMatrix, AgreementError> {
    if a.labels.len() != b.labels.len() {
        return Err(AgreementError::LengthMismatch { a: a.labels.len(), b: b.labels.len() });
    }
    if a.labels.is_empty() {
        return Err(AgreementError::Empty);
    }
    if a.label_space != b.label_space {
        return Err(AgreementError::LabelSpaceMismatch {
            a: a.label_space.clone(),
            b: b.label_space.clone(),
        });
    }
    let index_of = |seq: &LabelSequence, label: &str| -> Result<usize, AgreementError> {
        seq.label_space
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| AgreementError::LabelOutsideSpace {
                coder: seq.coder_name.clone(),
                label: label.to_string(),
            })
    };
    let k = a.label_space.len();
    let mut counts = vec![vec![0u64; k]; k];
    for (la, lb) in a.labels.iter().zip(&b.labels) {
        counts[index_of(a, la)?][index_of(b, lb)?] += 1;
    }
    Ok(ConfusionMatrix {
        label_space: a.label_space.clone(),
        counts,
        n: a.labels.len() as u64,
    })
}

/// Computes observed agreement, expected agreement, and Cohen's kappa from a
/// contingency table. Interpretation is left unset; attach one with
/// [`interpret`].
///
/// Degenerate case: when `p_e = 1` both coders are constant on the same
/// label, so kappa is 1.0 when `p_o = 1` and 0.0 otherwise.
pub fn cohen_kappa(matrix: &ConfusionMatrix) -> AgreementReport {
    let k = matrix.label_space.len();
    let n = matrix.n as f64;
    let mut row_marginals = vec![0u64; k];
    let mut col_marginals = vec![0u64; k];
    let mut trace = 0u64;
    for (i, row) in matrix.counts.iter().enumerate() {
        for (j, &c) in row.iter().enumerate() {
            row_marginals[i] += c;
            col_marginals[j] += c;
            if i == j {
                trace += c;
            }
        }
    }
    let observed = trace as f64 / n;
    let expected = row_marginals
        .iter()
        .zip(&col_marginals)
        .map(|(&r, &c)| (r as f64 / n) * (c as f64 / n))
        .sum::<f64>();
    let kappa = if expected >= 1.0 {
        if observed >= 1.0 {
            1.0
        } else {
            0.0
        }
    } else {
        (observed - expected) / (1.0 - expected)
    };
    AgreementReport {
        kappa,
        observed_agreement: observed,
        expected_agreement: expected,
        n: matrix.n,
        dropped: 0,
        label_space: matrix.label_space.clone(),
        row_marginals,
        col_marginals,
        matrix: matrix.counts.clone(),
        scale: None,
        band: None,
    }
}

/// Names the qualitative band a kappa value falls in on the given scale.
pub fn interpret_kappa(kappa: f64, scale: Scale) -> Result<&'static str, AgreementError> {
    if !(-1.0..=1.0).contains(&kappa) || kappa.is_nan() {
        return Err(AgreementError::KappaOutOfRange(kappa));
    }
    let band = match scale {
        Scale::LandisKoch => match kappa {
            k if k <= 0.0 => "poor",
            k if k <= 0.20 => "slight",
            k if k <= 0.40 => "fair",
            k if k <= 0.60 => "moderate",
            k if k <= 0.80 => "substantial",
            _ => "almost perfect",
        },
        // McHugh leaves kappa below zero undefined; report it as "none".
        Scale::McHugh => match kappa {
            k if k <= 0.20 => "none",
            k if k <= 0.39 => "minimal",
            k if k <= 0.59 => "weak",
            k if k <= 0.79 => "moderate",
            k if k <= 0.90 => "strong",
            _ => "almost perfect",
        },
    };
    Ok(band)
}

/// Attaches an interpretation band to a report.
pub fn interpret(report: &mut AgreementReport, scale: Scale) -> Result<(), AgreementError> {
    let band = interpret_kappa(report.kappa, scale)?;
    report.scale = Some(scale);
    report.band = Some(band.to_string());
    Ok(())
}

/// What to do with UNPARSEABLE outcomes when scoring against gold labels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnparseablePolicy {
    /// Drop affected items and report how many were dropped.
    #[serde(rename = "exclude")]
    ExcludeUnparseable,
    /// Keep them: UNPARSEABLE joins the label space, so misses depress kappa
    /// instead of silently shrinking n.
    #[serde(rename = "count-as-label")]
    CountAsLabel,
}

/// Model and gold sequences aligned by item id, ready for scoring.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub model: LabelSequence,
    pub gold: LabelSequence,
    pub dropped: u64,
}

/// Aligns coding results with one coder's gold labels.
///
/// `label_space` is the codebook's authored label list; under
/// [`UnparseablePolicy::CountAsLabel`] the sentinel is appended to it for
/// both sequences.
pub fn align_and_filter(
    results: &[CodingResult],
    items: &[DataItem],
    gold_coder: &str,
    policy: UnparseablePolicy,
    label_space: &[String],
) -> Result<AlignedPair, AgreementError> {
    let by_id: std::collections::HashMap<&str, &DataItem> =
        items.iter().map(|item| (item.id.as_str(), item)).collect();
    let space: Vec<String> = match policy {
        UnparseablePolicy::ExcludeUnparseable => label_space.to_vec(),
        UnparseablePolicy::CountAsLabel => {
            let mut s = label_space.to_vec();
            s.push(UNPARSEABLE_TOKEN.to_string());
            s
        }
    };
    let mut model_labels = Vec::with_capacity(results.len());
    let mut gold_labels = Vec::with_capacity(results.len());
    let mut dropped = 0u64;
    let mut model_name = String::from("model");
    for result in results {
        let item = by_id.get(result.item_id.as_str()).ok_or_else(|| {
            AgreementError::UnknownItem { item_id: result.item_id.clone() }
        })?;
        let gold = item.gold_labels.get(gold_coder).ok_or_else(|| {
            AgreementError::MissingGold {
                item_id: result.item_id.clone(),
                coder: gold_coder.to_string(),
            }
        })?;
        if result.assigned.is_unparseable() && policy == UnparseablePolicy::ExcludeUnparseable {
            dropped += 1;
            continue;
        }
        model_labels.push(result.assigned.as_str().to_string());
        gold_labels.push(gold.clone());
        model_name = result.model_id.clone();
    }
    Ok(AlignedPair {
        model: LabelSequence::new(model_name, model_labels, space.clone()),
        gold: LabelSequence::new(gold_coder, gold_labels, space),
        dropped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::labeling::Assigned;
    use proptest::prelude::*;

    fn seq(coder: &str, labels: &[&str], space: &[&str]) -> LabelSequence {
        LabelSequence::new(
            coder,
            labels.iter().map(|s| s.to_string()).collect(),
            space.iter().map(|s| s.to_string()).collect(),
        )
    }

    #[test]
    fn direct_count_example() {
        let a = seq("a", &["H", "H", "L"], &["H", "L"]);
        let b = seq("b", &["H", "L", "L"], &["H", "L"]);
        let m = confusion_matrix(&a, &b).unwrap();
        assert_eq!(m.counts, vec![vec![1, 1], vec![0, 1]]);
        assert_eq!(m.n, 3);
    }

    #[test]
    fn identical_sequences_fill_the_diagonal() {
        let labels = ["H", "L", "H", "H", "L", "L", "H", "L", "H", "L"];
        let a = seq("a", &labels, &["H", "L"]);
        let m = confusion_matrix(&a, &a).unwrap();
        let diag: u64 = (0..2).map(|i| m.counts[i][i]).sum();
        assert_eq!(diag, 10);
    }

    #[test]
    fn mismatched_spaces_are_rejected() {
        let a = seq("a", &["H"], &["H", "L"]);
        let b = seq("b", &["H"], &["H", "M"]);
        assert!(matches!(
            confusion_matrix(&a, &b),
            Err(AgreementError::LabelSpaceMismatch { .. })
        ));
    }

    #[test]
    fn mismatched_lengths_are_rejected() {
        let a = seq("a", &["H", "L"], &["H", "L"]);
        let b = seq("b", &["H"], &["H", "L"]);
        assert!(matches!(confusion_matrix(&a, &b), Err(AgreementError::LengthMismatch { .. })));
    }

    #[test]
    fn label_outside_space_is_rejected() {
        let a = seq("a", &["X"], &["H", "L"]);
        let b = seq("b", &["H"], &["H", "L"]);
        assert!(matches!(
            confusion_matrix(&a, &b),
            Err(AgreementError::LabelOutsideSpace { .. })
        ));
    }

    #[test]
    fn hand_computed_fixture() {
        // rowsums (25, 25), colsums (30, 20):
        // p_o = 35/50, p_e = (25*30 + 25*20) / 2500.
        let m = ConfusionMatrix {
            label_space: vec!["H".into(), "L".into()],
            counts: vec![vec![20, 5], vec![10, 15]],
            n: 50,
        };
        let report = cohen_kappa(&m);
        assert!((report.observed_agreement - 0.70).abs() < 1e-15);
        assert!((report.expected_agreement - 0.50).abs() < 1e-15);
        assert!((report.kappa - 0.40).abs() < 1e-12);
        assert_eq!(report.row_marginals, vec![25, 25]);
        assert_eq!(report.col_marginals, vec![30, 20]);
    }

    #[test]
    fn identical_sequences_score_one() {
        let labels = ["H", "L", "H", "L", "L"];
        let a = seq("a", &labels, &["H", "L"]);
        let report = cohen_kappa(&confusion_matrix(&a, &a).unwrap());
        assert_eq!(report.kappa, 1.0);
    }

    #[test]
    fn both_constant_same_label_is_defined_as_one() {
        let a = seq("a", &["H", "H", "H"], &["H", "L"]);
        let report = cohen_kappa(&confusion_matrix(&a, &a).unwrap());
        assert!((report.expected_agreement - 1.0).abs() < 1e-15);
        assert_eq!(report.kappa, 1.0);
    }

    #[test]
    fn independent_uniform_sequences_score_near_zero() {
        // Two independent coders labeling uniformly at random: kappa ~ 0.
        let mut state = 0x5eed_1234_5678_9abcu64;
        let mut next = || {
            state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
            let mut z = state;
            z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
            z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
            z ^ (z >> 31)
        };
        let n = 10_000;
        let pick = |bit: u64| if bit & 1 == 0 { "H" } else { "L" };
        let a_labels: Vec<String> = (0..n).map(|_| pick(next()).to_string()).collect();
        let b_labels: Vec<String> = (0..n).map(|_| pick(next()).to_string()).collect();
        let space = vec!["H".to_string(), "L".to_string()];
        let a = LabelSequence::new("a", a_labels, space.clone());
        let b = LabelSequence::new("b", b_labels, space);
        let report = cohen_kappa(&confusion_matrix(&a, &b).unwrap());
        assert!(report.kappa.abs() < 0.05, "kappa = {}", report.kappa);
    }

    #[test]
    fn landis_koch_bands() {
        assert_eq!(interpret_kappa(0.61, Scale::LandisKoch).unwrap(), "substantial");
        assert_eq!(interpret_kappa(0.38, Scale::LandisKoch).unwrap(), "fair");
        assert_eq!(interpret_kappa(0.88, Scale::LandisKoch).unwrap(), "almost perfect");
        assert_eq!(interpret_kappa(0.90, Scale::LandisKoch).unwrap(), "almost perfect");
        // Boundary values belong to the lower band.
        assert_eq!(interpret_kappa(0.0, Scale::LandisKoch).unwrap(), "poor");
        assert_eq!(interpret_kappa(0.20, Scale::LandisKoch).unwrap(), "slight");
        assert_eq!(interpret_kappa(0.40, Scale::LandisKoch).unwrap(), "fair");
        assert_eq!(interpret_kappa(0.60, Scale::LandisKoch).unwrap(), "moderate");
        assert_eq!(interpret_kappa(0.80, Scale::LandisKoch).unwrap(), "substantial");
        assert_eq!(interpret_kappa(-0.3, Scale::LandisKoch).unwrap(), "poor");
    }

    #[test]
    fn mchugh_bands() {
        assert_eq!(interpret_kappa(0.10, Scale::McHugh).unwrap(), "none");
        assert_eq!(interpret_kappa(0.39, Scale::McHugh).unwrap(), "minimal");
        assert_eq!(interpret_kappa(0.45, Scale::McHugh).unwrap(), "weak");
        assert_eq!(interpret_kappa(0.61, Scale::McHugh).unwrap(), "moderate");
        assert_eq!(interpret_kappa(0.85, Scale::McHugh).unwrap(), "strong");
        assert_eq!(interpret_kappa(0.95, Scale::McHugh).unwrap(), "almost perfect");
    }

    #[test]
    fn out_of_range_kappa_is_rejected() {
        assert!(matches!(
            interpret_kappa(1.5, Scale::LandisKoch),
            Err(AgreementError::KappaOutOfRange(_))
        ));
        assert!(matches!(
            interpret_kappa(f64::NAN, Scale::McHugh),
            Err(AgreementError::KappaOutOfRange(_))
        ));
    }

    fn fixture_results(n_unparseable: usize) -> (Vec<CodingResult>, Vec<DataItem>) {
        let mut results = Vec::new();
        let mut items = Vec::new();
        for i in 0..10 {
            let id = format!("q{i}");
            let mut item = DataItem::new(id.clone(), format!("question {i}"));
            item.gold_labels.insert("expert1".into(), "HIGH".into());
            items.push(item);
            results.push(CodingResult {
                item_id: id,
                assigned: if i < n_unparseable {
                    Assigned::Unparseable
                } else {
                    Assigned::Label("HIGH".into())
                },
                raw_output: String::new(),
                prompt_fingerprint: String::new(),
                spec_id: "codebook-0shot".into(),
                model_id: "mock".into(),
            });
        }
        (results, items)
    }

    #[test]
    fn exclude_policy_drops_and_reports() {
        let (results, items) = fixture_results(1);
        let space = vec!["HIGH".to_string(), "LOW".to_string()];
        let aligned = align_and_filter(
            &results,
            &items,
            "expert1",
            UnparseablePolicy::ExcludeUnparseable,
            &space,
        )
        .unwrap();
        assert_eq!(aligned.model.labels.len(), 9);
        assert_eq!(aligned.gold.labels.len(), 9);
        assert_eq!(aligned.dropped, 1);
        assert_eq!(aligned.model.label_space, space);
    }

    #[test]
    fn count_policy_grows_the_label_space() {
        let (results, items) = fixture_results(1);
        let space = vec!["HIGH".to_string(), "LOW".to_string()];
        let aligned =
            align_and_filter(&results, &items, "expert1", UnparseablePolicy::CountAsLabel, &space)
                .unwrap();
        assert_eq!(aligned.model.labels.len(), 10);
        assert_eq!(aligned.dropped, 0);
        assert_eq!(aligned.model.label_space.len(), 3);
        assert_eq!(aligned.model.label_space[2], UNPARSEABLE_TOKEN);
    }

    #[test]
    fn missing_gold_names_the_item() {
        let (results, mut items) = fixture_results(0);
        items[3].gold_labels.clear();
        let space = vec!["HIGH".to_string(), "LOW".to_string()];
        let err = align_and_filter(
            &results,
            &items,
            "expert1",
            UnparseablePolicy::CountAsLabel,
            &space,
        )
        .unwrap_err();
        assert!(matches!(err, AgreementError::MissingGold { ref item_id, .. } if item_id == "q3"));
    }

    /// Test-only oracle: kappa straight from the definition, with chance
    /// agreement enumerated over all position pairs.
    pub(crate) fn kappa_brute_force(a: &[String], b: &[String]) -> f64 {
        assert_eq!(a.len(), b.len());
        let n = a.len() as f64;
        let agree = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64;
        let p_o = agree / n;
        let mut matches = 0u64;
        for x in a {
            for y in b {
                if x == y {
                    matches += 1;
                }
            }
        }
        let p_e = matches as f64 / (n * n);
        if p_e >= 1.0 {
            if p_o >= 1.0 {
                1.0
            } else {
                0.0
            }
        } else {
            (p_o - p_e) / (1.0 - p_e)
        }
    }

    proptest! {
        #[test]
        fn kappa_is_symmetric_under_transpose(
            counts in prop::collection::vec(prop::collection::vec(0u64..20, 3), 3),
        ) {
            let n: u64 = counts.iter().flatten().sum();
            prop_assume!(n > 0);
            let m = ConfusionMatrix {
                label_space: vec!["A".into(), "B".into(), "C".into()],
                counts,
                n,
            };
            let a = cohen_kappa(&m);
            let b = cohen_kappa(&m.transpose());
            prop_assert!((a.kappa - b.kappa).abs() < 1e-12);
        }

        #[test]
        fn kappa_is_invariant_under_consistent_relabeling(
            pairs in prop::collection::vec((0usize..3, 0usize..3), 1..40),
            permutation in Just([2usize, 0, 1]),
        ) {
            let names = ["A", "B", "C"];
            let space: Vec<String> = names.iter().map(|s| s.to_string()).collect();
            let a_labels: Vec<String> = pairs.iter().map(|(x, _)| names[*x].to_string()).collect();
            let b_labels: Vec<String> = pairs.iter().map(|(_, y)| names[*y].to_string()).collect();
            let base = cohen_kappa(&confusion_matrix(
                &LabelSequence::new("a", a_labels.clone(), space.clone()),
                &LabelSequence::new("b", b_labels.clone(), space.clone()),
            ).unwrap());

            let renamed = |labels: &[String]| -> Vec<String> {
                labels
                    .iter()
                    .map(|l| {
                        let idx = names.iter().position(|n| n == l).unwrap();
                        names[permutation[idx]].to_string()
                    })
                    .collect()
            };
            let permuted = cohen_kappa(&confusion_matrix(
                &LabelSequence::new("a", renamed(&a_labels), space.clone()),
                &LabelSequence::new("b", renamed(&b_labels), space),
            ).unwrap());
            prop_assert!((base.kappa - permuted.kappa).abs() < 1e-12);
        }

        #[test]
        fn kappa_stays_in_range(
            counts in prop::collection::vec(prop::collection::vec(0u64..50, 4), 4),
        ) {
            let n: u64 = counts.iter().flatten().sum();
            prop_assume!(n > 0);
            let m = ConfusionMatrix {
                label_space: vec!["A".into(), "B".into(), "C".into(), "D".into()],
                counts,
                n,
            };
            let report = cohen_kappa(&m);
            prop_assert!(report.kappa >= -1.0 - 1e-12);
            prop_assert!(report.kappa <= 1.0 + 1e-12);
            prop_assert!((0.0..=1.0).contains(&report.observed_agreement));
            prop_assert!((0.0..=1.0).contains(&report.expected_agreement));
        }

        #[test]
        fn definition_matches_brute_force(
            pairs in prop::collection::vec((0usize..4, 0usize..4), 1..12),
        ) {
            let names = ["A", "B", "C", "D"];
            let space: Vec<String> = names.iter().map(|s| s.to_string()).collect();
            let a_labels: Vec<String> = pairs.iter().map(|(x, _)| names[*x].to_string()).collect();
            let b_labels: Vec<String> = pairs.iter().map(|(_, y)| names[*y].to_string()).collect();
            let report = cohen_kappa(&confusion_matrix(
                &LabelSequence::new("a", a_labels.clone(), space.clone()),
                &LabelSequence::new("b", b_labels.clone(), space),
            ).unwrap());
            let oracle = kappa_brute_force(&a_labels, &b_labels);
            prop_assert!((report.kappa - oracle).abs() < 1e-12);
        }
    }
}
