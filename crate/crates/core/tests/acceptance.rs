//! Acceptance suite: every criterion below prints one PASS/FAIL line
//! (visible with `cargo test --test acceptance -- --nocapture`).
//!
//! Expected values come from three sources only: hand arithmetic frozen into
//! the tests, independently implemented brute-force oracles, and golden
//! fixtures generated once and reviewed by hand.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use deduct_core::agreement::{
    cohen_kappa, confusion_matrix, interpret_kappa, ConfusionMatrix, LabelSequence, Scale,
};
use deduct_core::codebook::{load_dataset, parse_codebook, DataItem};
use deduct_core::experiment::{
    build_report, default_grid, export_report, load_plan, parse_plan, run_experiment,
    ExperimentError, ReportFormat,
};
use deduct_core::labeling::{code_batch, normalize_label, Assigned};
use deduct_core::llm::{BackendConfig, Client, MockRule};
use deduct_core::prompt::{
    build_prompt, render_codebook_centered, render_example_centered, PromptSpec, PromptStyle,
};

/// Prints the criterion verdict even when an assertion unwinds.
struct Criterion {
    name: &'static str,
    passed: bool,
}

impl Criterion {
    fn start(name: &'static str) -> Self {
        Self { name, passed: false }
    }

    fn pass(mut self) {
        self.passed = true;
    }
}

impl Drop for Criterion {
    fn drop(&mut self) {
        println!(
            "ACCEPTANCE {:<28} {}",
            self.name,
            if self.passed { "PASS" } else { "FAIL" }
        );
    }
}

fn samples_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../samples")
}

fn complexity_codebook() -> deduct_core::Codebook {
    let source =
        std::fs::read_to_string(samples_dir().join("codebooks/question_complexity.toml")).unwrap();
    parse_codebook(&source).unwrap()
}

/// Independent oracle: kappa straight from its definition. Observed agreement
/// by direct position comparison; chance agreement by enumerating all n^2
/// position pairs instead of multiplying marginals.
fn kappa_brute_force(a: &[String], b: &[String]) -> f64 {
    assert_eq!(a.len(), b.len());
    let n = a.len() as f64;
    let p_o = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut chance_matches = 0u64;
    for x in a {
        for y in b {
            if x == y {
                chance_matches += 1;
            }
        }
    }
    let p_e = chance_matches as f64 / (n * n);
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

#[test]
fn kappa_oracle_equivalence() {
    let criterion = Criterion::start("kappa-oracle-equivalence");
    let started = Instant::now();
    let mut rng = StdRng::seed_from_u64(0x5eed_cafe);
    let names = ["A", "B", "C", "D"];
    for _ in 0..1000 {
        let k = rng.random_range(2..=4usize);
        let len = rng.random_range(1..=12usize);
        let space: Vec<String> = names[..k].iter().map(|s| s.to_string()).collect();
        let a_labels: Vec<String> =
            (0..len).map(|_| names[rng.random_range(0..k)].to_string()).collect();
        let b_labels: Vec<String> =
            (0..len).map(|_| names[rng.random_range(0..k)].to_string()).collect();

        let report = cohen_kappa(
            &confusion_matrix(
                &LabelSequence::new("a", a_labels.clone(), space.clone()),
                &LabelSequence::new("b", b_labels.clone(), space),
            )
            .unwrap(),
        );
        let oracle = kappa_brute_force(&a_labels, &b_labels);
        assert!(
            (report.kappa - oracle).abs() < 1e-12,
            "kappa {} vs oracle {} for a={a_labels:?} b={b_labels:?}",
            report.kappa,
            oracle
        );
    }
    assert!(started.elapsed() < Duration::from_secs(5), "took {:?}", started.elapsed());
    criterion.pass();
}

#[test]
fn hand_computed_fixture() {
    let criterion = Criterion::start("hand-computed-fixture");
    // rowsums (25, 25), colsums (30, 20):
    // p_o = 35/50 = 0.70, p_e = (25*30 + 25*20)/2500 = 0.50,
    // kappa = (0.70 - 0.50) / (1 - 0.50) = 0.40.
    let m = ConfusionMatrix {
        label_space: vec!["HIGH".into(), "LOW".into()],
        counts: vec![vec![20, 5], vec![10, 15]],
        n: 50,
    };
    let report = cohen_kappa(&m);
    assert!((report.observed_agreement - 0.70).abs() < 1e-15);
    assert!((report.expected_agreement - 0.50).abs() < 1e-15);
    assert!((report.kappa - 0.40).abs() < 1e-12);

    let labels: Vec<String> = ["HIGH", "LOW", "HIGH", "LOW", "LOW", "HIGH"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let space = vec!["HIGH".to_string(), "LOW".to_string()];
    let seq = LabelSequence::new("x", labels, space);
    let identity = cohen_kappa(&confusion_matrix(&seq, &seq).unwrap());
    assert_eq!(identity.kappa, 1.0);
    criterion.pass();
}

#[test]
fn interpretation_bands() {
    let criterion = Criterion::start("interpretation-bands");
    assert_eq!(interpret_kappa(0.61, Scale::LandisKoch).unwrap(), "substantial");
    assert_eq!(interpret_kappa(0.38, Scale::LandisKoch).unwrap(), "fair");
    assert_eq!(interpret_kappa(0.88, Scale::LandisKoch).unwrap(), "almost perfect");
    assert_eq!(interpret_kappa(0.90, Scale::LandisKoch).unwrap(), "almost perfect");
    criterion.pass();
}

#[test]
fn prompt_golden_rendering() {
    let criterion = Criterion::start("prompt-golden-rendering");
    let book = complexity_codebook();
    let item = DataItem::new("golden", "Why do birds sing?");

    let one_shot = PromptSpec::new(PromptStyle::CodebookCentered, 1);
    let body = render_codebook_centered(&book, &one_shot).unwrap();
    assert!(body.contains(
        "Code: HIGH\n\
         Description: the answer to this question is not a simple fact but requires explaining a mechanism, a relationship, etc.\n\
         Examples: Why were dinosaurs so big?"
    ));

    let example_centered = PromptSpec::new(PromptStyle::ExampleCentered, 1);
    let sentences = render_example_centered(&book, &example_centered).unwrap();
    assert!(sentences.contains(
        "\"Why were dinosaurs so big?\" is an example of \"HIGH\" because the answer to this \
         question is not a simple fact but requires explaining a mechanism, a relationship, etc."
    ));

    let zero_shot = PromptSpec::new(PromptStyle::CodebookCentered, 0);
    let zero_prompt = build_prompt(&book, &zero_shot, &item).unwrap();
    assert!(!zero_prompt.full_text.contains("Examples:"));

    // Every grid variant carries the identity modifier and the output-space
    // instruction.
    for (style, shots) in default_grid() {
        let spec = PromptSpec::new(style, shots);
        let prompt = build_prompt(&book, &spec, &item).unwrap();
        assert!(prompt
            .full_text
            .starts_with("I am a developmental psychologist who has expertise in linguistics."));
        assert!(prompt.full_text.contains("Choose from the following candidates: HIGH, LOW"));
    }

    // Golden fixture, generated once and reviewed by hand (stored with a
    // trailing newline).
    let golden = include_str!("fixtures/golden_codebook_one_shot.txt");
    let rendered = build_prompt(&book, &one_shot, &item).unwrap();
    assert_eq!(format!("{}\n", rendered.full_text), golden);

    // Byte-determinism across 100 repeated renders.
    for _ in 0..100 {
        let again = build_prompt(&book, &one_shot, &item).unwrap();
        assert_eq!(again.full_text, rendered.full_text);
        assert_eq!(again.spec_fingerprint, rendered.spec_fingerprint);
    }
    criterion.pass();
}

#[test]
fn grid_rule_enforcement() {
    let criterion = Criterion::start("grid-rule-enforcement");
    let grid = default_grid();
    assert_eq!(grid.len(), 5);
    assert!(!grid.contains(&(PromptStyle::ExampleCentered, 0)));

    let doc = r#"
format_version = 1
plan_id = "bad"
dataset = "d.csv"
codebook = "c.toml"
gold_coder = "expert1"

[[variants]]
style = "example-centered"
shots = 0

[backend]
kind = "mock"
model_id = "m"
"#;
    let err = parse_plan(doc, Path::new(".")).unwrap_err();
    assert!(matches!(err, ExperimentError::VariantUnsupported { .. }));
    assert!(err.to_string().contains("at least one example"));
    criterion.pass();
}

#[test]
fn end_to_end_determinism() {
    let criterion = Criterion::start("end-to-end-determinism");
    let started = Instant::now();
    let plan = load_plan(&samples_dir().join("plans/complexity_mock.toml")).unwrap();

    let export_once = || {
        let dir = tempfile::tempdir().unwrap();
        let record = run_experiment(&plan, &dir.path().join("run.jsonl")).unwrap();
        let report = build_report(&record, &plan).unwrap();
        (
            export_report(&report, ReportFormat::Table).unwrap(),
            export_report(&report, ReportFormat::Csv).unwrap(),
            export_report(&report, ReportFormat::Record).unwrap(),
        )
    };
    let first = export_once();
    let second = export_once();
    assert_eq!(first, second, "exports must be byte-identical across runs");

    let csv = &first.1;
    let expert_rows: Vec<&str> =
        csv.lines().filter(|line| line.contains(",expert,")).collect();
    assert_eq!(expert_rows.len(), 1, "exactly one expert-vs-expert row");
    assert!(expert_rows[0].starts_with("expert1-vs-expert2"));

    // The why-rule mock against expert1 is engineered to produce the
    // [[20,5],[10,15]] table, so each variant row reports kappa 0.4000.
    let variant_rows: Vec<&str> = csv
        .lines()
        .skip(1)
        .filter(|line| !line.contains(",expert,"))
        .collect();
    assert_eq!(variant_rows.len(), 5);
    for row in variant_rows {
        assert!(row.contains(",0.4000,"), "row missing engineered kappa: {row}");
    }
    assert!(started.elapsed() < Duration::from_secs(10), "took {:?}", started.elapsed());
    criterion.pass();
}

#[test]
fn record_replay_round_trip() {
    let criterion = Criterion::start("record-replay-round-trip");
    let dir = tempfile::tempdir().unwrap();
    let cache_path = dir.path().join("responses.jsonl");
    let book = complexity_codebook();
    let items = load_dataset(&samples_dir().join("data/questions.csv")).unwrap();
    let spec = PromptSpec::new(PromptStyle::CodebookCentered, 1);

    let recording = Client::from_config(&BackendConfig::mock(
        "mock-rules",
        vec![MockRule::new("why", "HIGH")],
        "LOW",
    ))
    .unwrap()
    .recording_to(&cache_path)
    .unwrap();
    let live = code_batch(&items, &book, &spec, &recording);
    assert!(live.errors.is_empty());
    assert_eq!(recording.live_calls(), items.len() as u64);

    let replay = Client::from_config(&BackendConfig::replay("mock-rules", &cache_path)).unwrap();
    let replayed = code_batch(&items, &book, &spec, &replay);
    assert!(replayed.errors.is_empty());
    assert_eq!(replay.live_calls(), 0, "replay must issue zero live calls");
    assert_eq!(live.results, replayed.results, "replayed results must be identical");
    criterion.pass();
}

#[test]
fn normalization_robustness() {
    let criterion = Criterion::start("normalization-robustness");
    let labels = vec!["HIGH", "LOW", "MEDIAL_WH", "NO_INTERROGATIVE"];
    let mut rng = StdRng::seed_from_u64(0xf422);
    let mut fragments: Vec<String> = vec![
        "the code is".into(),
        "I think".into(),
        "maybe".into(),
        "definitely not".into(),
        "\n".into(),
        "  ".into(),
        "banana".into(),
        "étiquette".into(),
        "🤖".into(),
        "code:".into(),
    ];
    for label in &labels {
        fragments.push(label.to_string());
        fragments.push(label.to_lowercase());
        fragments.push(format!("\"{label}\""));
        fragments.push(format!(" {label}."));
        fragments.push(format!("{label}ish"));
    }

    for _ in 0..10_000 {
        let pieces = rng.random_range(0..6usize);
        let mut raw = String::new();
        for _ in 0..pieces {
            raw.push_str(&fragments[rng.random_range(0..fragments.len())]);
            if rng.random::<bool>() {
                raw.push(' ');
            }
        }
        let assigned = normalize_label(&raw, &labels);
        if let Assigned::Label(label) = &assigned {
            assert!(
                labels.contains(&label.as_str()),
                "out-of-set label {label:?} from raw {raw:?}"
            );
        }
        let again = normalize_label(assigned.as_str(), &labels);
        assert_eq!(again, assigned, "not idempotent on {raw:?}");
    }
    criterion.pass();
}
