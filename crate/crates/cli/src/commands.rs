//! Subcommand implementations.

use std::io::Write;
use std::path::Path;

use deduct_core::agreement::{
    cohen_kappa, confusion_matrix, interpret, AgreementReport, LabelSequence,
};
use deduct_core::codebook::{check_gold_labels, load_dataset, write_dataset};
use deduct_core::experiment::{
    build_report, collect_record, export_report, load_plan, run_experiment, ReportFormat,
};
use deduct_core::labeling::{code_item, translate_item, CodingResult};
use deduct_core::llm::Client;
use deduct_core::{parse_codebook, validate_for_spec, Codebook};

use crate::{
    runtime, usage, AgreeArgs, CliFailure, CodeArgs, ExperimentArgs, RenderArgs, ReportArgs,
    TranslateArgs, ValidateArgs,
};

fn read_codebook(path: &Path) -> Result<Codebook, CliFailure> {
    let source = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read codebook {}: {e}", path.display())))?;
    Ok(parse_codebook(&source)?)
}

fn write_or_print(out: &Option<std::path::PathBuf>, contents: &str) -> Result<(), CliFailure> {
    match out {
        Some(path) => std::fs::write(path, contents)
            .map_err(|e| runtime(format!("cannot write {}: {e}", path.display()))),
        None => {
            print!("{contents}");
            std::io::stdout().flush().map_err(runtime)
        }
    }
}

pub fn validate(args: ValidateArgs) -> Result<(), CliFailure> {
    let codebook = read_codebook(&args.codebook)?;
    let mut violations = Vec::new();
    if args.style.is_some() || args.shots.is_some() || args.instruction.is_some() {
        let style = args.style.unwrap_or(crate::StyleChoice::Codebook);
        let mut spec = deduct_core::PromptSpec::new(style.into(), args.shots.unwrap_or(0));
        if let Some(template) = &args.instruction {
            spec.instruction_template = template.clone();
        }
        violations = validate_for_spec(&codebook, &spec);
    }
    if violations.is_empty() {
        println!(
            "OK: codebook {:?} with {} codes ({})",
            codebook.dimension_name,
            codebook.codes.len(),
            codebook.labels().join(", ")
        );
        Ok(())
    } else {
        for violation in &violations {
            println!("violation: {violation}");
        }
        Err(usage(format!("{} violation(s) found", violations.len())))
    }
}

pub fn render(args: RenderArgs) -> Result<(), CliFailure> {
    let codebook = read_codebook(&args.codebook)?;
    let spec = args.spec.to_spec();
    let item = deduct_core::codebook::DataItem::new("cli-render", args.text);
    let prompt = deduct_core::build_prompt(&codebook, &spec, &item)?;
    print!("{}", prompt.full_text);
    std::io::stdout().flush().map_err(runtime)?;
    Ok(())
}

pub fn code(args: CodeArgs) -> Result<(), CliFailure> {
    let codebook = read_codebook(&args.codebook)?;
    let items = load_dataset(&args.dataset)?;
    check_gold_labels(&items, &codebook)?;
    let spec = args.spec.to_spec();
    let violations = validate_for_spec(&codebook, &spec);
    if !violations.is_empty() {
        for violation in &violations {
            eprintln!("violation: {violation}");
        }
        return Err(usage("codebook does not support this prompt spec"));
    }
    let client = Client::from_config(&args.backend.to_config()?)?;

    let mut results: Vec<CodingResult> = Vec::with_capacity(items.len());
    let mut failures = 0usize;
    if args.retry_unparseable == 0 {
        let outcome = deduct_core::code_batch(&items, &codebook, &spec, &client);
        for error in &outcome.errors {
            failures += 1;
            eprintln!("item {}: {}", error.item_id, error.message);
        }
        results = outcome.results;
    } else {
        for item in &items {
            let mut attempt = 0;
            let outcome = loop {
                let outcome = code_item(item, &codebook, &spec, &client);
                match &outcome {
                    Ok(result)
                        if result.assigned.is_unparseable()
                            && attempt < args.retry_unparseable =>
                    {
                        attempt += 1;
                        continue;
                    }
                    _ => break outcome,
                }
            };
            match outcome {
                Ok(result) => results.push(result),
                Err(e) => {
                    failures += 1;
                    eprintln!("item {}: {e}", item.id);
                }
            }
        }
    }

    let mut lines = String::new();
    for result in &results {
        lines.push_str(&serde_json::to_string(result).expect("result serializes"));
        lines.push('\n');
    }
    write_or_print(&args.out, &lines)?;
    eprintln!(
        "coded {} of {} items ({} live backend calls)",
        results.len(),
        items.len(),
        client.live_calls()
    );
    if failures > 0 {
        return Err(runtime(format!("{failures} item(s) failed")));
    }
    Ok(())
}

pub fn translate(args: TranslateArgs) -> Result<(), CliFailure> {
    let items = load_dataset(&args.dataset)?;
    let client = Client::from_config(&args.backend.to_config()?)?;
    let mut translated = Vec::with_capacity(items.len());
    for item in &items {
        translated.push(translate_item(item, &args.source, &args.target, &client)?);
    }
    write_dataset(&args.out, &translated)?;
    eprintln!(
        "translated {} items ({} -> {}) into {}",
        translated.len(),
        args.source,
        args.target,
        args.out.display()
    );
    Ok(())
}

/// Serializable wrapper for single-pair agreement output.
#[derive(serde::Serialize)]
struct PairReport<'a> {
    coder_a: &'a str,
    coder_b: &'a str,
    #[serde(flatten)]
    report: &'a AgreementReport,
}

fn render_pair(
    coder_a: &str,
    coder_b: &str,
    report: &AgreementReport,
    format: ReportFormat,
) -> String {
    match format {
        ReportFormat::Csv => {
            let mut out = String::from("coder_a,coder_b,n,dropped,kappa,p_o,p_e,scale,band\n");
            out.push_str(&format!(
                "{},{},{},{},{:.4},{:.4},{:.4},{},{}\n",
                coder_a,
                coder_b,
                report.n,
                report.dropped,
                report.kappa,
                report.observed_agreement,
                report.expected_agreement,
                report.scale.map(|s| s.name()).unwrap_or(""),
                report.band.as_deref().unwrap_or("")
            ));
            out
        }
        ReportFormat::Record => {
            let mut out = serde_json::to_string_pretty(&PairReport { coder_a, coder_b, report })
                .expect("report serializes");
            out.push('\n');
            out
        }
        ReportFormat::Table => {
            let mut out = String::new();
            out.push_str(&format!("coders:  {coder_a} vs {coder_b}\n"));
            out.push_str(&format!("n:       {} (dropped {})\n", report.n, report.dropped));
            out.push_str(&format!(
                "kappa:   {:.4} ({} on the {} scale)\n",
                report.kappa,
                report.band.as_deref().unwrap_or("?"),
                report.scale.map(|s| s.name()).unwrap_or("?")
            ));
            out.push_str(&format!("p_o:     {:.4}\n", report.observed_agreement));
            out.push_str(&format!("p_e:     {:.4}\n", report.expected_agreement));
            out.push_str(&format!("labels:  {}\n", report.label_space.join(", ")));
            out.push_str("matrix (rows = first coder):\n");
            for (label, row) in report.label_space.iter().zip(&report.matrix) {
                let cells: Vec<String> = row.iter().map(|c| format!("{c:>6}")).collect();
                out.push_str(&format!("  {label:<16}{}\n", cells.join(" ")));
            }
            out
        }
    }
}

pub fn agree(args: AgreeArgs) -> Result<(), CliFailure> {
    let items = load_dataset(&args.dataset)?;
    let scale = args.scale.into();

    let (name_a, name_b, mut report) = if let Some(records_path) = &args.records {
        // Records mode: recorded model labels vs a gold coder.
        let gold = args.gold.clone().ok_or_else(|| usage("records mode requires --gold"))?;
        let codebook_path = args
            .codebook
            .clone()
            .ok_or_else(|| usage("records mode requires --codebook to fix the label space"))?;
        let codebook = read_codebook(&codebook_path)?;
        check_gold_labels(&items, &codebook)?;
        let results = read_results(records_path, args.spec_id.as_deref())?;
        let aligned = deduct_core::agreement::align_and_filter(
            &results,
            &items,
            &gold,
            args.policy.into(),
            &codebook.labels(),
        )?;
        let mut report = cohen_kappa(&confusion_matrix(&aligned.model, &aligned.gold)?);
        report.dropped = aligned.dropped;
        (aligned.model.coder_name.clone(), gold, report)
    } else {
        // Dataset mode: two gold columns against each other.
        let coder_a = args.coder_a.clone().ok_or_else(|| {
            usage("dataset mode requires --coder-a and --coder-b (or use --records)")
        })?;
        let coder_b = args
            .coder_b
            .clone()
            .ok_or_else(|| usage("dataset mode requires --coder-b"))?;
        let label_space: Vec<String> = match &args.codebook {
            Some(path) => {
                let codebook = read_codebook(path)?;
                check_gold_labels(&items, &codebook)?;
                codebook.labels()
            }
            None => {
                // Without a codebook the space is the sorted set of observed labels.
                let mut labels: Vec<String> = items
                    .iter()
                    .flat_map(|i| i.gold_labels.values().cloned())
                    .collect();
                labels.sort();
                labels.dedup();
                labels
            }
        };
        let mut a_labels = Vec::new();
        let mut b_labels = Vec::new();
        for item in &items {
            match (item.gold_labels.get(&coder_a), item.gold_labels.get(&coder_b)) {
                (Some(la), Some(lb)) => {
                    a_labels.push(la.clone());
                    b_labels.push(lb.clone());
                }
                (None, _) => {
                    return Err(usage(format!(
                        "item {:?} has no gold label from coder {coder_a:?}",
                        item.id
                    )))
                }
                (_, None) => {
                    return Err(usage(format!(
                        "item {:?} has no gold label from coder {coder_b:?}",
                        item.id
                    )))
                }
            }
        }
        let seq_a = LabelSequence::new(coder_a.clone(), a_labels, label_space.clone());
        let seq_b = LabelSequence::new(coder_b.clone(), b_labels, label_space);
        let report = cohen_kappa(&confusion_matrix(&seq_a, &seq_b)?);
        (coder_a, coder_b, report)
    };

    interpret(&mut report, scale)?;
    let rendered = render_pair(&name_a, &name_b, &report, args.format.into());
    write_or_print(&args.out, &rendered)
}

/// Reads coding results from a batch-output or run-record file, skipping
/// non-result lines and optionally filtering by variant id.
fn read_results(path: &Path, spec_id: Option<&str>) -> Result<Vec<CodingResult>, CliFailure> {
    let contents = std::fs::read_to_string(path)
        .map_err(|e| usage(format!("cannot read records {}: {e}", path.display())))?;
    let mut results = Vec::new();
    let mut spec_ids = std::collections::BTreeSet::new();
    for (idx, line) in contents.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line)
            .map_err(|e| usage(format!("{} line {}: {e}", path.display(), idx + 1)))?;
        match value.get("record_type").and_then(|v| v.as_str()) {
            None | Some("result") => {
                let result: CodingResult = serde_json::from_value(value)
                    .map_err(|e| usage(format!("{} line {}: {e}", path.display(), idx + 1)))?;
                spec_ids.insert(result.spec_id.clone());
                if spec_id.is_none_or(|want| want == result.spec_id) {
                    results.push(result);
                }
            }
            Some(_) => continue,
        }
    }
    if results.is_empty() {
        return Err(usage(format!("no matching results in {}", path.display())));
    }
    if spec_id.is_none() && spec_ids.len() > 1 {
        return Err(usage(format!(
            "records contain {} variants ({}); pick one with --spec-id",
            spec_ids.len(),
            spec_ids.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(results)
}

pub fn experiment(args: ExperimentArgs) -> Result<(), CliFailure> {
    let mut plan = load_plan(&args.plan)?;
    if let Some(p) = args.max_parallel {
        plan.backend.max_parallel = p;
    }
    if let Some(cache) = &args.cache {
        if plan.backend.kind == deduct_core::llm::BackendKind::Replay {
            plan.backend.cache_path = Some(cache.clone());
        } else {
            plan.backend.record_to = Some(cache.clone());
        }
    }
    std::fs::create_dir_all(&args.out_dir)
        .map_err(|e| usage(format!("cannot create {}: {e}", args.out_dir.display())))?;
    let records = args
        .records
        .unwrap_or_else(|| args.out_dir.join(format!("{}.records.jsonl", plan.plan_id)));

    let record = run_experiment(&plan, &records)?;
    let coded: usize = record.per_variant.iter().map(|v| v.results.len()).sum();
    let failed: usize = record.per_variant.iter().map(|v| v.errors.len()).sum();
    println!(
        "coded {coded} (variant, item) pairs: {} live calls, {} served from the run record",
        record.live_calls, record.cached_hits
    );
    if failed > 0 {
        for variant in &record.per_variant {
            if !variant.errors.is_empty() {
                eprintln!("variant {}: {} failed item(s)", variant.variant_id, variant.errors.len());
                for error in &variant.errors {
                    eprintln!("  {}: {}", error.item_id, error.message);
                }
            }
        }
        return Err(runtime(format!(
            "{failed} item(s) failed; re-run to retry them from the record at {}",
            records.display()
        )));
    }

    let report = build_report(&record, &plan)?;
    let csv_path = args.out_dir.join(format!("{}.report.csv", plan.plan_id));
    let json_path = args.out_dir.join(format!("{}.report.json", plan.plan_id));
    std::fs::write(&csv_path, export_report(&report, ReportFormat::Csv)?)
        .map_err(|e| runtime(format!("cannot write {}: {e}", csv_path.display())))?;
    std::fs::write(&json_path, export_report(&report, ReportFormat::Record)?)
        .map_err(|e| runtime(format!("cannot write {}: {e}", json_path.display())))?;

    print!("{}", export_report(&report, ReportFormat::Table)?);
    println!(
        "reports written to {} and {}",
        csv_path.display(),
        json_path.display()
    );
    Ok(())
}

pub fn report(args: ReportArgs) -> Result<(), CliFailure> {
    let plan = load_plan(&args.plan)?;
    let record = collect_record(&plan, &args.records)?;
    let report = build_report(&record, &plan)?;
    let rendered = export_report(&report, args.format.into())?;
    write_or_print(&args.out, &rendered)
}
