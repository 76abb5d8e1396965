use std::fs;
use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use sant_core::dataset::{parse_jsonl, parse_jsonl_as, synth_gaussian, SynthConfig};
use sant_core::harness::{emit_report, read_summary_csv, run_experiment, run_many, write_table, SummaryRow, SUMMARY_COLUMNS};
use sant_core::{ExperimentConfig, LabeledDataset, Method, Oracle};
use sant_service::AppState;
use serde_json::Value;

use crate::args::{Budgets, Cli, Command, RunFlags, SynthKind};

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest {
            input,
            out,
            task,
            num_classes,
        } => {
            let file = fs::File::open(&input).with_context(|| format!("cannot open {}", input.display()))?;
            let ld = match task {
                Some(kind) => parse_jsonl_as(file, kind, num_classes)?,
                None => parse_jsonl(file, None)?,
            };
            ld.save_dir(&out)?;
            println!(
                "ingested {} items ({}, {} classes, {} features, {}) into {}",
                ld.dataset.len(),
                ld.dataset.task.task_kind,
                ld.dataset.task.num_classes,
                ld.dataset.task.feature_dim,
                if ld.oracle.is_some() { "labeled" } else { "unlabeled" },
                out.display()
            );
            Ok(())
        }
        Command::Simulate {
            dataset,
            method,
            budget,
            run,
            out,
        } => {
            let (data, oracle) = load_labeled(&dataset)?;
            let config = experiment_config(method, budget, &run)?;
            config.validate(data.len())?;
            let output = run_experiment(&config, data, &oracle)?;
            emit_report(Some(&output.report), &output.events, &out)?;
            let r = &output.report;
            println!(
                "{} budget {}/{}: human {} model {} reallocated {} quality_overall {} quality_model {} -> {}",
                config.method,
                r.budget_used,
                r.budget,
                r.counts.human,
                r.counts.model,
                r.counts.reallocated,
                fmt_quality(r.quality_overall),
                fmt_quality(r.quality_model_annotated),
                out.display()
            );
            Ok(())
        }
        Command::Sweep {
            dataset,
            methods,
            budgets,
            seeds,
            jobs,
            run,
            out,
        } => sweep(&dataset, methods, budgets, seeds, jobs, &run, &out),
        Command::Serve { port, host, data_dir } => {
            let addr: SocketAddr = format!("{host}:{port}")
                .parse()
                .with_context(|| format!("bad listen address {host}:{port}"))?;
            let state = match &data_dir {
                Some(dir) => AppState::open(dir)?,
                None => AppState::in_memory(),
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(async move {
                eprintln!("listening on http://{addr}");
                sant_service::serve(addr, state).await
            })
            .context("server stopped")?;
            Ok(())
        }
        Command::Report { dir } => {
            let path = dir.join("summary.csv");
            let rows = read_summary_csv(&path).with_context(|| format!("cannot read {}", path.display()))?;
            print!("{}", render_table(&rows));
            Ok(())
        }
        Command::Synth {
            kind: SynthKind::Gaussian,
            n,
            hard_frac,
            classes,
            dim,
            separation,
            seed,
            out,
        } => {
            let ld = synth_gaussian(&SynthConfig {
                n,
                num_classes: classes,
                feature_dim: dim,
                hard_frac,
                separation,
                seed,
            })?;
            if out.extension().is_some_and(|e| e == "jsonl") {
                let file = fs::File::create(&out).with_context(|| format!("cannot create {}", out.display()))?;
                ld.write_jsonl(std::io::BufWriter::new(file))?;
            } else {
                ld.save_dir(&out)?;
            }
            println!("wrote {n} items to {}", out.display());
            Ok(())
        }
    }
}

fn load_labeled(path: &Path) -> Result<(Arc<sant_core::Dataset>, Oracle)> {
    let LabeledDataset { dataset, oracle } =
        LabeledDataset::load(path).with_context(|| format!("cannot load dataset {}", path.display()))?;
    let Some(oracle) = oracle.filter(|o| o.covers(&dataset)) else {
        bail!("simulation needs a label on every item of {}", path.display());
    };
    Ok((Arc::new(dataset), oracle))
}

/// Config from the flags, then overridden field by field by `--config`.
pub fn experiment_config(method: Method, budget: f64, run: &RunFlags) -> Result<ExperimentConfig> {
    let from_flags = ExperimentConfig {
        method,
        budget_fraction: budget,
        budget_count: run.budget_count,
        warmup_count: run.warmup,
        batch_size: run.batch_size,
        seed: run.seed,
        post_hoc: run.post_hoc,
        sant_al: run.sant_al,
        temperature: run.temperature,
        retrain_epochs: run.retrain_epochs,
        checkpoint_every: run.checkpoint_every,
        ..ExperimentConfig::default()
    };
    let Some(path) = &run.config else {
        return Ok(from_flags);
    };
    let raw = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    let overrides: Value =
        serde_json::from_str(&raw).with_context(|| format!("{} is not valid JSON", path.display()))?;
    let mut merged = serde_json::to_value(&from_flags)?;
    merge(&mut merged, overrides, "").with_context(|| format!("in {}", path.display()))?;
    serde_json::from_value(merged).with_context(|| format!("invalid config in {}", path.display()))
}

fn merge(base: &mut Value, over: Value, at: &str) -> Result<()> {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (key, value) in o {
                let path = if at.is_empty() { key.clone() } else { format!("{at}.{key}") };
                match b.get_mut(&key) {
                    Some(slot) => merge(slot, value, &path)?,
                    None => bail!("unknown config field {path:?}"),
                }
            }
            Ok(())
        }
        (slot, value) => {
            *slot = value;
            Ok(())
        }
    }
}

fn sweep(
    dataset: &Path,
    methods: Vec<Method>,
    budgets: Budgets,
    seeds: u64,
    jobs: usize,
    run: &RunFlags,
    out: &Path,
) -> Result<()> {
    if run.budget_count.is_some() {
        bail!("--budget-count fixes the budget; a sweep varies it through --budgets");
    }
    if seeds == 0 || jobs == 0 {
        bail!("--seeds and --jobs must be positive");
    }
    let (data, oracle) = load_labeled(dataset)?;
    let methods = if methods.is_empty() { Method::ALL.to_vec() } else { methods };
    let mut configs = Vec::new();
    for &method in &methods {
        for &fraction in &budgets.0 {
            for s in 0..seeds {
                let base = experiment_config(method, fraction, run)?;
                let config = ExperimentConfig {
                    seed: base.seed + s,
                    ..base
                };
                config.validate(data.len())?;
                configs.push(config);
            }
        }
    }
    let rows = run_many(&configs, data, &oracle, jobs)?;
    fs::create_dir_all(out).with_context(|| format!("cannot create {}", out.display()))?;
    write_table(&rows, out.join("summary.csv"))?;
    print!("{}", render_means(&rows));
    println!("{} runs -> {}", rows.len(), out.join("summary.csv").display());
    Ok(())
}

fn fmt_quality(q: Option<f64>) -> String {
    q.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
}

/// Aligned text rendering of summary rows.
pub fn render_table(rows: &[SummaryRow]) -> String {
    let mut cells: Vec<Vec<String>> = vec![SUMMARY_COLUMNS.iter().map(|c| c.to_string()).collect()];
    for r in rows {
        cells.push(vec![
            r.method.to_string(),
            format!("{}", r.fraction),
            r.seed.to_string(),
            fmt_quality(r.quality_model),
            fmt_quality(r.quality_overall),
            r.human.to_string(),
            r.model.to_string(),
            r.reallocated.to_string(),
            r.reannotated.to_string(),
            r.budget.to_string(),
            r.budget_used.to_string(),
        ]);
    }
    align(&cells)
}

/// Mean quality per method and budget, averaged over seeds.
fn render_means(rows: &[SummaryRow]) -> String {
    let mut groups: Vec<(Method, f64, Vec<&SummaryRow>)> = Vec::new();
    for r in rows {
        match groups.iter_mut().find(|(m, f, _)| *m == r.method && *f == r.fraction) {
            Some(g) => g.2.push(r),
            None => groups.push((r.method, r.fraction, vec![r])),
        }
    }
    let mean = |v: Vec<Option<f64>>| -> Option<f64> {
        let v: Vec<f64> = v.into_iter().flatten().collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    };
    let mut cells = vec![vec![
        "method".to_string(),
        "fraction".into(),
        "runs".into(),
        "mean_quality_model".into(),
        "mean_quality_overall".into(),
    ]];
    for (method, fraction, g) in groups {
        cells.push(vec![
            method.to_string(),
            format!("{fraction}"),
            g.len().to_string(),
            fmt_quality(mean(g.iter().map(|r| r.quality_model).collect())),
            fmt_quality(mean(g.iter().map(|r| r.quality_overall).collect())),
        ]);
    }
    align(&cells)
}

fn align(cells: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..cells[0].len())
        .map(|i| cells.iter().map(|row| row[i].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in cells {
        let line: Vec<String> = row
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}
