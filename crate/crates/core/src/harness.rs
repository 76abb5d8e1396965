//! Simulated-human experiments: the oracle-driven run loop, budget sweeps and
//! report files.

use std::fs;
use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, Method};
use crate::dataset::{Dataset, Oracle};
use crate::engine::{Engine, Event, RoundLog, Step, Terminal};
use crate::error::{Error, Result};
use crate::ledger::BudgetLedger;
use crate::metrics::{count_correct, quality};
use crate::record::{AnnotationRecord, Assignee, RecordCounts};
use crate::scalar::Scalar;
use crate::task::{Label, TaskSpec};
use crate::trainer::LossReport;

/// Stands in for the human by revealing the hidden ground truth. Every reveal
/// is charged to the ledger.
#[derive(Debug, Clone, Copy)]
pub struct SimulatedHuman<'a> {
    oracle: &'a Oracle,
}

impl<'a> SimulatedHuman<'a> {
    pub fn new(oracle: &'a Oracle) -> Self {
        SimulatedHuman { oracle }
    }

    pub fn annotate(&self, item_id: &str, ledger: &mut BudgetLedger) -> Result<Label> {
        let label = self.oracle.reveal(item_id)?.clone();
        ledger.charge()?;
        Ok(label)
    }

    pub fn label(&self, item_id: &str) -> Result<Label> {
        self.oracle.reveal(item_id).cloned()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: ExperimentConfig,
    pub task: TaskSpec,
    pub dataset_size: usize,
    pub budget: usize,
    pub budget_used: usize,
    pub warmup: usize,
    pub counts: RecordCounts,
    /// Quality (accuracy, or HR@10 for multilabel tasks) of the active model
    /// records; absent without ground truth or without model records.
    pub quality_model_annotated: Option<f64>,
    /// Quality over all active records; absent without ground truth.
    pub quality_overall: Option<f64>,
    /// Model records whose label equals the ground truth.
    pub n_model_correct: Option<usize>,
    pub terminal: Option<Terminal>,
    pub rounds: Vec<RoundLog>,
    pub loss_trace: Vec<LossReport<f64>>,
    pub records: Vec<AnnotationRecord>,
}

impl RunReport {
    /// Snapshot of an engine, complete or not. Quality is computed when an
    /// oracle is given.
    pub fn from_engine<T: Scalar>(engine: &Engine<T>, oracle: Option<&Oracle>) -> Result<Self> {
        let records: Vec<AnnotationRecord> = engine.records().cloned().collect();
        let task = engine.dataset().task;
        let counts = RecordCounts::tally(&records);
        let (mut quality_overall, mut quality_model_annotated, mut n_model_correct) =
            (None, None, None);
        if let Some(oracle) = oracle {
            let model: Vec<&AnnotationRecord> =
                records.iter().filter(|r| r.assignee == Assignee::Model).collect();
            if !records.is_empty() {
                quality_overall = Some(quality(&records, oracle, &task)?);
            }
            if !model.is_empty() {
                quality_model_annotated = Some(quality(model.iter().copied(), oracle, &task)?);
            }
            n_model_correct = Some(count_correct(model.iter().copied(), oracle)?.0);
        }
        Ok(RunReport {
            config: engine.config().clone(),
            task,
            dataset_size: engine.dataset().len(),
            budget: engine.ledger().total(),
            budget_used: engine.ledger().used(),
            warmup: engine.warmup_count(),
            counts,
            quality_model_annotated,
            quality_overall,
            n_model_correct,
            terminal: engine.terminal(),
            rounds: engine.rounds().to_vec(),
            loss_trace: engine.loss_trace().to_vec(),
            records,
        })
    }
}

/// A finished simulated run: the report plus its full event log.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub events: Vec<Event>,
}

/// Drives an engine to completion, answering every human request from the oracle.
pub fn drive<T: Scalar>(engine: &mut Engine<T>, oracle: &Oracle) -> Result<()> {
    let human = SimulatedHuman::new(oracle);
    while let Step::NeedsLabel(id) = engine.advance()? {
        engine.submit(&id, human.label(&id)?)?;
    }
    Ok(())
}

pub fn run_experiment_with<T: Scalar>(
    config: &ExperimentConfig,
    dataset: Arc<Dataset>,
    oracle: &Oracle,
) -> Result<RunOutput> {
    let mut engine = Engine::<T>::new(config.clone(), dataset)?;
    drive(&mut engine, oracle)?;
    Ok(RunOutput {
        report: RunReport::from_engine(&engine, Some(oracle))?,
        events: engine.events().to_vec(),
    })
}

/// Simulated run in double precision.
pub fn run_experiment(config: &ExperimentConfig, dataset: Arc<Dataset>, oracle: &Oracle) -> Result<RunOutput> {
    run_experiment_with::<f64>(config, dataset, oracle)
}

/// One row of `summary.csv`; field order is the column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: Method,
    pub fraction: f64,
    pub seed: u64,
    pub quality_model: Option<f64>,
    pub quality_overall: Option<f64>,
    pub human: usize,
    pub model: usize,
    pub reallocated: usize,
    pub reannotated: usize,
    pub budget: usize,
    pub budget_used: usize,
}

pub const SUMMARY_COLUMNS: [&str; 11] = [
    "method",
    "fraction",
    "seed",
    "quality_model",
    "quality_overall",
    "human",
    "model",
    "reallocated",
    "reannotated",
    "budget",
    "budget_used",
];

impl SummaryRow {
    pub fn from_report(report: &RunReport) -> Self {
        SummaryRow {
            method: report.config.method,
            fraction: report.config.budget_fraction,
            seed: report.config.seed,
            quality_model: report.quality_model_annotated,
            quality_overall: report.quality_overall,
            human: report.counts.human,
            model: report.counts.model,
            reallocated: report.counts.reallocated,
            reannotated: report.counts.reannotated,
            budget: report.budget,
            budget_used: report.budget_used,
        }
    }
}

/// One run per fraction, in input order, all with the base seed. Runs are
/// spread over `jobs` threads; the output does not depend on `jobs`.
pub fn sweep_budgets(
    base: &ExperimentConfig,
    fractions: &[f64],
    dataset: Arc<Dataset>,
    oracle: &Oracle,
    jobs: usize,
) -> Result<Vec<SummaryRow>> {
    if fractions.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Config("budget fractions must be sorted".into()));
    }
    let configs: Vec<ExperimentConfig> = fractions
        .iter()
        .map(|&f| ExperimentConfig {
            budget_fraction: f,
            budget_count: None,
            ..base.clone()
        })
        .collect();
    for c in &configs {
        c.validate(dataset.len())?;
    }
    run_many(&configs, dataset, oracle, jobs)
}

/// Runs every config against the same dataset, preserving order.
pub fn run_many(
    configs: &[ExperimentConfig],
    dataset: Arc<Dataset>,
    oracle: &Oracle,
    jobs: usize,
) -> Result<Vec<SummaryRow>> {
    let run = |c: &ExperimentConfig| {
        run_experiment(c, dataset.clone(), oracle).map(|out| SummaryRow::from_report(&out.report))
    };
    if jobs <= 1 {
        return configs.iter().map(run).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {jobs} workers: {e}")))?;
    pool.install(|| configs.par_iter().map(run).collect())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], out: W) -> Result<()> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(out);
    w.write_record(SUMMARY_COLUMNS)?;
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

pub fn read_summary_csv(path: impl AsRef<Path>) -> Result<Vec<SummaryRow>> {
    let path = path.as_ref();
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

pub fn write_events_jsonl<W: Write>(events: &[Event], mut out: W) -> Result<()> {
    for e in events {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").map_err(|e| Error::io("<events>", e))?;
    }
    Ok(())
}

pub fn read_events_jsonl(path: impl AsRef<Path>) -> Result<Vec<Event>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

/// Writes `report.json`, `summary.csv` and `events.jsonl` into `dir`.
/// `report` may be absent for an empty run, which leaves header-only files.
pub fn emit_report(report: Option<&RunReport>, events: &[Event], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report_path = dir.join("report.json");
    let json = match report {
        Some(r) => serde_json::to_vec_pretty(r)?,
        None => b"{}".to_vec(),
    };
    fs::write(&report_path, json).map_err(|e| Error::io(&report_path, e))?;
    let rows: Vec<SummaryRow> = report.map(SummaryRow::from_report).into_iter().collect();
    write_table(&rows, dir.join("summary.csv"))?;
    let events_path = dir.join("events.jsonl");
    let file = fs::File::create(&events_path).map_err(|e| Error::io(&events_path, e))?;
    let mut w = std::io::BufWriter::new(file);
    write_events_jsonl(events, &mut w)?;
    w.flush().map_err(|e| Error::io(&events_path, e))?;
    Ok(())
}

pub fn write_table(rows: &[SummaryRow], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_summary_csv(rows, file)
}

pub fn read_report(path: impl AsRef<Path>) -> Result<RunReport> {
    let path = path.as_ref();
    let raw = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&raw)?)
}

/// Rebuilds the final record set of a run from its event log alone.
pub fn replay_records(
    config: &ExperimentConfig,
    dataset: Arc<Dataset>,
    events: &[Event],
) -> Result<Vec<AnnotationRecord>> {
    let labels = Engine::<f64>::human_labels_from_events(events);
    let engine = Engine::<f64>::replay(config.clone(), dataset, labels)?;
    Ok(engine.records().cloned().collect())
}
