use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use sant_core::al::AlScorerKind;
use sant_core::config::PostHoc;
use sant_core::{Method, TaskKind};

#[derive(Debug, Parser)]
#[command(name = "sant", version, about = "Budget-constrained selective annotation", arg_required_else_help = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Validate a JSONL file and store it as a dataset directory.
    Ingest {
        #[arg(long = "in", value_name = "FILE")]
        input: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
        /// Task kind; inferred from the labels when omitted.
        #[arg(long, value_parser = parse_task_kind)]
        task: Option<TaskKind>,
        #[arg(long, default_value_t = 2, requires = "task")]
        num_classes: usize,
    },
    /// Run one simulated experiment and write report.json, summary.csv and events.jsonl.
    Simulate {
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        #[arg(long, default_value = "sant", value_parser = parse_method)]
        method: Method,
        /// Budget as a fraction of the dataset size, in (0, 1].
        #[arg(long, default_value_t = 0.5, value_parser = parse_fraction)]
        budget: f64,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run every method x budget x seed combination and write summary.csv.
    Sweep {
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        /// Comma-separated methods; all of them when omitted.
        #[arg(long, value_delimiter = ',', value_parser = parse_method)]
        methods: Vec<Method>,
        /// `START..END:STEP` or a comma-separated list of fractions.
        #[arg(long, default_value = "0.1..0.9:0.1", value_parser = parse_budgets)]
        budgets: Budgets,
        /// Number of consecutive seeds starting at `--seed`.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[command(flatten)]
        run: RunFlags,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Serve the HTTP session API.
    Serve {
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        /// Directory for datasets and session logs; in memory when omitted.
        #[arg(long, value_name = "DIR")]
        data_dir: Option<PathBuf>,
    },
    /// Print the summary table of a simulate or sweep output directory.
    Report {
        #[arg(long, value_name = "DIR")]
        dir: PathBuf,
    },
    /// Generate a synthetic labeled dataset.
    Synth {
        #[arg(long, value_enum, default_value_t = SynthKind::Gaussian)]
        kind: SynthKind,
        #[arg(long, default_value_t = 2000)]
        n: usize,
        #[arg(long, default_value_t = 0.2)]
        hard_frac: f64,
        #[arg(long, default_value_t = 2)]
        classes: usize,
        #[arg(long, default_value_t = 8)]
        dim: usize,
        #[arg(long, default_value_t = 2.5)]
        separation: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Dataset directory, or a single file when the path ends in `.jsonl`.
        #[arg(long, value_name = "PATH")]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SynthKind {
    Gaussian,
}

/// Flags shared by `simulate` and `sweep`; each maps to an experiment config field.
#[derive(Debug, Clone, Args)]
pub struct RunFlags {
    /// Absolute budget; overrides `--budget`.
    #[arg(long)]
    pub budget_count: Option<usize>,
    #[arg(long)]
    pub warmup: Option<usize>,
    #[arg(long, default_value_t = 32)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "none", value_parser = parse_post_hoc)]
    pub post_hoc: PostHoc,
    #[arg(long, default_value = "maxent", value_parser = parse_al)]
    pub sant_al: AlScorerKind,
    #[arg(long, default_value_t = 1.5)]
    pub temperature: f64,
    #[arg(long, default_value_t = 20)]
    pub retrain_epochs: usize,
    #[arg(long, default_value_t = 100)]
    pub checkpoint_every: usize,
    /// JSON config file; its fields override the flags above.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Budgets(pub Vec<f64>);

fn parse_method(s: &str) -> Result<Method, String> {
    s.parse().map_err(|e: sant_core::Error| e.to_string())
}

fn parse_post_hoc(s: &str) -> Result<PostHoc, String> {
    s.parse().map_err(|e: sant_core::Error| e.to_string())
}

fn parse_al(s: &str) -> Result<AlScorerKind, String> {
    s.parse().map_err(|e: sant_core::Error| e.to_string())
}

fn parse_task_kind(s: &str) -> Result<TaskKind, String> {
    match s {
        "binary" => Ok(TaskKind::Binary),
        "multiclass" => Ok(TaskKind::Multiclass),
        "multilabel" => Ok(TaskKind::Multilabel),
        _ => Err(format!("unknown task kind {s:?} (binary, multiclass, multilabel)")),
    }
}

pub fn parse_fraction(s: &str) -> Result<f64, String> {
    let v: f64 = s.trim().parse().map_err(|_| format!("not a number: {s:?}"))?;
    if v > 0.0 && v <= 1.0 {
        Ok(v)
    } else {
        Err(format!("budget fraction must lie in (0, 1], got {v}"))
    }
}

/// Parses `START..END:STEP` (both ends inclusive) or `a,b,c`.
pub fn parse_budgets(s: &str) -> Result<Budgets, String> {
    let values = if let Some((range, step)) = s.split_once(':') {
        let (start, end) = range
            .split_once("..")
            .ok_or_else(|| format!("expected START..END:STEP, got {s:?}"))?;
        let (start, end) = (parse_fraction(start)?, parse_fraction(end)?);
        let step: f64 = step.trim().parse().map_err(|_| format!("bad step in {s:?}"))?;
        if step.is_nan() || step <= 0.0 || end < start {
            return Err(format!("empty budget range {s:?}"));
        }
        let count = ((end - start) / step + 1e-9).floor() as usize + 1;
        // Rounded so that 0.1 + 2 x 0.1 prints and compares as 0.3.
        (0..count)
            .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
            .collect()
    } else {
        s.split(',').map(parse_fraction).collect::<Result<Vec<_>, _>>()?
    };
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(format!("budgets must be strictly increasing: {s:?}"));
    }
    Ok(Budgets(values))
}
