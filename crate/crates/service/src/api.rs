//! Request and response bodies of the HTTP API.

use sant_core::engine::{LabelPhase, Terminal};
use sant_core::triage::TriageScore;
use sant_core::trainer::LossReport;
use sant_core::{ExperimentConfig, RecordCounts, RunStatus, TaskKind, TaskSpec};
use serde::{Deserialize, Serialize};

use crate::Mode;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BudgetGauge {
    pub used: usize,
    pub total: usize,
    pub remaining: usize,
}

/// Query of `POST /datasets`. Without `task` the task is inferred from the
/// labels, which then must be present.
#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct DatasetQuery {
    pub task: Option<TaskKind>,
    pub num_classes: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub dataset_id: String,
    pub size: usize,
    pub task: TaskSpec,
    /// Every item carries a ground-truth label, so evaluation mode is available.
    pub labeled: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateSession {
    pub dataset_id: String,
    #[serde(default)]
    pub config: Option<ExperimentConfig>,
    /// Defaults to evaluation when the dataset is fully labeled.
    #[serde(default)]
    pub mode: Option<Mode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreatedSession {
    pub session_id: String,
    pub status: RunStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub session_id: String,
    pub dataset_id: String,
    pub mode: Mode,
    pub status: RunStatus,
    pub status_history: Vec<RunStatus>,
    pub budget: BudgetGauge,
    pub counts: RecordCounts,
    pub processed: usize,
    pub dataset_size: usize,
    pub pending_item_id: Option<String>,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassProbability {
    pub class: usize,
    pub probability: f64,
}

/// The item awaiting a human label, with the model's current view of it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuggestionPayload {
    pub item_id: String,
    pub text: Option<String>,
    pub features: Vec<f64>,
    pub position: usize,
    pub phase: LabelPhase,
    /// Most probable classes first, at most five.
    pub suggestion: Vec<ClassProbability>,
    pub multilabel: bool,
    /// Triage scores at decision time; absent for warmup items.
    pub scores: Option<TriageScore<f64>>,
    pub budget: BudgetGauge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NextItem {
    pub status: RunStatus,
    /// `null` when nothing awaits a human label.
    pub item: Option<SuggestionPayload>,
    pub budget: BudgetGauge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelAck {
    pub accepted: bool,
    pub item_id: String,
    pub budget: BudgetGauge,
    pub status: RunStatus,
    pub next_item_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub status: RunStatus,
    pub mode: Mode,
    pub processed: usize,
    pub counts: RecordCounts,
    pub budget: BudgetGauge,
    /// Present in evaluation mode only.
    pub quality_overall: Option<f64>,
    pub quality_model_annotated: Option<f64>,
    pub n_model_correct: Option<usize>,
    pub terminal: Option<Terminal>,
    pub loss_trace: Vec<LossReport<f64>>,
}

#[derive(Debug, Clone, Copy, Default, Deserialize)]
pub struct EventsQuery {
    pub from: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
    /// Item the session is waiting on, for wrong-item conflicts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected: Option<String>,
}
