//! Budget-constrained selective annotation.
//!
//! Each incoming item is triaged to a human annotator or to an online-trained
//! model annotator. Routing combines an active-learning score with an
//! error-aware triage (EAT) network that estimates the model's probability of
//! mislabeling the item; both are trained by coordinate descent on the human
//! labels collected so far.
//!
//! The numeric core is generic over [`Scalar`] (`f32` or `f64`); the aliases
//! below fix the precision used by the harness and the service.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod al;
pub mod checkpoint;
pub mod config;
pub mod dataset;
pub mod eat;
pub mod engine;
pub mod error;
pub mod harness;
pub mod ledger;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod record;
pub mod scalar;
pub mod task;
pub mod trainer;
pub mod triage;

pub use config::{ExperimentConfig, Method, PostHoc};
pub use dataset::{Dataset, LabeledDataset, Oracle};
pub use engine::{Engine, Event, RunStatus, Step};
pub use error::{Error, Result};
pub use harness::{run_experiment, RunReport};
pub use ledger::BudgetLedger;
pub use record::{AnnotationRecord, Assignee, RecordCounts};
pub use scalar::Scalar;
pub use task::{Item, Label, TaskKind, TaskSpec};

pub type AnnotatorModelF64 = model::AnnotatorModel<f64>;
pub type AnnotatorModelF32 = model::AnnotatorModel<f32>;
pub type EatNetworkF64 = eat::EatNetwork<f64>;
pub type EatNetworkF32 = eat::EatNetwork<f32>;
pub type TrainStateF64 = trainer::TrainState<f64>;
pub type TrainStateF32 = trainer::TrainState<f32>;
pub type EngineF64 = engine::Engine<f64>;
pub type EngineF32 = engine::Engine<f32>;
pub type LossReportF64 = trainer::LossReport<f64>;
