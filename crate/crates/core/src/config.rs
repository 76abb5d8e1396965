//! Experiment configuration shared by the harness, the service and the CLI.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::al::AlScorerKind;
use crate::eat::EatConfig;
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::trainer::TrainerConfig;
use crate::triage::{BiWeightConfig, DecisionRule};

pub const DEFAULT_WARMUP: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Random,
    Maxent,
    MaxentCal,
    EntGn,
    ExpGn,
    Sant,
    SantNoAl,
    SantNoEat,
}

impl Method {
    pub const ALL: [Method; 8] = [
        Method::Random,
        Method::Maxent,
        Method::MaxentCal,
        Method::EntGn,
        Method::ExpGn,
        Method::Sant,
        Method::SantNoAl,
        Method::SantNoEat,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Random => "random",
            Method::Maxent => "maxent",
            Method::MaxentCal => "maxent-cal",
            Method::EntGn => "ent-gn",
            Method::ExpGn => "exp-gn",
            Method::Sant => "sant",
            Method::SantNoAl => "sant-no-al",
            Method::SantNoEat => "sant-no-eat",
        }
    }

    /// Whether the pipeline trains and queries the triage network.
    pub fn uses_eat(self) -> bool {
        matches!(self, Method::Sant | Method::SantNoAl)
    }

    pub fn rule(self) -> DecisionRule {
        match self {
            Method::Random => DecisionRule::Proportional,
            Method::Maxent | Method::MaxentCal => DecisionRule::UncertaintyDynamic,
            Method::EntGn | Method::ExpGn | Method::SantNoEat => DecisionRule::HalfBatch,
            Method::Sant | Method::SantNoAl => DecisionRule::Threshold,
        }
    }

    /// The AL scorer of the pipeline; `sant_al` is the one combined with EAT.
    pub fn al_kind(self, sant_al: AlScorerKind) -> Option<AlScorerKind> {
        match self {
            Method::Random => Some(AlScorerKind::Random),
            Method::Maxent => Some(AlScorerKind::MaxEntropy),
            Method::MaxentCal => Some(AlScorerKind::CalibratedMaxEntropy),
            Method::EntGn => Some(AlScorerKind::EntGradNorm),
            Method::ExpGn | Method::SantNoEat => Some(AlScorerKind::ExpGradNorm),
            Method::Sant => Some(sant_al),
            Method::SantNoAl => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum PostHoc {
    #[default]
    #[serde(rename = "none")]
    None,
    #[serde(rename = "reannotate")]
    Reannotate,
    #[serde(rename = "retrain+reannotate")]
    RetrainReannotate,
}

impl PostHoc {
    pub fn as_str(self) -> &'static str {
        match self {
            PostHoc::None => "none",
            PostHoc::Reannotate => "reannotate",
            PostHoc::RetrainReannotate => "retrain+reannotate",
        }
    }
}

impl fmt::Display for PostHoc {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PostHoc {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [PostHoc::None, PostHoc::Reannotate, PostHoc::RetrainReannotate]
            .into_iter()
            .find(|p| p.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown post-hoc mode {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub method: Method,
    /// Human budget as a fraction of the dataset size, in `(0, 1]`.
    pub budget_fraction: f64,
    /// Absolute budget; overrides `budget_fraction` when set.
    pub budget_count: Option<usize>,
    /// Warmup size; unset means `min(32, budget)`.
    pub warmup_count: Option<usize>,
    pub batch_size: usize,
    pub seed: u64,
    pub post_hoc: PostHoc,
    /// AL scorer combined with EAT by `sant`.
    pub sant_al: AlScorerKind,
    /// Temperature of `maxent-cal`.
    pub temperature: f64,
    /// Annotator-only epochs run by `retrain+reannotate`.
    pub retrain_epochs: usize,
    pub checkpoint_every: usize,
    pub model: ModelConfig,
    pub eat: EatConfig,
    pub trainer: TrainerConfig,
    pub bi_weight: BiWeightConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            method: Method::Sant,
            budget_fraction: 0.5,
            budget_count: None,
            warmup_count: None,
            batch_size: 32,
            seed: 0,
            post_hoc: PostHoc::None,
            sant_al: AlScorerKind::MaxEntropy,
            temperature: 1.5,
            retrain_epochs: 20,
            checkpoint_every: 100,
            model: ModelConfig::default(),
            eat: EatConfig::default(),
            trainer: TrainerConfig::default(),
            bi_weight: BiWeightConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn new(method: Method, budget_fraction: f64, seed: u64) -> Self {
        ExperimentConfig {
            method,
            budget_fraction,
            seed,
            ..Self::default()
        }
    }

    /// Human budget for a dataset of `n` items.
    pub fn budget(&self, n: usize) -> usize {
        match self.budget_count {
            Some(b) => b,
            None => (self.budget_fraction * n as f64 + 1e-9).floor() as usize,
        }
    }

    pub fn warmup(&self, n: usize) -> usize {
        self.warmup_count
            .unwrap_or_else(|| DEFAULT_WARMUP.min(self.budget(n)))
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        if !(self.budget_fraction > 0.0 && self.budget_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "budget fraction must lie in (0, 1], got {}",
                self.budget_fraction
            )));
        }
        let budget = self.budget(n);
        if budget > n {
            return Err(Error::Config(format!(
                "budget of {budget} exceeds the {n} items"
            )));
        }
        let warmup = self.warmup(n);
        if warmup > budget {
            return Err(Error::Config(format!(
                "warmup of {warmup} items exceeds the budget of {budget}"
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::NonPositiveTemperature(self.temperature));
        }
        if self.checkpoint_every == 0 {
            return Err(Error::Config("checkpoint interval must be positive".into()));
        }
        if !(self.model.learning_rate >= 0.0) || !(self.eat.learning_rate >= 0.0) {
            return Err(Error::Config("learning rates must be non-negative".into()));
        }
        if let crate::model::Arch::Mlp { hidden: 0 } = self.model.arch {
            return Err(Error::Config("hidden width must be positive".into()));
        }
        if !self.bi_weight.t0.is_finite() {
            return Err(Error::Config("T0 must be finite".into()));
        }
        if self.sant_al == AlScorerKind::Random && self.method == Method::Sant {
            return Err(Error::Config("sant needs an informative AL scorer".into()));
        }
        self.eat.validate()
    }
}
