//! Active-learning informativeness scores `d^AL`.
//!
//! The gradient-norm scorers use a closed form for the expected squared norm
//! of the loss gradient with respect to the output-layer weights:
//! `sum_y w_y * |p - e_y|^2 * |phi(x)|^2`, where `phi(x)` is the input of the
//! output layer. `ent` weights pseudo-labels by the model's own prediction,
//! `exp` by the empirical class frequencies of past human labels.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{entropy, max_entropy, AnnotatorModel};
use crate::scalar::{dot, Scalar};
use crate::task::{Label, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AlScore<T> {
    pub value: T,
    /// `true` means `value` lies in `[0, 1]`.
    pub normalized: bool,
}

impl<T: Scalar> AlScore<T> {
    pub fn normalized(value: T) -> Self {
        AlScore {
            value,
            normalized: true,
        }
    }

    pub fn raw(value: T) -> Self {
        AlScore {
            value,
            normalized: false,
        }
    }

    pub fn to_f64(self) -> AlScore<f64> {
        AlScore {
            value: self.value.to_f64_lossy(),
            normalized: self.normalized,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AlScorerKind {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "maxent")]
    MaxEntropy,
    #[serde(rename = "maxent-cal")]
    CalibratedMaxEntropy,
    #[serde(rename = "ent-gn")]
    EntGradNorm,
    #[serde(rename = "exp-gn")]
    ExpGradNorm,
}

impl AlScorerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            AlScorerKind::Random => "random",
            AlScorerKind::MaxEntropy => "maxent",
            AlScorerKind::CalibratedMaxEntropy => "maxent-cal",
            AlScorerKind::EntGradNorm => "ent-gn",
            AlScorerKind::ExpGradNorm => "exp-gn",
        }
    }

    /// Whether scores of this kind come out in `[0, 1]` without batch context.
    pub fn is_normalized(self) -> bool {
        !matches!(self, AlScorerKind::EntGradNorm | AlScorerKind::ExpGradNorm)
    }
}

impl fmt::Display for AlScorerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AlScorerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "random" => AlScorerKind::Random,
            "maxent" => AlScorerKind::MaxEntropy,
            "maxent-cal" => AlScorerKind::CalibratedMaxEntropy,
            "ent-gn" => AlScorerKind::EntGradNorm,
            "exp-gn" => AlScorerKind::ExpGradNorm,
            other => return Err(Error::Config(format!("unknown AL scorer {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradNormMode {
    Ent,
    Exp,
}

/// Running class (or tag) counts over every human annotation so far.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HumanLabelHistory {
    counts: Vec<u64>,
    total: u64,
}

impl HumanLabelHistory {
    pub fn new(num_classes: usize) -> Self {
        HumanLabelHistory {
            counts: vec![0; num_classes],
            total: 0,
        }
    }

    pub fn record(&mut self, label: &Label) {
        match label {
            Label::Class(c) => self.counts[*c] += 1,
            Label::Tags(tags) => tags.iter().for_each(|&t| self.counts[t] += 1),
        }
        self.total += 1;
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Number of human annotations recorded.
    pub fn total(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// Class frequencies; for multilabel tasks the per-tag marginal rates.
    pub fn frequencies<T: Scalar>(&self) -> Vec<T> {
        let n = T::lit(self.total.max(1) as f64);
        self.counts.iter().map(|&c| T::lit(c as f64) / n).collect()
    }
}

/// Uniform draw in `[0, 1)`.
pub fn score_random<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> AlScore<T> {
    AlScore::normalized(T::lit(rng.gen::<f64>()))
}

/// Entropy of the (optionally temperature-scaled) prediction divided by its
/// maximum: `ln C`, or `C ln 2` for multilabel total entropy.
pub fn score_max_entropy<T: Scalar>(
    model: &AnnotatorModel<T>,
    features: &[T],
    temperature: Option<T>,
) -> Result<AlScore<T>> {
    let pred = match temperature {
        Some(t) => model.predict_calibrated(features, t)?,
        None => model.predict(features)?,
    };
    let h = entropy(&pred) / max_entropy::<T>(pred.num_classes(), pred.multilabel);
    Ok(AlScore::normalized(h.max(T::zero()).min(T::one())))
}

/// Expected squared gradient norm over pseudo-labels. Unnormalized.
pub fn score_grad_norm<T: Scalar>(
    model: &AnnotatorModel<T>,
    features: &[T],
    mode: GradNormMode,
    history: &HumanLabelHistory,
) -> Result<AlScore<T>> {
    let pred = model.predict(features)?;
    let phi = model.last_layer_input(features)?;
    let phi_sq = dot(&phi, &phi);
    let weights: Vec<T> = match mode {
        GradNormMode::Exp if !history.is_empty() => history.frequencies(),
        _ => pred.probs.clone(),
    };
    let residual = expected_residual(&model.task, &pred.probs, &weights);
    Ok(AlScore::raw(residual * phi_sq))
}

/// `E_y |dl/dz|^2` for pseudo-label weights `w`.
fn expected_residual<T: Scalar>(task: &TaskSpec, p: &[T], w: &[T]) -> T {
    if task.task_kind.is_multilabel() {
        // Independent Bernoulli tags, gradient of the mean BCE is (p - y) / C.
        let c = T::from_usize_lossy(p.len());
        let s: T = p
            .iter()
            .zip(w)
            .map(|(&pc, &wc)| {
                let one = T::one();
                wc * (one - pc) * (one - pc) + (one - wc) * pc * pc
            })
            .sum();
        s / (c * c)
    } else {
        // |p - e_y|^2 = |p|^2 - 2 p_y + 1
        let p_sq = dot(p, p);
        w.iter()
            .zip(p)
            .map(|(&wy, &py)| wy * (p_sq - T::lit(2.0) * py + T::one()))
            .sum()
    }
}

/// Maps raw scores to `[0, 1]` by rank: the fraction of the other scores that
/// are strictly smaller. A single score maps to 1.
pub fn rank_normalize<T: Scalar>(scores: &[T]) -> Vec<T> {
    let n = scores.len();
    if n <= 1 {
        return vec![T::one(); n];
    }
    let denom = T::from_usize_lossy(n - 1);
    scores
        .iter()
        .map(|&s| T::from_usize_lossy(scores.iter().filter(|&&o| o < s).count()) / denom)
        .collect()
}
