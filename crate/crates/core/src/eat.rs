//! Error-aware triage (EAT): a small network estimating the probability that
//! the current model annotator mislabels an item.
//!
//! The network sees the item's features, the annotator's prediction, and the
//! weighted neighborhood entropy (prediction entropies of the `k` most
//! cosine-similar batch items, each scaled by its similarity). It is trained
//! on human-labeled items with an error-probability loss `L_d` plus a
//! max-margin loss `L_m` that pushes the annotator's mean loss on
//! human-routed items above its mean loss on model-routed items.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::NetworkCheckpoint;
use crate::error::{Error, Result};
use crate::model::{entropy, AnnotatorModel, PredictionDistribution, LOG_CLAMP};
use crate::nn::{softmax, Dropout, Grads, Mlp};
use crate::scalar::{cosine, Scalar};
use crate::task::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EatConfig {
    /// Neighbors retrieved per item.
    pub k: usize,
    /// Margin of the max-margin loss.
    pub margin: f64,
    /// Widths of the two hidden layers of the three-layer network.
    pub hidden: [usize; 2],
    pub dropout: f64,
    pub learning_rate: f64,
}

impl Default for EatConfig {
    fn default() -> Self {
        EatConfig {
            k: 3,
            margin: 0.3,
            hidden: [16, 16],
            dropout: 0.1,
            learning_rate: 0.2,
        }
    }
}

impl EatConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(Error::Config("EAT k must be at least 1".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(Error::Config("EAT margin must be non-negative".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config("EAT dropout must lie in [0, 1)".into()));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("EAT hidden widths must be positive".into()));
        }
        Ok(())
    }
}

/// An item as seen by neighbor retrieval.
#[derive(Debug, Clone, Copy)]
pub struct FeatureRef<'a, T> {
    pub id: &'a str,
    pub features: &'a [T],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct NeighborhoodFeatures<T> {
    pub neighbor_ids: Vec<String>,
    pub similarities: Vec<T>,
    pub entropies: Vec<T>,
    /// Element-wise product of entropies and similarities, zero-padded to `k`.
    pub weighted: Vec<T>,
}

/// Indices of the `k` highest-similarity candidates, best first. Ties go to
/// the lexicographically smaller id.
pub(crate) fn select_top_k<'a, T: Scalar>(
    k: usize,
    candidates: impl Iterator<Item = (usize, T, &'a str)>,
) -> Vec<(usize, T)> {
    let mut best: Vec<(usize, T, &str)> = Vec::with_capacity(k + 1);
    for (idx, sim, id) in candidates {
        let better = |other: &(usize, T, &str)| sim > other.1 || (sim == other.1 && id < other.2);
        if best.len() == k && !better(&best[k - 1]) {
            continue;
        }
        let pos = best.iter().position(better).unwrap_or(best.len());
        best.insert(pos, (idx, sim, id));
        best.truncate(k);
    }
    best.into_iter().map(|(i, s, _)| (i, s)).collect()
}

/// Retrieves the neighborhood of `query` among `batch` (the query itself is
/// skipped by id) and weights neighbor entropies by similarity.
pub fn neighborhood<T: Scalar>(
    query: FeatureRef<'_, T>,
    batch: &[FeatureRef<'_, T>],
    model: &AnnotatorModel<T>,
    k: usize,
) -> Result<NeighborhoodFeatures<T>> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let top = select_top_k(
        k,
        batch
            .iter()
            .enumerate()
            .filter(|(_, c)| c.id != query.id)
            .map(|(i, c)| (i, cosine(query.features, c.features), c.id)),
    );
    let mut out = NeighborhoodFeatures {
        neighbor_ids: Vec::with_capacity(k),
        similarities: Vec::with_capacity(k),
        entropies: Vec::with_capacity(k),
        weighted: vec![T::zero(); k],
    };
    for (slot, (i, sim)) in top.into_iter().enumerate() {
        let h = entropy(&model.predict(batch[i].features)?);
        out.neighbor_ids.push(batch[i].id.to_string());
        out.similarities.push(sim);
        out.entropies.push(h);
        out.weighted[slot] = h * sim;
    }
    Ok(out)
}

/// `concat(features, prediction, weighted neighborhood entropy)`.
pub fn assemble_input<T: Scalar>(
    features: &[T],
    pred: &PredictionDistribution<T>,
    weighted: &[T],
) -> Vec<T> {
    let mut v = Vec::with_capacity(features.len() + pred.probs.len() + weighted.len());
    v.extend_from_slice(features);
    v.extend_from_slice(&pred.probs);
    v.extend_from_slice(weighted);
    v
}

pub fn build_eat_input<T: Scalar>(
    query: FeatureRef<'_, T>,
    batch: &[FeatureRef<'_, T>],
    model: &AnnotatorModel<T>,
    config: &EatConfig,
) -> Result<Vec<T>> {
    let hood = neighborhood(query, batch, model, config.k)?;
    let pred = model.predict(query.features)?;
    Ok(assemble_input(query.features, &pred, &hood.weighted))
}

pub fn eat_input_dim(feature_dim: usize, num_classes: usize, k: usize) -> usize {
    feature_dim + num_classes + k
}

/// Two-way classifier over (error, correct).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct EatNetwork<T> {
    pub net: Mlp<T>,
    pub seed: u64,
}

impl<T: Scalar> EatNetwork<T> {
    /// Hidden layers He-initialised from `seed`; the output layer starts at
    /// zero so the untrained network answers 0.5.
    pub fn new(input_dim: usize, config: &EatConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = [input_dim, config.hidden[0], config.hidden[1], 2];
        EatNetwork {
            net: Mlp::new(&dims, true, &mut rng),
            seed,
        }
    }

    pub fn zeros(input_dim: usize, hidden: [usize; 2]) -> Self {
        EatNetwork {
            net: Mlp::zeros(&[input_dim, hidden[0], hidden[1], 2]),
            seed: 0,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.net.input_dim()
    }

    /// `(P[error], P[correct])` with dropout disabled.
    pub fn distribution(&self, input: &[T]) -> Result<[T; 2]> {
        if input.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let p = softmax(&self.net.forward(input));
        Ok([p[0], p[1]])
    }

    /// `d^EAT`: the probability that the annotator errs on this input.
    pub fn eat_score(&self, input: &[T]) -> Result<T> {
        Ok(self.distribution(input)?[0])
    }

    /// `L_d + L_m` on a batch and its gradient. `L_m` uses the soft surrogate
    /// for gradients; the hard value is returned for monitoring.
    pub fn loss_and_grad<R: Rng + ?Sized>(
        &self,
        batch: &EatBatch<'_, T>,
        weights: ErrorClassWeights<T>,
        margin: T,
        dropout: Option<(f64, &mut R)>,
    ) -> Result<EatLosses<T>> {
        let n = batch.inputs.len();
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let mut rng_slot = dropout;
        let mut traces = Vec::with_capacity(n);
        let mut scores = Vec::with_capacity(n);
        for input in batch.inputs {
            let d = match rng_slot.as_mut() {
                Some((rate, rng)) => Some(Dropout {
                    rate: *rate,
                    rng: &mut **rng,
                }),
                None => None,
            };
            let trace = self.net.forward_trace(input, d);
            let p = softmax(&trace.output);
            scores.push(p[0]);
            traces.push(trace);
        }
        let samples: Vec<(bool, T)> = batch.indicators.iter().copied().zip(scores.iter().copied()).collect();
        let l_d = loss_l_d(&samples, weights);
        let per_item: Vec<(T, T)> = batch.model_losses.iter().copied().zip(scores.iter().copied()).collect();
        let l_m = loss_l_m(&per_item, margin, MarginMode::Soft);
        let l_m_hard = loss_l_m(&per_item, margin, MarginMode::Hard);
        let dm = loss_l_m_soft_grad(&per_item, margin);

        let inv_n = T::one() / T::from_usize_lossy(n);
        let mut grads = Grads::zeros_like(&self.net);
        for i in 0..n {
            let d = scores[i];
            let err = batch.indicators[i];
            let w = if err { weights.weight_error } else { weights.weight_correct };
            // softmax + NLL: grad_z = w/n * (p - onehot(target)), target 0 = error
            let (t0, t1) = if err { (T::one(), T::zero()) } else { (T::zero(), T::one()) };
            let mut g0 = w * inv_n * (d - t0);
            let mut g1 = w * inv_n * ((T::one() - d) - t1);
            let dd = d * (T::one() - d);
            g0 = g0 + dm[i] * dd;
            g1 = g1 - dm[i] * dd;
            self.net.backward(&traces[i], &[g0, g1], &mut grads);
        }
        Ok(EatLosses {
            l_d,
            l_m,
            l_m_hard,
            grads,
        })
    }

    pub fn checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint::from_mlp("eat-fc", &self.net, self.seed)
    }

    pub fn from_checkpoint(ckpt: &NetworkCheckpoint) -> Result<Self> {
        let net = ckpt.to_mlp()?;
        if net.output_dim() != 2 {
            return Err(Error::DimensionMismatch {
                expected: 2,
                got: net.output_dim(),
            });
        }
        Ok(EatNetwork {
            net,
            seed: ckpt.seed,
        })
    }
}

/// Training batch for the triage network.
pub struct EatBatch<'a, T> {
    pub inputs: &'a [Vec<T>],
    pub indicators: &'a [bool],
    /// Annotator loss on each item, for the max-margin term.
    pub model_losses: &'a [T],
}

pub struct EatLosses<T> {
    pub l_d: T,
    pub l_m: T,
    pub l_m_hard: T,
    pub grads: Grads<T>,
}

/// `true` when the annotator is wrong: argmax differs from the class, or (for
/// multilabel) no true tag appears among the top-`top_k` predicted tags.
pub fn error_indicator<T: Scalar>(
    pred: &PredictionDistribution<T>,
    label: &Label,
    top_k: usize,
) -> bool {
    match label {
        Label::Class(c) => pred.argmax() != *c,
        Label::Tags(tags) => !pred.top_k(top_k).iter().any(|t| tags.contains(t)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct ErrorClassWeights<T> {
    pub weight_error: T,
    pub weight_correct: T,
}

impl<T: Scalar> ErrorClassWeights<T> {
    pub fn unit() -> Self {
        ErrorClassWeights {
            weight_error: T::one(),
            weight_correct: T::one(),
        }
    }
}

/// Cumulative error-indicator counts over human annotations.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndicatorCounts {
    pub error: u64,
    pub correct: u64,
}

impl IndicatorCounts {
    pub fn record(&mut self, is_error: bool) {
        if is_error {
            self.error += 1;
        } else {
            self.correct += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.error + self.correct
    }
}

/// `w_c = total / (2 * max(count_c, 1))`; unit weights before any count.
pub fn class_weights<T: Scalar>(counts: IndicatorCounts) -> ErrorClassWeights<T> {
    let total = counts.total();
    if total == 0 {
        return ErrorClassWeights::unit();
    }
    let w = |c: u64| T::lit(total as f64 / (2.0 * c.max(1) as f64));
    ErrorClassWeights {
        weight_error: w(counts.error),
        weight_correct: w(counts.correct),
    }
}

fn clamped_ln<T: Scalar>(p: T) -> T {
    let eps = T::lit(LOG_CLAMP);
    p.max(eps).min(T::one() - eps).ln()
}

/// Class-weighted NLL of the two-way output against the error indicator,
/// averaged over the number of samples.
pub fn loss_l_d<T: Scalar>(samples: &[(bool, T)], weights: ErrorClassWeights<T>) -> T {
    if samples.is_empty() {
        return T::zero();
    }
    let total: T = samples
        .iter()
        .map(|&(err, d)| {
            if err {
                -weights.weight_error * clamped_ln(d)
            } else {
                -weights.weight_correct * clamped_ln(T::one() - d)
            }
        })
        .sum();
    total / T::from_usize_lossy(samples.len())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarginMode {
    /// Items partitioned at `d^EAT >= 0.5`.
    Hard,
    /// Partition masks replaced by `d^EAT` and `1 - d^EAT`.
    Soft,
}

fn margin_means<T: Scalar>(per_item: &[(T, T)], mode: MarginMode) -> (T, T, T, T) {
    let mut num_h = T::zero();
    let mut den_h = T::zero();
    let mut num_m = T::zero();
    let mut den_m = T::zero();
    for &(loss, d) in per_item {
        let (wh, wm) = match mode {
            MarginMode::Hard if d >= T::lit(0.5) => (T::one(), T::zero()),
            MarginMode::Hard => (T::zero(), T::one()),
            MarginMode::Soft => (d, T::one() - d),
        };
        num_h = num_h + wh * loss;
        den_h = den_h + wh;
        num_m = num_m + wm * loss;
        den_m = den_m + wm;
    }
    let mean = |n: T, d: T| if d > T::zero() { n / d } else { T::zero() };
    (mean(num_h, den_h), den_h, mean(num_m, den_m), den_m)
}

/// `max(0, margin + mean_model_loss(routed to model) - mean_model_loss(routed to human))`.
/// An empty side contributes a mean of 0.
pub fn loss_l_m<T: Scalar>(per_item: &[(T, T)], margin: T, mode: MarginMode) -> T {
    let (h, _, m, _) = margin_means(per_item, mode);
    (margin + m - h).max(T::zero())
}

/// Gradient of the soft `L_m` with respect to each `d^EAT`.
pub fn loss_l_m_soft_grad<T: Scalar>(per_item: &[(T, T)], margin: T) -> Vec<T> {
    let (h, den_h, m, den_m) = margin_means(per_item, MarginMode::Soft);
    if margin + m - h <= T::zero() {
        return vec![T::zero(); per_item.len()];
    }
    per_item
        .iter()
        .map(|&(loss, _)| {
            let dm = if den_m > T::zero() { -(loss - m) / den_m } else { T::zero() };
            let dh = if den_h > T::zero() { (loss - h) / den_h } else { T::zero() };
            dm - dh
        })
        .collect()
}

pub fn loss_l_eat<T: Scalar>(l_d: T, l_m: T) -> T {
    l_d + l_m
}
