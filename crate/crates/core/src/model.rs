//! The online-trained model annotator: a linear or one-hidden-layer head over
//! precomputed feature vectors.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::NetworkCheckpoint;
use crate::error::{Error, Result};
use crate::nn::{sigmoid, softmax, Grads, Mlp};
use crate::scalar::Scalar;
use crate::task::{Label, TaskSpec};

/// Probabilities are clamped to `[EPS, 1 - EPS]` before taking logs.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Arch {
    Linear,
    Mlp { hidden: usize },
}

impl Arch {
    pub fn name(&self) -> &'static str {
        match self {
            Arch::Linear => "linear",
            Arch::Mlp { .. } => "mlp",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub arch: Arch,
    pub learning_rate: f64,
    /// Used for [`Arch::Mlp`] when no explicit width is set on the command line.
    pub hidden_width: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            arch: Arch::Linear,
            learning_rate: 0.05,
            hidden_width: 64,
        }
    }
}

/// Output of the annotator: a softmax distribution for single-label tasks,
/// independent per-tag probabilities for multilabel tasks.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct PredictionDistribution<T> {
    pub probs: Vec<T>,
    pub multilabel: bool,
}

impl<T: Scalar> PredictionDistribution<T> {
    pub fn exclusive(probs: Vec<T>) -> Self {
        PredictionDistribution {
            probs,
            multilabel: false,
        }
    }

    pub fn independent(probs: Vec<T>) -> Self {
        PredictionDistribution {
            probs,
            multilabel: true,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Index of the largest probability; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = i;
            }
        }
        best
    }

    pub fn max_prob(&self) -> T {
        self.probs[self.argmax()]
    }

    /// Class indices of the `k` largest probabilities, descending, ties by index.
    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.probs.len()).collect();
        idx.sort_by(|&a, &b| {
            self.probs[b]
                .partial_cmp(&self.probs[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        idx.truncate(k);
        idx
    }

    /// The label the model annotator emits: argmax class, or the top-`k` tags.
    pub fn to_label(&self, top_k: usize) -> Label {
        if self.multilabel {
            Label::tags(self.top_k(top_k))
        } else {
            Label::Class(self.argmax())
        }
    }

    pub fn is_valid(&self, tol: f64) -> bool {
        let in_range = self
            .probs
            .iter()
            .all(|&p| p >= T::zero() && p <= T::one() && p.is_finite());
        if self.multilabel {
            in_range
        } else {
            let s: T = self.probs.iter().copied().sum();
            in_range && (s.to_f64_lossy() - 1.0).abs() <= tol
        }
    }
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::lit(LOG_CLAMP);
    p.max(eps).min(T::one() - eps)
}

/// Shannon entropy in nats. Multilabel predictions use the total entropy, the
/// sum of per-tag binary entropies.
pub fn entropy<T: Scalar>(pred: &PredictionDistribution<T>) -> T {
    let h = |p: T| {
        if p <= T::zero() {
            T::zero()
        } else {
            -p * p.ln()
        }
    };
    if pred.multilabel {
        pred.probs.iter().map(|&p| h(p) + h(T::one() - p)).sum()
    } else {
        pred.probs.iter().map(|&p| h(p)).sum()
    }
}

/// Largest attainable entropy for `num_classes` outputs.
pub fn max_entropy<T: Scalar>(num_classes: usize, multilabel: bool) -> T {
    if multilabel {
        T::from_usize_lossy(num_classes) * T::lit(std::f64::consts::LN_2)
    } else {
        T::from_usize_lossy(num_classes).ln()
    }
}

/// Task-matched annotator loss: NLL of the true class, or mean per-tag binary
/// cross-entropy.
pub fn model_loss<T: Scalar>(pred: &PredictionDistribution<T>, label: &Label) -> T {
    match label {
        Label::Class(c) => -clamp_prob(pred.probs[*c]).ln(),
        Label::Tags(tags) => {
            let c = pred.probs.len();
            let total: T = pred
                .probs
                .iter()
                .enumerate()
                .map(|(i, &p)| {
                    let p = clamp_prob(p);
                    if tags.contains(&i) {
                        -p.ln()
                    } else {
                        -(T::one() - p).ln()
                    }
                })
                .sum();
            total / T::from_usize_lossy(c)
        }
    }
}

/// Temperature scaling: `softmax(logits / temperature)`.
pub fn calibrate<T: Scalar>(logits: &[T], temperature: T) -> Result<PredictionDistribution<T>> {
    if !(temperature > T::zero()) {
        return Err(Error::NonPositiveTemperature(temperature.to_f64_lossy()));
    }
    let scaled: Vec<T> = logits.iter().map(|&z| z / temperature).collect();
    Ok(PredictionDistribution::exclusive(softmax(&scaled)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct AnnotatorModel<T> {
    pub task: TaskSpec,
    pub arch: Arch,
    pub net: Mlp<T>,
    pub learning_rate: T,
    pub seed: u64,
}

impl<T: Scalar> AnnotatorModel<T> {
    /// Hidden layers He-initialised, output layer zero; deterministic in `seed`.
    pub fn new(task: TaskSpec, config: &ModelConfig, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = Mlp::new(&Self::dims_for(&task, config.arch), true, &mut rng);
        AnnotatorModel {
            task,
            arch: config.arch,
            net,
            learning_rate: T::lit(config.learning_rate),
            seed,
        }
    }

    pub fn zeros(task: TaskSpec, arch: Arch) -> Self {
        AnnotatorModel {
            task,
            arch,
            net: Mlp::zeros(&Self::dims_for(&task, arch)),
            learning_rate: T::lit(ModelConfig::default().learning_rate),
            seed: 0,
        }
    }

    fn dims_for(task: &TaskSpec, arch: Arch) -> Vec<usize> {
        match arch {
            Arch::Linear => vec![task.feature_dim, task.num_classes],
            Arch::Mlp { hidden } => vec![task.feature_dim, hidden, task.num_classes],
        }
    }

    fn check_dim(&self, features: &[T]) -> Result<()> {
        if features.len() != self.task.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.task.feature_dim,
                got: features.len(),
            });
        }
        Ok(())
    }

    pub fn logits(&self, features: &[T]) -> Result<Vec<T>> {
        self.check_dim(features)?;
        Ok(self.net.forward(features))
    }

    fn distribution_from_logits(&self, logits: &[T]) -> PredictionDistribution<T> {
        if self.task.task_kind.is_multilabel() {
            PredictionDistribution::independent(logits.iter().map(|&z| sigmoid(z)).collect())
        } else {
            PredictionDistribution::exclusive(softmax(logits))
        }
    }

    pub fn predict(&self, features: &[T]) -> Result<PredictionDistribution<T>> {
        let logits = self.logits(features)?;
        Ok(self.distribution_from_logits(&logits))
    }

    /// Temperature-scaled prediction. Multilabel heads scale each tag's logit.
    pub fn predict_calibrated(
        &self,
        features: &[T],
        temperature: T,
    ) -> Result<PredictionDistribution<T>> {
        let logits = self.logits(features)?;
        if self.task.task_kind.is_multilabel() {
            if !(temperature > T::zero()) {
                return Err(Error::NonPositiveTemperature(temperature.to_f64_lossy()));
            }
            Ok(PredictionDistribution::independent(
                logits.iter().map(|&z| sigmoid(z / temperature)).collect(),
            ))
        } else {
            calibrate(&logits, temperature)
        }
    }

    /// Input of the output layer (the features themselves for a linear head).
    pub fn last_layer_input(&self, features: &[T]) -> Result<Vec<T>> {
        self.check_dim(features)?;
        let trace = self.net.forward_trace::<ChaCha8Rng>(features, None);
        Ok(trace.last_layer_input().to_vec())
    }

    /// Gradient of the loss with respect to the logits.
    fn logit_grad(&self, pred: &PredictionDistribution<T>, label: &Label) -> Vec<T> {
        match label {
            Label::Class(c) => pred
                .probs
                .iter()
                .enumerate()
                .map(|(i, &p)| if i == *c { p - T::one() } else { p })
                .collect(),
            Label::Tags(tags) => {
                let n = T::from_usize_lossy(pred.probs.len());
                pred.probs
                    .iter()
                    .enumerate()
                    .map(|(i, &p)| {
                        let y = if tags.contains(&i) { T::one() } else { T::zero() };
                        (p - y) / n
                    })
                    .collect()
            }
        }
    }

    /// Mean loss over `batch` and its gradient with respect to the parameters.
    pub fn loss_and_grad<'a, I>(&self, batch: I) -> Result<(T, Grads<T>)>
    where
        I: IntoIterator<Item = (&'a [T], &'a Label)>,
    {
        let mut grads = Grads::zeros_like(&self.net);
        let mut total = T::zero();
        let mut n = 0usize;
        for (x, label) in batch {
            self.check_dim(x)?;
            let trace = self.net.forward_trace::<ChaCha8Rng>(x, None);
            let pred = self.distribution_from_logits(&trace.output);
            total = total + model_loss(&pred, label);
            let d = self.logit_grad(&pred, label);
            self.net.backward(&trace, &d, &mut grads);
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        let inv = T::one() / T::from_usize_lossy(n);
        grads.scale(inv);
        Ok((total * inv, grads))
    }

    pub fn batch_loss<'a, I>(&self, batch: I) -> Result<T>
    where
        I: IntoIterator<Item = (&'a [T], &'a Label)>,
    {
        let mut total = T::zero();
        let mut n = 0usize;
        for (x, label) in batch {
            total = total + model_loss(&self.predict(x)?, label);
            n += 1;
        }
        if n == 0 {
            return Err(Error::EmptyBatch);
        }
        Ok(total / T::from_usize_lossy(n))
    }

    /// One gradient step on the mean batch loss, in place. Returns the loss
    /// before the step.
    pub fn train_step<'a, I>(&mut self, batch: I, lr: T) -> Result<T>
    where
        I: IntoIterator<Item = (&'a [T], &'a Label)>,
    {
        let (loss, grads) = self.loss_and_grad(batch)?;
        self.net.descend(&grads, lr);
        Ok(loss)
    }

    /// Value-style variant of [`Self::train_step`].
    pub fn sgd_update<'a, I>(&self, batch: I, lr: T) -> Result<Self>
    where
        I: IntoIterator<Item = (&'a [T], &'a Label)>,
    {
        let mut next = self.clone();
        next.train_step(batch, lr)?;
        Ok(next)
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite()
    }

    pub fn checkpoint(&self) -> NetworkCheckpoint {
        NetworkCheckpoint::from_mlp(self.arch.name(), &self.net, self.seed)
    }

    pub fn from_checkpoint(task: TaskSpec, ckpt: &NetworkCheckpoint, learning_rate: f64) -> Result<Self> {
        let net = ckpt.to_mlp()?;
        let arch = match ckpt.arch.as_str() {
            "linear" => Arch::Linear,
            "mlp" => Arch::Mlp {
                hidden: net.layers[0].out_dim,
            },
            other => return Err(Error::Config(format!("unknown model arch {other:?}"))),
        };
        if net.input_dim() != task.feature_dim || net.output_dim() != task.num_classes {
            return Err(Error::DimensionMismatch {
                expected: task.feature_dim,
                got: net.input_dim(),
            });
        }
        Ok(AnnotatorModel {
            task,
            arch,
            net,
            learning_rate: T::lit(learning_rate),
            seed: ckpt.seed,
        })
    }
}
