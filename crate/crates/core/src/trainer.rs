//! Coordinate-descent training of the annotator and the triage network on
//! every human-labeled item seen so far.
//!
//! Each step first moves the annotator on its own loss with the triage
//! network frozen, then recomputes error indicators and annotator losses under
//! the updated annotator and moves the triage network on `L_d + L_m` with the
//! annotator frozen.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::checkpoint::Checkpoint;
use crate::dataset::Oracle;
use crate::eat::{
    assemble_input, class_weights, error_indicator, loss_l_d, loss_l_m, select_top_k, EatBatch,
    EatConfig, EatNetwork, IndicatorCounts, MarginMode,
};
use crate::error::{Error, Result};
use crate::ledger::BudgetLedger;
use crate::model::{entropy, model_loss, AnnotatorModel, PredictionDistribution};
use crate::scalar::{dot, unit, Scalar};
use crate::task::Label;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainerConfig {
    /// Full-batch coordinate steps run once the warmup items are labeled.
    pub warmup_epochs: usize,
    /// Coordinate steps after each new human label.
    pub incremental_steps: usize,
    /// Most recent human examples in each replay batch.
    pub replay_recent: usize,
    /// Older human examples resampled uniformly into each replay batch.
    pub replay_older: usize,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            warmup_epochs: 20,
            incremental_steps: 1,
            replay_recent: 128,
            replay_older: 32,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HumanExample<T> {
    pub item_id: String,
    pub features: Vec<T>,
    unit: Vec<T>,
    pub label: Label,
}

/// Loss components of one step. `l_eat = l_d + l_m` and
/// `total = l_f + l_eat + l_al`; `l_m` is the soft surrogate that is
/// optimised, `l_m_hard` the thresholded value.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct LossReport<T> {
    pub l_f: T,
    pub l_d: T,
    pub l_m: T,
    pub l_m_hard: T,
    pub l_eat: T,
    pub l_al: T,
    pub total: T,
    /// Error indicators that were set when the triage network was updated.
    pub errors: usize,
}

impl<T: Scalar> LossReport<T> {
    fn assemble(l_f: T, l_d: T, l_m: T, l_m_hard: T, errors: usize) -> Self {
        let l_eat = l_d + l_m;
        let l_al = T::zero();
        LossReport {
            l_f,
            l_d,
            l_m,
            l_m_hard,
            l_eat,
            l_al,
            total: l_f + l_eat + l_al,
            errors,
        }
    }

    pub fn to_f64(self) -> LossReport<f64> {
        LossReport {
            l_f: self.l_f.to_f64_lossy(),
            l_d: self.l_d.to_f64_lossy(),
            l_m: self.l_m.to_f64_lossy(),
            l_m_hard: self.l_m_hard.to_f64_lossy(),
            l_eat: self.l_eat.to_f64_lossy(),
            l_al: self.l_al.to_f64_lossy(),
            total: self.total.to_f64_lossy(),
            errors: self.errors,
        }
    }
}

/// Inputs of the triage network for a training batch, neighbors retrieved
/// within the batch itself.
struct EatView<T> {
    inputs: Vec<Vec<T>>,
    indicators: Vec<bool>,
    model_losses: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct TrainState<T> {
    pub model: AnnotatorModel<T>,
    /// Absent for pipelines without error-aware triage.
    pub eat: Option<EatNetwork<T>>,
    pub eat_config: EatConfig,
    pub config: TrainerConfig,
    human_data: Vec<HumanExample<T>>,
    /// Coordinate steps taken.
    pub epoch: u64,
    indicator_counts: IndicatorCounts,
    rng: ChaCha8Rng,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(
        model: AnnotatorModel<T>,
        eat: Option<EatNetwork<T>>,
        eat_config: EatConfig,
        config: TrainerConfig,
        seed: u64,
    ) -> Self {
        TrainState {
            model,
            eat,
            eat_config,
            config,
            human_data: Vec::new(),
            epoch: 0,
            indicator_counts: IndicatorCounts::default(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn human_data(&self) -> &[HumanExample<T>] {
        &self.human_data
    }

    pub fn indicator_counts(&self) -> IndicatorCounts {
        self.indicator_counts
    }

    /// Appends a human label. Its error indicator under the current annotator
    /// feeds the cumulative class weights of `L_d`.
    pub fn add_human(&mut self, item_id: &str, features: Vec<T>, label: Label) -> Result<()> {
        let pred = self.model.predict(&features)?;
        self.indicator_counts
            .record(error_indicator(&pred, &label, self.model.task.top_k_eval));
        let unit = unit(&features);
        self.human_data.push(HumanExample {
            item_id: item_id.to_string(),
            features,
            unit,
            label,
        });
        Ok(())
    }

    fn check_batch(&self, batch: &[usize]) -> Result<()> {
        if self.human_data.is_empty() {
            return Err(Error::EmptyHistory);
        }
        if batch.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if let Some(&bad) = batch.iter().find(|&&i| i >= self.human_data.len()) {
            return Err(Error::UnknownItem(format!("human example #{bad}")));
        }
        Ok(())
    }

    fn pairs<'a>(&'a self, batch: &'a [usize]) -> impl Iterator<Item = (&'a [T], &'a Label)> + 'a {
        batch.iter().map(move |&i| {
            let e = &self.human_data[i];
            (&e.features[..], &e.label)
        })
    }

    /// Phase one: gradient step on `L_f`; the triage network is untouched.
    /// Returns `L_f` before the step.
    pub fn step_model(&mut self, batch: &[usize]) -> Result<T> {
        self.check_batch(batch)?;
        let lr = self.model.learning_rate;
        let (loss, grads) = self.model.loss_and_grad(self.pairs(batch))?;
        self.model.net.descend(&grads, lr);
        Ok(loss)
    }

    fn eat_view(&self, batch: &[usize]) -> Result<EatView<T>> {
        let k = self.eat_config.k;
        let top_k = self.model.task.top_k_eval;
        let preds: Vec<PredictionDistribution<T>> = batch
            .iter()
            .map(|&i| self.model.predict(&self.human_data[i].features))
            .collect::<Result<_>>()?;
        let entropies: Vec<T> = preds.iter().map(entropy).collect();
        let mut inputs = Vec::with_capacity(batch.len());
        let mut indicators = Vec::with_capacity(batch.len());
        let mut model_losses = Vec::with_capacity(batch.len());
        for (a, &i) in batch.iter().enumerate() {
            let ex = &self.human_data[i];
            let top = select_top_k(
                k,
                batch
                    .iter()
                    .enumerate()
                    .filter(|&(b, _)| b != a)
                    .map(|(b, &j)| {
                        let other = &self.human_data[j];
                        (b, dot(&ex.unit, &other.unit), other.item_id.as_str())
                    }),
            );
            let mut weighted = vec![T::zero(); k];
            for (slot, (b, sim)) in top.into_iter().enumerate() {
                weighted[slot] = entropies[b] * sim;
            }
            inputs.push(assemble_input(&ex.features, &preds[a], &weighted));
            indicators.push(error_indicator(&preds[a], &ex.label, top_k));
            model_losses.push(model_loss(&preds[a], &ex.label));
        }
        Ok(EatView {
            inputs,
            indicators,
            model_losses,
        })
    }

    /// Phase two: gradient step on `L_EAT` under the current annotator, which
    /// is left untouched. Returns `(L_d, L_m soft, L_m hard, error count)`.
    pub fn step_eat(&mut self, batch: &[usize]) -> Result<(T, T, T, usize)> {
        self.check_batch(batch)?;
        if self.eat.is_none() {
            return Ok((T::zero(), T::zero(), T::zero(), 0));
        }
        let view = self.eat_view(batch)?;
        let errors = view.indicators.iter().filter(|&&e| e).count();
        let weights = class_weights(self.indicator_counts);
        let margin = T::lit(self.eat_config.margin);
        let lr = T::lit(self.eat_config.learning_rate);
        let dropout = self.eat_config.dropout;
        let eat_batch = EatBatch {
            inputs: &view.inputs,
            indicators: &view.indicators,
            model_losses: &view.model_losses,
        };
        let (eat, rng) = (self.eat.as_mut().expect("checked above"), &mut self.rng);
        let losses = eat.loss_and_grad(&eat_batch, weights, margin, Some((dropout, rng)))?;
        eat.net.descend(&losses.grads, lr);
        Ok((losses.l_d, losses.l_m, losses.l_m_hard, errors))
    }

    /// One coordinate-descent iteration over `batch` (indices into the human data).
    pub fn coordinate_step(&mut self, batch: &[usize]) -> Result<LossReport<T>> {
        let l_f = self.step_model(batch)?;
        let (l_d, l_m, l_m_hard, errors) = self.step_eat(batch)?;
        self.epoch += 1;
        Ok(LossReport::assemble(l_f, l_d, l_m, l_m_hard, errors))
    }

    /// Loss components on `batch` without touching any parameter; dropout off.
    pub fn total_loss(&self, batch: &[usize]) -> Result<LossReport<T>> {
        self.check_batch(batch)?;
        let l_f = self.model.batch_loss(self.pairs(batch))?;
        let Some(eat) = &self.eat else {
            return Ok(LossReport::assemble(l_f, T::zero(), T::zero(), T::zero(), 0));
        };
        let view = self.eat_view(batch)?;
        let scores: Vec<T> = view
            .inputs
            .iter()
            .map(|x| eat.eat_score(x))
            .collect::<Result<_>>()?;
        let samples: Vec<(bool, T)> = view.indicators.iter().copied().zip(scores.iter().copied()).collect();
        let l_d = loss_l_d(&samples, class_weights(self.indicator_counts));
        let per_item: Vec<(T, T)> = view.model_losses.iter().copied().zip(scores).collect();
        let margin = T::lit(self.eat_config.margin);
        let l_m = loss_l_m(&per_item, margin, MarginMode::Soft);
        let l_m_hard = loss_l_m(&per_item, margin, MarginMode::Hard);
        let errors = view.indicators.iter().filter(|&&e| e).count();
        Ok(LossReport::assemble(l_f, l_d, l_m, l_m_hard, errors))
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.human_data.len()).collect()
    }

    /// `epochs` full-batch coordinate steps over all human data.
    pub fn train_full(&mut self, epochs: usize) -> Result<Vec<LossReport<T>>> {
        let batch = self.all_indices();
        (0..epochs).map(|_| self.coordinate_step(&batch)).collect()
    }

    /// Replay batch: the most recent examples plus a uniform sample of older ones.
    pub fn replay_batch(&mut self) -> Vec<usize> {
        let n = self.human_data.len();
        let recent = self.config.replay_recent.min(n);
        let older = n - recent;
        let mut batch: Vec<usize> = (older..n).collect();
        let take = self.config.replay_older.min(older);
        if take > 0 {
            let mut picked = sample(&mut self.rng, older, take).into_vec();
            picked.sort_unstable();
            batch.splice(0..0, picked);
        }
        batch
    }

    /// Training after a single new human label.
    pub fn train_incremental(&mut self) -> Result<Vec<LossReport<T>>> {
        (0..self.config.incremental_steps)
            .map(|_| {
                let batch = self.replay_batch();
                self.coordinate_step(&batch)
            })
            .collect()
    }

    /// Annotator-only retraining on all human data, used before post-hoc
    /// re-annotation. Returns the last pre-step loss.
    pub fn retrain_model(&mut self, epochs: usize) -> Result<Option<T>> {
        let batch = self.all_indices();
        let mut last = None;
        for _ in 0..epochs {
            last = Some(self.step_model(&batch)?);
        }
        Ok(last)
    }

    /// Labels the first items through the oracle, charges each against the
    /// ledger, then trains for the configured warmup epochs.
    pub fn warmup(
        &mut self,
        items: &[(String, Vec<T>)],
        oracle: &Oracle,
        ledger: &mut BudgetLedger,
    ) -> Result<Vec<LossReport<T>>> {
        if items.is_empty() {
            return Ok(Vec::new());
        }
        if items.len() > ledger.remaining() {
            return Err(Error::BudgetExhausted {
                total: ledger.total(),
            });
        }
        for (id, features) in items {
            let label = oracle.reveal(id)?.clone();
            ledger.charge()?;
            self.add_human(id, features.clone(), label)?;
        }
        self.train_full(self.config.warmup_epochs)
    }

    pub fn checkpoint(&self, human_labels: usize) -> Checkpoint {
        Checkpoint {
            human_labels,
            model: self.model.checkpoint(),
            eat: self.eat.as_ref().map(EatNetwork::checkpoint),
        }
    }
}
