//! The annotation run as a resumable state machine.
//!
//! [`Engine::advance`] moves the run forward until a human label is needed or
//! the run is over; [`Engine::submit`] feeds that label back. The simulated
//! harness answers from the oracle, the session service from a person, and
//! both therefore produce the same event sequence for the same labels.
//!
//! Phases: warmup (the first `W` items go to the human, then `E` full-batch
//! epochs), stream (batches of consecutive items, shuffled within the batch,
//! each item scored and routed by the method's rule), re-allocation (leftover
//! budget buys human labels for the highest-scored model annotations) and an
//! optional post-hoc re-annotation pass.

use std::collections::VecDeque;
use std::ops::Range;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::al::{
    rank_normalize, score_grad_norm, score_max_entropy, score_random, AlScore, AlScorerKind,
    GradNormMode, HumanLabelHistory,
};
use crate::checkpoint::Checkpoint;
use crate::config::{ExperimentConfig, Method, PostHoc};
use crate::dataset::Dataset;
use crate::eat::{build_eat_input, eat_input_dim, EatNetwork, FeatureRef};
use crate::error::{Error, Result};
use crate::ledger::BudgetLedger;
use crate::model::{AnnotatorModel, PredictionDistribution};
use crate::record::{AnnotationRecord, Assignee};
use crate::scalar::Scalar;
use crate::task::Label;
use crate::trainer::{LossReport, TrainState};
use crate::triage::{
    bi_score, decide_half_batch, decide_threshold, decide_uncertainty_dynamic, reallocate,
    DecisionRule, TriageDecision, TriageScore,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Warmup,
    Stream,
    Reallocation,
    Done,
}

/// Externally visible run status.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    AwaitingLabel,
    /// Budget spent or stream finished; the remaining work needs no human.
    Completing,
    Done,
}

/// Where in the run a label was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelPhase {
    Warmup,
    Stream,
    /// Model label for an item reached after the budget ran out.
    BudgetExhausted,
    Reallocation,
    PostHoc,
}

/// One line of `events.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Event {
    /// A warmup item was handed to the human.
    Warmup { item_id: String, position: usize },
    Decision {
        item_id: String,
        position: usize,
        assignee: Assignee,
        rule: DecisionRule,
        scores: TriageScore<f64>,
        /// Highest class probability of the prediction the rule looked at.
        max_pred: f64,
    },
    Label {
        item_id: String,
        position: usize,
        assignee: Assignee,
        label: Label,
        phase: LabelPhase,
        budget_used: usize,
        /// Training steps triggered by this label.
        #[serde(default, skip_serializing_if = "Vec::is_empty")]
        losses: Vec<LossReport<f64>>,
    },
    Checkpoint { checkpoint: Checkpoint },
}

impl Event {
    pub fn kind(&self) -> &'static str {
        match self {
            Event::Warmup { .. } => "warmup",
            Event::Decision { .. } => "decision",
            Event::Label { .. } => "label",
            Event::Checkpoint { .. } => "checkpoint",
        }
    }
}

/// How the run loop ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Terminal {
    /// The budget was spent before the stream ended; every later item went to
    /// the model.
    BudgetExhausted { model_after_exhaustion: usize },
    /// Every item was annotated with budget left, which then bought human
    /// labels for model annotations.
    DataExhausted {
        remaining_budget: usize,
        model_annotated: usize,
        reallocated: usize,
    },
}

/// Per-batch tally of the stream phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: usize,
    pub start: usize,
    pub items: usize,
    pub human: usize,
    pub model: usize,
    pub budget_used: usize,
}

pub enum Step {
    NeedsLabel(String),
    Done,
}

/// The item currently awaiting a human label.
#[derive(Debug, Clone, PartialEq)]
pub struct Pending<T> {
    pub index: usize,
    pub position: usize,
    pub phase: LabelPhase,
    pub score: Option<TriageScore<T>>,
}

#[derive(Debug, Clone)]
struct BatchPlan<T> {
    range: Range<usize>,
    decisions: Vec<(TriageDecision<T>, T)>,
}

#[derive(Debug, Clone)]
pub struct Engine<T> {
    config: ExperimentConfig,
    dataset: Arc<Dataset>,
    features: Vec<Vec<T>>,
    order: Vec<usize>,
    position_of: Vec<usize>,
    warmup_n: usize,
    ledger: BudgetLedger,
    train: TrainState<T>,
    history: HumanLabelHistory,
    records: Vec<Option<AnnotationRecord>>,
    events: Vec<Event>,
    rng: ChaCha8Rng,
    phase: Phase,
    cursor: usize,
    plan: Option<BatchPlan<T>>,
    pending: Option<Pending<T>>,
    realloc_queue: VecDeque<(usize, TriageScore<T>)>,
    loss_trace: Vec<LossReport<f64>>,
    rounds: Vec<RoundLog>,
    terminal: Option<Terminal>,
    human_labels: usize,
}

fn al_score<T: Scalar>(
    kind: AlScorerKind,
    model: &AnnotatorModel<T>,
    history: &HumanLabelHistory,
    rng: &mut ChaCha8Rng,
    temperature: T,
    x: &[T],
) -> Result<AlScore<T>> {
    match kind {
        AlScorerKind::Random => Ok(score_random(rng)),
        AlScorerKind::MaxEntropy => score_max_entropy(model, x, None),
        AlScorerKind::CalibratedMaxEntropy => score_max_entropy(model, x, Some(temperature)),
        AlScorerKind::EntGradNorm => score_grad_norm(model, x, GradNormMode::Ent, history),
        AlScorerKind::ExpGradNorm => score_grad_norm(model, x, GradNormMode::Exp, history),
    }
}

impl<T: Scalar> Engine<T> {
    pub fn new(config: ExperimentConfig, dataset: Arc<Dataset>) -> Result<Self> {
        let n = dataset.len();
        if n == 0 {
            return Err(Error::Config("dataset is empty".into()));
        }
        config.validate(n)?;
        let task = dataset.task;
        let seed = config.seed;
        let features: Vec<Vec<T>> = dataset
            .items()
            .iter()
            .map(|it| it.features.iter().map(|&v| T::lit(v)).collect())
            .collect();
        let warmup_n = config.warmup(n);
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(3));
        let mut order: Vec<usize> = (0..n).collect();
        for chunk in order[warmup_n..].chunks_mut(config.batch_size) {
            chunk.shuffle(&mut rng);
        }
        let mut position_of = vec![0; n];
        for (pos, &idx) in order.iter().enumerate() {
            position_of[idx] = pos;
        }
        let mut model = AnnotatorModel::new(task, &config.model, seed);
        model.learning_rate = T::lit(config.model.learning_rate);
        let eat = config.method.uses_eat().then(|| {
            EatNetwork::new(
                eat_input_dim(task.feature_dim, task.num_classes, config.eat.k),
                &config.eat,
                seed.wrapping_add(1),
            )
        });
        let train = TrainState::new(model, eat, config.eat, config.trainer, seed.wrapping_add(2));
        Ok(Engine {
            ledger: BudgetLedger::new(config.budget(n)),
            history: HumanLabelHistory::new(task.num_classes),
            records: vec![None; n],
            features,
            order,
            position_of,
            warmup_n,
            train,
            events: Vec::new(),
            rng,
            phase: Phase::Warmup,
            cursor: 0,
            plan: None,
            pending: None,
            realloc_queue: VecDeque::new(),
            loss_trace: Vec::new(),
            rounds: Vec::new(),
            terminal: None,
            human_labels: 0,
            config,
            dataset,
        })
    }

    /// Rebuilds an engine by feeding it the given human labels in order.
    pub fn replay(
        config: ExperimentConfig,
        dataset: Arc<Dataset>,
        labels: impl IntoIterator<Item = (String, Label)>,
    ) -> Result<Self> {
        let mut engine = Engine::new(config, dataset)?;
        for (id, label) in labels {
            match engine.advance()? {
                Step::NeedsLabel(expected) if expected == id => engine.submit(&id, label)?,
                Step::NeedsLabel(expected) => {
                    return Err(Error::WrongItem {
                        expected: Some(expected),
                        got: id,
                    })
                }
                Step::Done => {
                    return Err(Error::WrongItem {
                        expected: None,
                        got: id,
                    })
                }
            }
        }
        engine.advance()?;
        Ok(engine)
    }

    pub fn config(&self) -> &ExperimentConfig {
        &self.config
    }

    pub fn dataset(&self) -> &Arc<Dataset> {
        &self.dataset
    }

    pub fn ledger(&self) -> &BudgetLedger {
        &self.ledger
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn train_state(&self) -> &TrainState<T> {
        &self.train
    }

    pub fn model(&self) -> &AnnotatorModel<T> {
        &self.train.model
    }

    pub fn loss_trace(&self) -> &[LossReport<f64>] {
        &self.loss_trace
    }

    pub fn rounds(&self) -> &[RoundLog] {
        &self.rounds
    }

    pub fn terminal(&self) -> Option<Terminal> {
        self.terminal
    }

    pub fn warmup_count(&self) -> usize {
        self.warmup_n
    }

    /// Stream order as dataset indices.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn pending(&self) -> Option<&Pending<T>> {
        self.pending.as_ref()
    }

    pub fn pending_id(&self) -> Option<&str> {
        self.pending
            .as_ref()
            .map(|p| self.dataset.item(p.index).id.as_str())
    }

    /// Active records in dataset order; items not yet reached are skipped.
    pub fn records(&self) -> impl Iterator<Item = &AnnotationRecord> {
        self.records.iter().flatten()
    }

    pub fn is_done(&self) -> bool {
        self.phase == Phase::Done
    }

    pub fn status(&self) -> RunStatus {
        if self.phase == Phase::Done {
            RunStatus::Done
        } else if self.pending.is_some() {
            RunStatus::AwaitingLabel
        } else if self.phase == Phase::Reallocation
            || (self.phase == Phase::Stream && self.ledger.is_exhausted())
        {
            RunStatus::Completing
        } else {
            RunStatus::Running
        }
    }

    /// Current prediction for an item, as shown next to a pending item.
    pub fn predict(&self, index: usize) -> Result<PredictionDistribution<T>> {
        self.train.model.predict(&self.features[index])
    }

    pub fn checkpoint(&self) -> Checkpoint {
        self.train.checkpoint(self.human_labels)
    }

    /// Runs until a human label is required or the run has ended.
    pub fn advance(&mut self) -> Result<Step> {
        loop {
            if let Some(p) = &self.pending {
                return Ok(Step::NeedsLabel(self.dataset.item(p.index).id.clone()));
            }
            match self.phase {
                Phase::Warmup => {
                    if self.cursor < self.warmup_n {
                        let position = self.cursor;
                        let index = self.order[position];
                        self.cursor += 1;
                        self.events.push(Event::Warmup {
                            item_id: self.dataset.item(index).id.clone(),
                            position,
                        });
                        self.pending = Some(Pending {
                            index,
                            position,
                            phase: LabelPhase::Warmup,
                            score: None,
                        });
                    } else {
                        if self.warmup_n > 0 {
                            let losses = self.train.train_full(self.config.trainer.warmup_epochs)?;
                            self.loss_trace.extend(losses.into_iter().map(LossReport::to_f64));
                        }
                        self.phase = Phase::Stream;
                    }
                }
                Phase::Stream => {
                    if self.cursor < self.order.len() {
                        self.stream_item()?;
                    } else {
                        self.end_stream()?;
                        self.phase = Phase::Reallocation;
                    }
                }
                Phase::Reallocation => match self.realloc_queue.pop_front() {
                    Some((index, score)) => {
                        self.pending = Some(Pending {
                            index,
                            position: self.position_of[index],
                            phase: LabelPhase::Reallocation,
                            score: Some(score),
                        });
                    }
                    None => {
                        self.finish()?;
                        self.phase = Phase::Done;
                    }
                },
                Phase::Done => return Ok(Step::Done),
            }
        }
    }

    /// Accepts the human label for the pending item: charges the budget,
    /// records it and trains.
    pub fn submit(&mut self, item_id: &str, label: Label) -> Result<()> {
        let Some(pending) = &self.pending else {
            return Err(Error::WrongItem {
                expected: None,
                got: item_id.to_string(),
            });
        };
        let expected = &self.dataset.item(pending.index).id;
        if expected != item_id {
            return Err(Error::WrongItem {
                expected: Some(expected.clone()),
                got: item_id.to_string(),
            });
        }
        self.dataset.task.check_label(&label)?;
        self.ledger.charge()?;
        let pending = self.pending.take().expect("checked above");
        self.history.record(&label);
        self.train.add_human(
            item_id,
            self.features[pending.index].clone(),
            label.clone(),
        )?;
        let losses: Vec<LossReport<f64>> = if pending.phase == LabelPhase::Warmup {
            Vec::new()
        } else {
            self.train
                .train_incremental()?
                .into_iter()
                .map(LossReport::to_f64)
                .collect()
        };
        self.loss_trace.extend(losses.iter().copied());
        self.human_labels += 1;
        self.put_record(
            pending.index,
            Assignee::Human,
            label,
            pending.phase,
            pending.score,
            losses,
        );
        if self.human_labels.is_multiple_of(self.config.checkpoint_every) {
            self.events.push(Event::Checkpoint {
                checkpoint: self.checkpoint(),
            });
        }
        Ok(())
    }

    fn batch_range(&self, position: usize) -> Range<usize> {
        let bs = self.config.batch_size;
        let start = self.warmup_n + (position - self.warmup_n) / bs * bs;
        start..(start + bs).min(self.order.len())
    }

    fn round_of(&self, position: usize) -> usize {
        (position - self.warmup_n) / self.config.batch_size
    }

    fn put_record(
        &mut self,
        index: usize,
        assignee: Assignee,
        label: Label,
        phase: LabelPhase,
        score: Option<TriageScore<T>>,
        losses: Vec<LossReport<f64>>,
    ) {
        let position = self.position_of[index];
        let item_id = self.dataset.item(index).id.clone();
        if matches!(phase, LabelPhase::Stream | LabelPhase::BudgetExhausted) {
            let used = self.ledger.used();
            let round = self.round_of(position);
            if let Some(log) = self.rounds.get_mut(round) {
                match assignee {
                    Assignee::Human => log.human += 1,
                    Assignee::Model => log.model += 1,
                }
                log.budget_used = used;
            }
        }
        self.events.push(Event::Label {
            item_id: item_id.clone(),
            position,
            assignee,
            label: label.clone(),
            phase,
            budget_used: self.ledger.used(),
            losses,
        });
        self.records[index] = Some(AnnotationRecord {
            item_id,
            assignee,
            label,
            round: position,
            scores: score.map(TriageScore::to_f64),
            reallocated: phase == LabelPhase::Reallocation,
            reannotated: false,
        });
    }

    fn model_label(&self, index: usize) -> Result<Label> {
        Ok(self.predict(index)?.to_label(self.dataset.task.top_k_eval))
    }

    fn al_for(&mut self, kind: AlScorerKind, index: usize) -> Result<AlScore<T>> {
        al_score(
            kind,
            &self.train.model,
            &self.history,
            &mut self.rng,
            T::lit(self.config.temperature),
            &self.features[index],
        )
    }

    /// `sant`'s AL term in `[0, 1]`; unnormalized scorers are rank-normalized
    /// over `peers`.
    fn sant_al(&mut self, index: usize, peers: &[usize]) -> Result<AlScore<T>> {
        let kind = self.config.sant_al;
        if kind.is_normalized() {
            return self.al_for(kind, index);
        }
        let raw: Vec<T> = peers
            .iter()
            .map(|&j| self.al_for(kind, j).map(|s| s.value))
            .collect::<Result<_>>()?;
        let ranks = rank_normalize(&raw);
        let at = peers.iter().position(|&j| j == index).expect("index among peers");
        Ok(AlScore::normalized(ranks[at]))
    }

    fn eat_score(&self, index: usize, batch: &[usize]) -> Result<T> {
        let eat = self
            .train
            .eat
            .as_ref()
            .ok_or_else(|| Error::Config("method has no EAT component".into()))?;
        let refs: Vec<FeatureRef<'_, T>> = batch
            .iter()
            .map(|&j| FeatureRef {
                id: &self.dataset.item(j).id,
                features: &self.features[j],
            })
            .collect();
        let query = FeatureRef {
            id: &self.dataset.item(index).id,
            features: &self.features[index],
        };
        let input = build_eat_input(query, &refs, &self.train.model, &self.train.eat_config)?;
        eat.eat_score(&input)
    }

    fn batch_indices(&self, range: Range<usize>) -> Vec<usize> {
        self.order[range].to_vec()
    }

    fn plan_half_batch(&mut self, range: Range<usize>) -> Result<BatchPlan<T>> {
        let kind = self
            .config
            .method
            .al_kind(self.config.sant_al)
            .expect("half-batch methods have an AL scorer");
        let batch = self.batch_indices(range.clone());
        let mut scored = Vec::with_capacity(batch.len());
        let mut max_preds = Vec::with_capacity(batch.len());
        for &j in &batch {
            scored.push(TriageScore::al_only(self.al_for(kind, j)?));
            max_preds.push(self.predict(j)?.max_prob());
        }
        let ids: Vec<(&str, TriageScore<T>)> = batch
            .iter()
            .zip(&scored)
            .map(|(&j, s)| (self.dataset.item(j).id.as_str(), *s))
            .collect();
        let decisions = decide_half_batch(&ids).into_iter().zip(max_preds).collect();
        Ok(BatchPlan { range, decisions })
    }

    /// Score and route one item under the current model.
    fn decide(&mut self, index: usize, position: usize, range: Range<usize>) -> Result<(TriageDecision<T>, T)> {
        let n = self.order.len();
        let method = self.config.method;
        match method {
            Method::Random => {
                let al = score_random::<T, _>(&mut self.rng);
                let share = self.ledger.remaining() as f64 / (n - position) as f64;
                let assignee = if al.value.to_f64_lossy() < share {
                    Assignee::Human
                } else {
                    Assignee::Model
                };
                let max_pred = self.predict(index)?.max_prob();
                Ok((
                    TriageDecision {
                        assignee,
                        rule: DecisionRule::Proportional,
                        score: TriageScore::al_only(al),
                    },
                    max_pred,
                ))
            }
            Method::Maxent | Method::MaxentCal => {
                let calibrated = method == Method::MaxentCal;
                let temperature = T::lit(self.config.temperature);
                let x = &self.features[index];
                let pred = if calibrated {
                    self.train.model.predict_calibrated(x, temperature)?
                } else {
                    self.train.model.predict(x)?
                };
                let al = score_max_entropy(&self.train.model, x, calibrated.then_some(temperature))?;
                let max_pred = pred.max_prob();
                Ok((decide_uncertainty_dynamic(TriageScore::al_only(al), max_pred), max_pred))
            }
            Method::Sant | Method::SantNoAl => {
                let batch = self.batch_indices(range);
                let eat = self.eat_score(index, &batch)?;
                let score = if method == Method::Sant {
                    let al = self.sant_al(index, &batch)?;
                    bi_score(al, eat, position, n, &self.config.bi_weight)?
                } else {
                    TriageScore::eat_only(eat)
                };
                let max_pred = self.predict(index)?.max_prob();
                Ok((decide_threshold(score), max_pred))
            }
            Method::EntGn | Method::ExpGn | Method::SantNoEat => {
                unreachable!("half-batch methods are planned per batch")
            }
        }
    }

    fn stream_item(&mut self) -> Result<()> {
        let position = self.cursor;
        let index = self.order[position];
        let range = self.batch_range(position);
        if position == range.start {
            self.rounds.push(RoundLog {
                round: self.round_of(position),
                start: position,
                items: range.len(),
                human: 0,
                model: 0,
                budget_used: self.ledger.used(),
            });
            self.plan = None;
            if self.config.method.rule() == DecisionRule::HalfBatch && !self.ledger.is_exhausted() {
                self.plan = Some(self.plan_half_batch(range.clone())?);
            }
        }
        self.cursor += 1;
        if self.ledger.is_exhausted() {
            let label = self.model_label(index)?;
            self.put_record(index, Assignee::Model, label, LabelPhase::BudgetExhausted, None, Vec::new());
            return Ok(());
        }
        let (decision, max_pred) = match &self.plan {
            Some(plan) if plan.range == range => plan.decisions[position - range.start],
            _ => self.decide(index, position, range)?,
        };
        self.events.push(Event::Decision {
            item_id: self.dataset.item(index).id.clone(),
            position,
            assignee: decision.assignee,
            rule: decision.rule,
            scores: decision.score.to_f64(),
            max_pred: max_pred.to_f64_lossy(),
        });
        match decision.assignee {
            Assignee::Human => {
                self.pending = Some(Pending {
                    index,
                    position,
                    phase: LabelPhase::Stream,
                    score: Some(decision.score),
                });
            }
            Assignee::Model => {
                let label = self.model_label(index)?;
                self.put_record(index, Assignee::Model, label, LabelPhase::Stream, Some(decision.score), Vec::new());
            }
        }
        Ok(())
    }

    /// Final triage scores of the model-annotated items, used to rank them
    /// for re-allocation. EAT neighbors come from each item's own batch.
    fn final_scores(&mut self, candidates: &[usize]) -> Result<Vec<TriageScore<T>>> {
        let n = self.order.len();
        let method = self.config.method;
        let al_values: Option<Vec<AlScore<T>>> = match method.al_kind(self.config.sant_al) {
            None => None,
            Some(kind) => {
                let raw: Vec<AlScore<T>> = candidates
                    .iter()
                    .map(|&j| self.al_for(kind, j))
                    .collect::<Result<_>>()?;
                if method == Method::Sant && !kind.is_normalized() {
                    let values: Vec<T> = raw.iter().map(|s| s.value).collect();
                    Some(rank_normalize(&values).into_iter().map(AlScore::normalized).collect())
                } else {
                    Some(raw)
                }
            }
        };
        let mut out = Vec::with_capacity(candidates.len());
        for (c, &j) in candidates.iter().enumerate() {
            let al = al_values.as_ref().map(|v| v[c]);
            let score = if method.uses_eat() {
                let batch = self.batch_indices(self.batch_range(self.position_of[j]));
                let eat = self.eat_score(j, &batch)?;
                match al {
                    Some(al) => bi_score(al, eat, n, n, &self.config.bi_weight)?,
                    None => TriageScore::eat_only(eat),
                }
            } else {
                TriageScore::al_only(al.expect("non-EAT methods have an AL scorer"))
            };
            out.push(score);
        }
        Ok(out)
    }

    fn end_stream(&mut self) -> Result<()> {
        let model_after_exhaustion = self
            .events
            .iter()
            .filter(|e| matches!(e, Event::Label { phase: LabelPhase::BudgetExhausted, .. }))
            .count();
        let remaining = self.ledger.remaining();
        let candidates: Vec<usize> = self
            .records
            .iter()
            .enumerate()
            .filter(|(_, r)| r.as_ref().is_some_and(|r| r.assignee == Assignee::Model))
            .map(|(i, _)| i)
            .collect();
        if remaining == 0 {
            self.terminal = Some(Terminal::BudgetExhausted {
                model_after_exhaustion,
            });
            return Ok(());
        }
        let scores = self.final_scores(&candidates)?;
        let ranked: Vec<(String, T)> = candidates
            .iter()
            .zip(&scores)
            .map(|(&j, s)| (self.dataset.item(j).id.clone(), s.bi))
            .collect();
        let chosen = reallocate(remaining, &ranked);
        self.terminal = Some(Terminal::DataExhausted {
            remaining_budget: remaining,
            model_annotated: candidates.len(),
            reallocated: chosen.len(),
        });
        for id in chosen {
            let index = self.dataset.position(&id).expect("candidate from dataset");
            let c = candidates.iter().position(|&j| j == index).expect("chosen candidate");
            self.realloc_queue.push_back((index, scores[c]));
        }
        Ok(())
    }

    fn finish(&mut self) -> Result<()> {
        match self.config.post_hoc {
            PostHoc::None => {}
            PostHoc::Reannotate => {
                self.reannotate()?;
            }
            PostHoc::RetrainReannotate => {
                if !self.train.human_data().is_empty() {
                    if let Some(loss) = self.train.retrain_model(self.config.retrain_epochs)? {
                        self.loss_trace.push(LossReport {
                            l_f: loss.to_f64_lossy(),
                            total: loss.to_f64_lossy(),
                            ..LossReport::default()
                        });
                    }
                }
                self.reannotate()?;
            }
        }
        self.events.push(Event::Checkpoint {
            checkpoint: self.checkpoint(),
        });
        Ok(())
    }

    /// Re-predicts every model record with the final model.
    pub fn reannotate(&mut self) -> Result<usize> {
        let records: Vec<AnnotationRecord> = self.records.iter().flatten().cloned().collect();
        let features = &self.features;
        let dataset = &self.dataset;
        let updated = crate::triage::post_hoc_reannotate(&self.train.model, records, |id| {
            dataset.position(id).map(|i| features[i].as_slice())
        })?;
        let mut touched = 0;
        for r in updated {
            let index = self.dataset.position(&r.item_id).expect("record of dataset item");
            if r.reannotated && r.assignee == Assignee::Model {
                touched += 1;
                self.events.push(Event::Label {
                    item_id: r.item_id.clone(),
                    position: self.position_of[index],
                    assignee: Assignee::Model,
                    label: r.label.clone(),
                    phase: LabelPhase::PostHoc,
                    budget_used: self.ledger.used(),
                    losses: Vec::new(),
                });
            }
            self.records[index] = Some(r);
        }
        Ok(touched)
    }

    /// Human labels in the order they were accepted, recovered from an event log.
    pub fn human_labels_from_events(events: &[Event]) -> Vec<(String, Label)> {
        events
            .iter()
            .filter_map(|e| match e {
                Event::Label {
                    item_id,
                    assignee: Assignee::Human,
                    label,
                    ..
                } => Some((item_id.clone(), label.clone())),
                _ => None,
            })
            .collect()
    }

}
