//! Human/model routing: bi-weighting of the AL and EAT scores, the per-method
//! decision rules, end-of-run re-allocation and post-hoc re-annotation.

use serde::{Deserialize, Serialize};

use crate::al::AlScore;
use crate::error::{Error, Result};
use crate::model::AnnotatorModel;
use crate::record::{AnnotationRecord, Assignee};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BiWeightConfig {
    /// Annotated fraction at which the AL exponent equals one.
    pub t0: f64,
}

impl Default for BiWeightConfig {
    fn default() -> Self {
        BiWeightConfig { t0: 0.2 }
    }
}

/// Scores behind one triage decision. For methods without an EAT component
/// `eat` and `eta` are absent and `bi` equals the AL value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TriageScore<T> {
    pub al: Option<AlScore<T>>,
    pub eat: Option<T>,
    pub eta: Option<T>,
    pub bi: T,
}

impl<T: Scalar> TriageScore<T> {
    pub fn al_only(al: AlScore<T>) -> Self {
        TriageScore {
            al: Some(al),
            eat: None,
            eta: None,
            bi: al.value,
        }
    }

    pub fn eat_only(eat: T) -> Self {
        TriageScore {
            al: None,
            eat: Some(eat),
            eta: None,
            bi: eat,
        }
    }

    pub fn to_f64(self) -> TriageScore<f64> {
        TriageScore {
            al: self.al.map(AlScore::to_f64),
            eat: self.eat.map(Scalar::to_f64_lossy),
            eta: self.eta.map(Scalar::to_f64_lossy),
            bi: self.bi.to_f64_lossy(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionRule {
    /// Human iff the score is at least 0.5.
    Threshold,
    /// Human iff `(1 - al) * max_pred < al`.
    UncertaintyDynamic,
    /// Top half of each batch by score goes to the human.
    HalfBatch,
    /// Human with probability `remaining budget / remaining items`.
    Proportional,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct TriageDecision<T> {
    pub assignee: Assignee,
    pub rule: DecisionRule,
    pub score: TriageScore<T>,
}

/// `eta(t) = exp(t / |X| - T0)`.
pub fn eta<T: Scalar>(t: usize, dataset_size: usize, t0: T) -> T {
    let tau = T::from_usize_lossy(t) / T::from_usize_lossy(dataset_size.max(1));
    (tau - t0).exp()
}

/// `al^eta * eat`.
pub fn bi_weight<T: Scalar>(al: T, eat: T, eta: T) -> Result<T> {
    let unit = |v: T| v >= T::zero() && v <= T::one();
    if !unit(al) || !unit(eat) {
        return Err(Error::Domain(format!(
            "bi-weighting needs al, eat in [0, 1]; got al={al}, eat={eat}"
        )));
    }
    if !(eta > T::zero()) {
        return Err(Error::Domain(format!("eta must be positive, got {eta}")));
    }
    Ok(al.powf(eta) * eat)
}

/// Bi-weighted score of an item at stream position `t`.
pub fn bi_score<T: Scalar>(
    al: AlScore<T>,
    eat: T,
    t: usize,
    dataset_size: usize,
    config: &BiWeightConfig,
) -> Result<TriageScore<T>> {
    let eta = eta(t.min(dataset_size), dataset_size, T::lit(config.t0));
    let bi = bi_weight(al.value, eat, eta)?;
    Ok(TriageScore {
        al: Some(al),
        eat: Some(eat),
        eta: Some(eta),
        bi,
    })
}

pub fn threshold_assignee<T: Scalar>(score: T) -> Assignee {
    if score >= T::lit(0.5) {
        Assignee::Human
    } else {
        Assignee::Model
    }
}

pub fn dynamic_assignee<T: Scalar>(al: T, max_pred: T) -> Assignee {
    if (T::one() - al) * max_pred < al {
        Assignee::Human
    } else {
        Assignee::Model
    }
}

pub fn decide_threshold<T: Scalar>(score: TriageScore<T>) -> TriageDecision<T> {
    TriageDecision {
        assignee: threshold_assignee(score.bi),
        rule: DecisionRule::Threshold,
        score,
    }
}

pub fn decide_uncertainty_dynamic<T: Scalar>(score: TriageScore<T>, max_pred: T) -> TriageDecision<T> {
    TriageDecision {
        assignee: dynamic_assignee(score.al.map_or(score.bi, |a| a.value), max_pred),
        rule: DecisionRule::UncertaintyDynamic,
        score,
    }
}

/// Assigns the `ceil(n / 2)` highest-`bi` items to the human (ties by
/// ascending id). Decisions come back in input order.
pub fn decide_half_batch<T: Scalar>(batch: &[(&str, TriageScore<T>)]) -> Vec<TriageDecision<T>> {
    let n = batch.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        batch[b]
            .1
            .bi
            .partial_cmp(&batch[a].1.bi)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| batch[a].0.cmp(batch[b].0))
    });
    let mut human = vec![false; n];
    for &i in order.iter().take(n.div_ceil(2)) {
        human[i] = true;
    }
    batch
        .iter()
        .zip(human)
        .map(|((_, score), h)| TriageDecision {
            assignee: if h { Assignee::Human } else { Assignee::Model },
            rule: DecisionRule::HalfBatch,
            score: *score,
        })
        .collect()
}

/// Ids of the `min(remaining_budget, candidates)` highest-scored model
/// annotations, best first (ties by ascending id).
pub fn reallocate<T: Scalar>(remaining_budget: usize, candidates: &[(String, T)]) -> Vec<String> {
    if remaining_budget == 0 {
        return Vec::new();
    }
    let mut sorted: Vec<&(String, T)> = candidates.iter().collect();
    sorted.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then_with(|| a.0.cmp(&b.0))
    });
    sorted
        .into_iter()
        .take(remaining_budget)
        .map(|(id, _)| id.clone())
        .collect()
}

/// Re-predicts every model-sourced record with `final_model`; human records
/// pass through untouched. `features` resolves an item id to its features.
pub fn post_hoc_reannotate<'a, T: Scalar>(
    final_model: &AnnotatorModel<T>,
    records: Vec<AnnotationRecord>,
    features: impl Fn(&str) -> Option<&'a [T]>,
) -> Result<Vec<AnnotationRecord>> {
    let top_k = final_model.task.top_k_eval;
    records
        .into_iter()
        .map(|mut r| {
            if r.assignee == Assignee::Model {
                let x = features(&r.item_id).ok_or_else(|| Error::UnknownItem(r.item_id.clone()))?;
                r.label = final_model.predict(x)?.to_label(top_k);
                r.reannotated = true;
            }
            Ok(r)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Arch;
    use crate::task::{Label, TaskSpec};
    use proptest::prelude::*;

    #[test]
    fn eta_examples() {
        assert!((eta(20, 100, 0.2f64) - 1.0).abs() < 1e-15);
        assert!((eta(0, 100, 0.2f64) - (-0.2f64).exp()).abs() < 1e-15);
        assert!((eta(0, 100, 0.2f64) - 0.8187).abs() < 1e-4);
        assert!((eta(100, 100, 0.2f64) - 2.2255).abs() < 1e-4);
    }

    #[test]
    fn bi_weight_examples() {
        assert!((bi_weight(0.5f64, 0.8, 1.0).unwrap() - 0.4).abs() < 1e-15);
        for eat in [0.0, 0.3, 1.0] {
            for eta in [0.5, 1.0, 2.2] {
                assert_eq!(bi_weight(1.0f64, eat, eta).unwrap(), eat);
            }
        }
        let v = bi_weight(0.5f64, 0.8, 0.8f64.exp()).unwrap();
        assert!((v - 0.5f64.powf(0.8f64.exp()) * 0.8).abs() < 1e-15);
        assert!((v - 0.1711).abs() < 1e-4);
        assert!(matches!(bi_weight(1.2f64, 0.5, 1.0), Err(Error::Domain(_))));
        assert!(matches!(bi_weight(0.5f64, -0.1, 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn threshold_boundaries() {
        assert_eq!(threshold_assignee(0.5f64), Assignee::Human);
        assert_eq!(threshold_assignee(0.49f64), Assignee::Model);
    }

    #[test]
    fn threshold_agrees_with_two_way_argmax() {
        let mut x = 0.0f64;
        while x <= 1.0 {
            let argmax_error = x >= 1.0 - x;
            assert_eq!(threshold_assignee(x) == Assignee::Human, argmax_error, "x={x}");
            x += 1.0 / 1024.0;
        }
    }

    #[test]
    fn dynamic_rule_examples() {
        assert_eq!(dynamic_assignee(0.6f64, 0.7), Assignee::Human);
        assert_eq!(dynamic_assignee(0.0f64, 0.7), Assignee::Model);
        assert_eq!(dynamic_assignee(0.0f64, 0.0), Assignee::Model);
    }

    fn bare(bi: f64) -> TriageScore<f64> {
        TriageScore { al: None, eat: None, eta: None, bi }
    }

    #[test]
    fn half_batch_examples() {
        let batch = [("a", bare(0.1)), ("b", bare(0.9)), ("c", bare(0.5)), ("d", bare(0.7))];
        let d: Vec<Assignee> = decide_half_batch(&batch).iter().map(|d| d.assignee).collect();
        assert_eq!(d, [Assignee::Model, Assignee::Human, Assignee::Model, Assignee::Human]);

        let equal = [("c", bare(0.3)), ("a", bare(0.3)), ("b", bare(0.3))];
        let d: Vec<Assignee> = decide_half_batch(&equal).iter().map(|d| d.assignee).collect();
        assert_eq!(d, [Assignee::Model, Assignee::Human, Assignee::Human]);

        let one = [("z", bare(0.0))];
        assert_eq!(decide_half_batch(&one)[0].assignee, Assignee::Human);
    }

    #[test]
    fn reallocate_examples() {
        let c: Vec<(String, f64)> = [("a", 0.2), ("b", 0.9), ("c", 0.4), ("d", 0.7), ("e", 0.1)]
            .iter()
            .map(|(i, s)| (i.to_string(), *s))
            .collect();
        assert!(reallocate(0, &c).is_empty());
        assert_eq!(reallocate(2, &c), vec!["b", "d"]);
        assert_eq!(reallocate(10, &c), vec!["b", "d", "c", "a", "e"]);
    }

    fn record(id: &str, assignee: Assignee, label: Label) -> AnnotationRecord {
        AnnotationRecord {
            item_id: id.into(),
            assignee,
            label,
            round: 0,
            scores: None,
            reallocated: false,
            reannotated: false,
        }
    }

    #[test]
    fn post_hoc_touches_only_model_records() {
        let mut m = AnnotatorModel::<f64>::zeros(TaskSpec::binary(1), Arch::Linear);
        m.net.layers[0].weights = vec![1.0, -1.0];
        let feats = |id: &str| -> Option<&[f64]> {
            match id {
                "pos" => Some(&[1.0][..]),
                "neg" => Some(&[-1.0][..]),
                _ => None,
            }
        };
        assert!(post_hoc_reannotate(&m, vec![], feats).unwrap().is_empty());

        let records = vec![
            record("pos", Assignee::Model, Label::Class(0)),
            record("neg", Assignee::Human, Label::Class(0)),
        ];
        let out = post_hoc_reannotate(&m, records.clone(), feats).unwrap();
        assert_eq!(out.iter().filter(|r| r.reannotated).count(), 1);
        assert_eq!(out[0].label, Label::Class(0));
        assert_eq!(out[1], records[1]);

        let stale = vec![record("neg", Assignee::Model, Label::Class(0))];
        assert_eq!(post_hoc_reannotate(&m, stale, feats).unwrap()[0].label, Label::Class(1));
    }

    proptest! {
        #[test]
        fn bi_weight_monotone_in_each_argument(
            al in 0.0f64..=1.0, eat in 0.0f64..=1.0, eta in 0.05f64..3.0, d in 0.0f64..0.5,
        ) {
            let base = bi_weight(al, eat, eta).unwrap();
            prop_assert!(bi_weight((al + d).min(1.0), eat, eta).unwrap() >= base - 1e-15);
            prop_assert!(bi_weight(al, (eat + d).min(1.0), eta).unwrap() >= base - 1e-15);
            prop_assert!(bi_weight(al, eat, eta + d).unwrap() <= base + 1e-15);
            prop_assert!((0.0..=1.0).contains(&base));
        }

        #[test]
        fn half_batch_assigns_ceil_half(scores in proptest::collection::vec(0.0f64..1.0, 1..64)) {
            let ids: Vec<String> = (0..scores.len()).map(|i| format!("i{i:03}")).collect();
            let batch: Vec<(&str, TriageScore<f64>)> = ids.iter().zip(&scores).map(|(id, &s)| (id.as_str(), bare(s))).collect();
            let humans = decide_half_batch(&batch).iter().filter(|d| d.assignee == Assignee::Human).count();
            prop_assert_eq!(humans, scores.len().div_ceil(2));
        }

        #[test]
        fn reallocate_respects_budget(budget in 0usize..20, scores in proptest::collection::vec(0.0f64..1.0, 0..15)) {
            let c: Vec<(String, f64)> = scores.iter().enumerate().map(|(i, &s)| (format!("m{i}"), s)).collect();
            let out = reallocate(budget, &c);
            prop_assert_eq!(out.len(), budget.min(c.len()));
        }
    }
}
