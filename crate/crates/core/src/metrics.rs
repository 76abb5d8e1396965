//! Annotation quality against ground truth.

use crate::dataset::Oracle;
use crate::error::{Error, Result};
use crate::record::AnnotationRecord;
use crate::task::{Label, TaskSpec};

/// Fraction of records whose label equals the ground truth.
pub fn metric_accuracy<'a>(
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
    oracle: &Oracle,
) -> Result<f64> {
    let (correct, total) = count_correct(records, oracle)?;
    if total == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(correct as f64 / total as f64)
}

/// `(records equal to ground truth, records)`.
pub fn count_correct<'a>(
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
    oracle: &Oracle,
) -> Result<(usize, usize)> {
    let mut correct = 0;
    let mut total = 0;
    for r in records {
        if oracle.reveal(&r.item_id)? == &r.label {
            correct += 1;
        }
        total += 1;
    }
    Ok((correct, total))
}

/// Hit ratio of one predicted tag set (at most ten tags) against the truth:
/// `|predicted ∩ true| / min(10, |true|)`. An empty truth counts as a hit.
pub fn hit_ratio(predicted: &Label, truth: &Label, k: usize) -> f64 {
    let (Some(pred), Some(truth)) = (predicted.tag_set(), truth.tag_set()) else {
        return 0.0;
    };
    let denom = k.min(truth.len());
    if denom == 0 {
        return 1.0;
    }
    pred.intersection(truth).count().min(denom) as f64 / denom as f64
}

/// Mean hit ratio at `task.top_k_eval` (10 by default); human records score 1.
pub fn metric_hr_at_10<'a>(
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
    oracle: &Oracle,
    task: &TaskSpec,
) -> Result<f64> {
    if !task.task_kind.is_multilabel() {
        return Err(Error::WrongTaskKind {
            expected: "multilabel",
        });
    }
    let mut sum = 0.0;
    let mut total = 0usize;
    for r in records {
        sum += if r.is_human() {
            1.0
        } else {
            hit_ratio(&r.label, oracle.reveal(&r.item_id)?, task.top_k_eval)
        };
        total += 1;
    }
    if total == 0 {
        return Err(Error::EmptyBatch);
    }
    Ok(sum / total as f64)
}

/// The task's quality metric: HR@10 for multilabel tasks, accuracy otherwise.
pub fn quality<'a>(
    records: impl IntoIterator<Item = &'a AnnotationRecord>,
    oracle: &Oracle,
    task: &TaskSpec,
) -> Result<f64> {
    if task.task_kind.is_multilabel() {
        metric_hr_at_10(records, oracle, task)
    } else {
        metric_accuracy(records, oracle)
    }
}
