//! Annotation records: who labeled an item, with what, and why.

use serde::{Deserialize, Serialize};

use crate::task::Label;
use crate::triage::TriageScore;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Assignee {
    Human,
    Model,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub item_id: String,
    pub assignee: Assignee,
    pub label: Label,
    /// Stream position at which the record was produced.
    pub round: usize,
    /// Triage scores at decision time; absent for warmup and budget-exhausted items.
    pub scores: Option<TriageScore<f64>>,
    /// Human label obtained through end-of-run re-allocation.
    #[serde(default)]
    pub reallocated: bool,
    /// Model label re-predicted after the run by the final model.
    #[serde(default)]
    pub reannotated: bool,
}

impl AnnotationRecord {
    pub fn is_human(&self) -> bool {
        self.assignee == Assignee::Human
    }
}

/// Per-category counts of the active records. They sum to the dataset size.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordCounts {
    pub human: usize,
    pub model: usize,
    pub reallocated: usize,
    pub reannotated: usize,
}

impl RecordCounts {
    pub fn tally<'a>(records: impl IntoIterator<Item = &'a AnnotationRecord>) -> Self {
        let mut c = RecordCounts::default();
        for r in records {
            match (r.assignee, r.reallocated, r.reannotated) {
                (Assignee::Human, true, _) => c.reallocated += 1,
                (Assignee::Human, false, _) => c.human += 1,
                (Assignee::Model, _, true) => c.reannotated += 1,
                (Assignee::Model, _, false) => c.model += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.human + self.model + self.reallocated + self.reannotated
    }

    /// Human annotations of any kind; each one consumed a budget unit.
    pub fn human_total(&self) -> usize {
        self.human + self.reallocated
    }

    pub fn model_total(&self) -> usize {
        self.model + self.reannotated
    }
}
