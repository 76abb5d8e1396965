//! Task description, items and labels.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Binary,
    Multiclass,
    Multilabel,
}

impl TaskKind {
    pub fn is_multilabel(self) -> bool {
        matches!(self, TaskKind::Multilabel)
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TaskKind::Binary => "binary",
            TaskKind::Multiclass => "multiclass",
            TaskKind::Multilabel => "multilabel",
        })
    }
}

/// Shape of an annotation task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_kind: TaskKind,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Cut-off of the hit-ratio metric and of the multilabel error indicator.
    pub top_k_eval: usize,
}

impl TaskSpec {
    pub fn new(
        task_kind: TaskKind,
        num_classes: usize,
        feature_dim: usize,
        top_k_eval: usize,
    ) -> Result<Self, Error> {
        let spec = TaskSpec {
            task_kind,
            num_classes,
            feature_dim,
            top_k_eval,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn binary(feature_dim: usize) -> Self {
        TaskSpec {
            task_kind: TaskKind::Binary,
            num_classes: 2,
            feature_dim,
            top_k_eval: 1,
        }
    }

    pub fn multiclass(num_classes: usize, feature_dim: usize) -> Self {
        TaskSpec {
            task_kind: TaskKind::Multiclass,
            num_classes,
            feature_dim,
            top_k_eval: 1,
        }
    }

    pub fn multilabel(num_classes: usize, feature_dim: usize) -> Self {
        TaskSpec {
            task_kind: TaskKind::Multilabel,
            num_classes,
            feature_dim,
            top_k_eval: 10,
        }
    }

    /// Spec with the default hit-ratio cut-off for `task_kind`, validated.
    pub fn of_kind(task_kind: TaskKind, num_classes: usize, feature_dim: usize) -> Result<Self, Error> {
        let spec = match task_kind {
            TaskKind::Binary => TaskSpec {
                num_classes,
                ..TaskSpec::binary(feature_dim)
            },
            TaskKind::Multiclass => TaskSpec::multiclass(num_classes, feature_dim),
            TaskKind::Multilabel => TaskSpec::multilabel(num_classes, feature_dim),
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.num_classes < 2 {
            return Err(Error::InvalidSpec(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if self.task_kind == TaskKind::Binary && self.num_classes != 2 {
            return Err(Error::InvalidSpec(
                "binary tasks have exactly 2 classes".into(),
            ));
        }
        if self.feature_dim == 0 {
            return Err(Error::InvalidSpec("feature_dim must be positive".into()));
        }
        if self.top_k_eval == 0 {
            return Err(Error::InvalidSpec("top_k_eval must be positive".into()));
        }
        Ok(())
    }

    /// Checks that `label` has the variant and range this task expects.
    pub fn check_label(&self, label: &Label) -> Result<(), Error> {
        match (self.task_kind, label) {
            (TaskKind::Multilabel, Label::Tags(tags)) => {
                if tags.is_empty() {
                    return Err(Error::InvalidLabel("empty tag set".into()));
                }
                if let Some(&t) = tags.iter().find(|&&t| t >= self.num_classes) {
                    return Err(Error::InvalidLabel(format!(
                        "tag {t} out of range [0, {})",
                        self.num_classes
                    )));
                }
                Ok(())
            }
            (TaskKind::Multilabel, Label::Class(_)) => Err(Error::InvalidLabel(
                "multilabel task expects a tag set".into(),
            )),
            (_, Label::Class(c)) => {
                if *c >= self.num_classes {
                    Err(Error::InvalidLabel(format!(
                        "class {c} out of range [0, {})",
                        self.num_classes
                    )))
                } else {
                    Ok(())
                }
            }
            (_, Label::Tags(_)) => Err(Error::InvalidLabel(
                "single-label task expects a class index".into(),
            )),
        }
    }
}

/// A class index, or a set of tag indices for multilabel tasks.
///
/// Serialized untagged: `3` or `[1, 4]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Label {
    Class(usize),
    Tags(BTreeSet<usize>),
}

impl Label {
    pub fn tags<I: IntoIterator<Item = usize>>(tags: I) -> Self {
        Label::Tags(tags.into_iter().collect())
    }

    pub fn class(&self) -> Option<usize> {
        match self {
            Label::Class(c) => Some(*c),
            Label::Tags(_) => None,
        }
    }

    pub fn tag_set(&self) -> Option<&BTreeSet<usize>> {
        match self {
            Label::Tags(t) => Some(t),
            Label::Class(_) => None,
        }
    }
}

/// The unit of triage. Ground truth is deliberately absent; it lives in
/// [`crate::dataset::Oracle`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub display_payload: Option<String>,
}
