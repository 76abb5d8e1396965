//! Datasets, the ground-truth oracle that stands in for the human, JSONL
//! ingestion and a synthetic Gaussian-mixture generator.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::{Item, Label, TaskKind, TaskSpec};

/// Items of one task, in stream order. Carries no ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub task: TaskSpec,
    items: Vec<Item>,
    index: HashMap<String, usize>,
}

impl Dataset {
    pub fn new(task: TaskSpec, items: Vec<Item>) -> Result<Self> {
        task.validate()?;
        let mut index = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if item.features.len() != task.feature_dim {
                return Err(Error::DimensionMismatch {
                    expected: task.feature_dim,
                    got: item.features.len(),
                });
            }
            if index.insert(item.id.clone(), i).is_some() {
                return Err(Error::DuplicateId(item.id.clone()));
            }
        }
        Ok(Dataset { task, items, index })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, index: usize) -> &Item {
        &self.items[index]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.position(id).map(|i| &self.items[i])
    }
}

/// Hidden ground truth. In simulation it plays the human: every reveal
/// returns the stored label exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Oracle {
    labels: HashMap<String, Label>,
}

impl Oracle {
    pub fn new(labels: HashMap<String, Label>) -> Self {
        Oracle { labels }
    }

    pub fn reveal(&self, id: &str) -> Result<&Label> {
        self.labels
            .get(id)
            .ok_or_else(|| Error::MissingGroundTruth(id.to_string()))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// True when every item of `dataset` has a label.
    pub fn covers(&self, dataset: &Dataset) -> bool {
        dataset.items().iter().all(|it| self.labels.contains_key(&it.id))
    }
}

/// A dataset together with whatever ground truth its source carried.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub dataset: Dataset,
    /// Absent when no row carried a label.
    pub oracle: Option<Oracle>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JsonlRow {
    pub id: String,
    pub features: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<Label>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
}

fn infer_task(labels: &[&Label], feature_dim: usize) -> Result<TaskSpec> {
    let mut max = 0usize;
    let mut multilabel = None;
    for label in labels {
        let (is_tags, hi) = match label {
            Label::Class(c) => (false, *c),
            Label::Tags(t) => (true, t.iter().next_back().copied().unwrap_or(0)),
        };
        match multilabel {
            None => multilabel = Some(is_tags),
            Some(m) if m != is_tags => {
                return Err(Error::InvalidSpec(
                    "labels mix class indices and tag lists".into(),
                ))
            }
            _ => {}
        }
        max = max.max(hi);
    }
    let classes = (max + 1).max(2);
    Ok(match multilabel {
        Some(true) => TaskSpec::multilabel(classes, feature_dim),
        _ if classes == 2 => TaskSpec::binary(feature_dim),
        _ => TaskSpec::multiclass(classes, feature_dim),
    })
}

/// Parses JSONL rows. With `task` unset it is inferred from the labels:
/// tag lists give a multilabel task, class indices a binary (max index 1)
/// or multiclass task.
pub fn parse_jsonl<R: Read>(reader: R, task: Option<TaskSpec>) -> Result<LabeledDataset> {
    let mut rows = Vec::new();
    let mut ids = HashSet::new();
    let mut dim = None;
    for (i, line) in BufReader::new(reader).lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let row: JsonlRow = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: line_no,
            message: e.to_string(),
        })?;
        let expected = *dim.get_or_insert(row.features.len());
        if row.features.len() != expected {
            return Err(Error::RowDimension {
                line: line_no,
                expected,
                got: row.features.len(),
            });
        }
        if let Some(bad) = row.features.iter().find(|v| !v.is_finite()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("non-finite feature {bad}"),
            });
        }
        if !ids.insert(row.id.clone()) {
            return Err(Error::DuplicateId(row.id));
        }
        rows.push((line_no, row));
    }
    let Some(dim) = dim else {
        return Err(Error::Parse {
            line: 0,
            message: "no items".into(),
        });
    };
    if dim == 0 {
        return Err(Error::Parse {
            line: 1,
            message: "empty feature vector".into(),
        });
    }
    let task = match task {
        Some(t) => t,
        None => {
            let labels: Vec<&Label> = rows.iter().filter_map(|(_, r)| r.label.as_ref()).collect();
            if labels.is_empty() {
                return Err(Error::InvalidSpec(
                    "cannot infer the task without labels".into(),
                ));
            }
            infer_task(&labels, dim)?
        }
    };
    let mut labels = HashMap::new();
    let mut items = Vec::with_capacity(rows.len());
    for (line_no, row) in rows {
        if let Some(label) = row.label {
            task.check_label(&label).map_err(|e| Error::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
            labels.insert(row.id.clone(), label);
        }
        items.push(Item {
            id: row.id,
            features: row.features,
            display_payload: row.text,
        });
    }
    let oracle = (!labels.is_empty()).then(|| Oracle::new(labels));
    Ok(LabeledDataset {
        dataset: Dataset::new(task, items)?,
        oracle,
    })
}

/// Parses rows for a task of the given kind; the feature dimension is taken
/// from the first row. Needed when the rows carry no labels to infer from.
pub fn parse_jsonl_as<R: Read>(mut reader: R, kind: TaskKind, num_classes: usize) -> Result<LabeledDataset> {
    let mut text = String::new();
    reader.read_to_string(&mut text).map_err(|e| Error::io("<jsonl>", e))?;
    let dim = match text.lines().enumerate().find(|(_, l)| !l.trim().is_empty()) {
        Some((i, line)) => {
            serde_json::from_str::<JsonlRow>(line)
                .map_err(|e| Error::Parse {
                    line: i + 1,
                    message: e.to_string(),
                })?
                .features
                .len()
        }
        None => 0,
    };
    let task = TaskSpec::of_kind(kind, num_classes, dim.max(1))?;
    parse_jsonl(text.as_bytes(), Some(task))
}

pub fn ingest_jsonl(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(file, None)
}

impl LabeledDataset {
    pub fn rows(&self) -> Vec<JsonlRow> {
        self.dataset
            .items()
            .iter()
            .map(|it| JsonlRow {
                id: it.id.clone(),
                features: it.features.clone(),
                label: self
                    .oracle
                    .as_ref()
                    .and_then(|o| o.reveal(&it.id).ok().cloned()),
                text: it.display_payload.clone(),
            })
            .collect()
    }

    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for row in self.rows() {
            serde_json::to_writer(&mut out, &row)?;
            out.write_all(b"\n").map_err(|e| Error::io("<jsonl>", e))?;
        }
        Ok(())
    }

    /// Writes `dataset.jsonl` and `task.json` into `dir`.
    pub fn save_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let data = dir.join("dataset.jsonl");
        let file = fs::File::create(&data).map_err(|e| Error::io(&data, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_jsonl(&mut w)?;
        w.flush().map_err(|e| Error::io(&data, e))?;
        let task = dir.join("task.json");
        fs::write(&task, serde_json::to_vec_pretty(&self.dataset.task)?)
            .map_err(|e| Error::io(&task, e))?;
        Ok(())
    }

    /// Loads either a directory written by [`Self::save_dir`] or a bare JSONL file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if path.is_dir() {
            let task_path = path.join("task.json");
            let raw = fs::read(&task_path).map_err(|e| Error::io(&task_path, e))?;
            let task: TaskSpec = serde_json::from_slice(&raw)?;
            let data = path.join("dataset.jsonl");
            let file = fs::File::open(&data).map_err(|e| Error::io(&data, e))?;
            parse_jsonl(file, Some(task))
        } else {
            ingest_jsonl(path)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Fraction of items drawn from the overlap cluster, whose labels are
    /// uniformly random.
    pub hard_frac: f64,
    /// Distance of each class center from the origin.
    pub separation: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n: 2000,
            num_classes: 2,
            feature_dim: 8,
            hard_frac: 0.2,
            separation: 2.5,
            seed: 0,
        }
    }
}

/// Gaussian mixture with one unit-variance cluster per class and an overlap
/// cluster for the hard items. Class `c` is centered at `separation` along
/// axis `c` (binary: `+-separation` along axis 0). The overlap cluster sits on
/// the class boundary, offset along the last axis, and draws its labels
/// uniformly, so no annotator model can beat chance on it.
pub fn synth_gaussian(config: &SynthConfig) -> Result<LabeledDataset> {
    let SynthConfig {
        n,
        num_classes: c,
        feature_dim: d,
        hard_frac,
        separation,
        seed,
    } = *config;
    if n == 0 {
        return Err(Error::Config("synthetic dataset needs at least one item".into()));
    }
    if c < 2 || d < c.max(2) {
        return Err(Error::Config(format!(
            "need at least 2 classes and feature_dim >= classes, got {c} classes in {d} dims"
        )));
    }
    if !(0.0..=1.0).contains(&hard_frac) {
        return Err(Error::Config(format!("hard fraction {hard_frac} outside [0, 1]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_hard = (hard_frac * n as f64).round() as usize;
    let mut is_hard: Vec<bool> = (0..n).map(|i| i < n_hard).collect();
    is_hard.shuffle(&mut rng);

    let center = |class: usize| -> Vec<f64> {
        let mut v = vec![0.0; d];
        if c == 2 {
            v[0] = if class == 0 { -separation } else { separation };
        } else {
            v[class] = separation;
        }
        v
    };
    let hard_center: Vec<f64> = {
        let mut v = if c == 2 {
            vec![0.0; d]
        } else {
            (0..d).map(|j| if j < c { separation / c as f64 } else { 0.0 }).collect()
        };
        v[d - 1] += separation;
        v
    };
    let width = (n.max(1) - 1).to_string().len().max(4);
    let mut items = Vec::with_capacity(n);
    let mut labels = HashMap::with_capacity(n);
    for (i, &hard) in is_hard.iter().enumerate() {
        let class = rng.gen_range(0..c);
        let (mu, spread) = if hard {
            (hard_center.clone(), 0.5)
        } else {
            (center(class), 1.0)
        };
        let features: Vec<f64> = mu
            .iter()
            .map(|&m| m + spread * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let id = format!("x{i:0width$}");
        labels.insert(id.clone(), Label::Class(class));
        items.push(Item {
            id,
            features,
            display_payload: Some(format!("synthetic item {i}{}", if hard { " (overlap)" } else { "" })),
        });
    }
    let task = if c == 2 {
        TaskSpec::binary(d)
    } else {
        TaskSpec::multiclass(c, d)
    };
    Ok(LabeledDataset {
        dataset: Dataset::new(task, items)?,
        oracle: Some(Oracle::new(labels)),
    })
}
