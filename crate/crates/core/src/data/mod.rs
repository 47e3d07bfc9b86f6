//! Desk-scale classification tasks and the six-way split used by the search:
//! teacher train/val, student train/val, an unlabeled pool and a test set.

mod csv_io;
mod generate;

pub use csv_io::{load_csv, write_labeled_csv, write_unlabeled_csv, Dataset};
pub use generate::{generate, Family, SplitSizes, TaskSpec, MAX_STREAM_LEN};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{one_hot, AutodiffError, Tensor};

#[derive(Debug, Error)]
pub enum DataError {
    #[error("invalid task spec: {0}")]
    InvalidSpec(String),
    #[error("requested {requested} samples, generator capacity is {capacity}")]
    Capacity { requested: usize, capacity: usize },
    #[error("line {line}: {message}")]
    Parse { line: u64, message: String },
    #[error("{0}")]
    Inconsistent(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
}

/// Inputs with integer class labels. `ids` identify examples across splits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub ids: Vec<usize>,
    pub dim: usize,
    pub features: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Inputs only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnlabeledSet {
    pub ids: Vec<usize>,
    pub dim: usize,
    pub features: Vec<f64>,
}

fn features_tensor(dim: usize, features: &[f64]) -> Result<Tensor, DataError> {
    if features.is_empty() {
        return Err(DataError::Inconsistent("empty example set".into()));
    }
    Ok(Tensor::matrix(features.len() / dim, dim, features.to_vec())?)
}

impl LabeledSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    /// `[n, dim]` input matrix; errors on an empty set.
    pub fn inputs(&self) -> Result<Tensor, DataError> {
        features_tensor(self.dim, &self.features)
    }

    pub fn targets(&self, num_classes: usize) -> Result<Tensor, DataError> {
        Ok(one_hot(&self.labels, num_classes)?)
    }

    pub fn subset(&self, indices: &[usize]) -> LabeledSet {
        let mut out = LabeledSet {
            ids: Vec::with_capacity(indices.len()),
            dim: self.dim,
            features: Vec::with_capacity(indices.len() * self.dim),
            labels: Vec::with_capacity(indices.len()),
        };
        for &i in indices {
            out.ids.push(self.ids[i]);
            out.features.extend_from_slice(self.row(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    pub fn concat(&self, other: &LabeledSet) -> LabeledSet {
        let mut out = self.clone();
        out.ids.extend_from_slice(&other.ids);
        out.features.extend_from_slice(&other.features);
        out.labels.extend_from_slice(&other.labels);
        out
    }

    /// Drops the labels.
    pub fn unlabeled(&self) -> UnlabeledSet {
        UnlabeledSet {
            ids: self.ids.clone(),
            dim: self.dim,
            features: self.features.clone(),
        }
    }
}

impl UnlabeledSet {
    pub fn empty(dim: usize) -> Self {
        UnlabeledSet {
            ids: Vec::new(),
            dim,
            features: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn inputs(&self) -> Result<Tensor, DataError> {
        features_tensor(self.dim, &self.features)
    }

    pub fn subset(&self, indices: &[usize]) -> UnlabeledSet {
        let mut out = UnlabeledSet {
            ids: Vec::with_capacity(indices.len()),
            dim: self.dim,
            features: Vec::with_capacity(indices.len() * self.dim),
        };
        for &i in indices {
            out.ids.push(self.ids[i]);
            out.features.extend_from_slice(self.row(i));
        }
        out
    }
}

/// The five search datasets plus a held-out test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DataBundle {
    pub teacher_train: LabeledSet,
    pub teacher_val: LabeledSet,
    pub student_train: LabeledSet,
    pub student_val: LabeledSet,
    pub unlabeled: UnlabeledSet,
    pub test: LabeledSet,
    pub num_classes: usize,
    pub feature_dim: usize,
}

impl DataBundle {
    /// Assembles a bundle from independently loaded sets, renumbering ids so
    /// that they are unique across splits.
    pub fn from_sets(
        mut teacher_train: LabeledSet,
        mut teacher_val: LabeledSet,
        mut student_train: LabeledSet,
        mut student_val: LabeledSet,
        mut unlabeled: UnlabeledSet,
        mut test: LabeledSet,
        num_classes: usize,
    ) -> Result<Self, DataError> {
        let dim = teacher_train.dim;
        let mut next = 0;
        let mut renumber = |ids: &mut Vec<usize>| {
            for id in ids.iter_mut() {
                *id = next;
                next += 1;
            }
        };
        renumber(&mut teacher_train.ids);
        renumber(&mut teacher_val.ids);
        renumber(&mut student_train.ids);
        renumber(&mut student_val.ids);
        renumber(&mut unlabeled.ids);
        renumber(&mut test.ids);
        let bundle = DataBundle {
            teacher_train,
            teacher_val,
            student_train,
            student_val,
            unlabeled,
            test,
            num_classes,
            feature_dim: dim,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    pub fn labeled_sets(&self) -> [(&'static str, &LabeledSet); 5] {
        [
            ("teacher_train", &self.teacher_train),
            ("teacher_val", &self.teacher_val),
            ("student_train", &self.student_train),
            ("student_val", &self.student_val),
            ("test", &self.test),
        ]
    }

    /// Checks dimensions, label ranges and id disjointness.
    pub fn validate(&self) -> Result<(), DataError> {
        let mut seen = std::collections::HashSet::new();
        for (name, set) in self.labeled_sets() {
            if set.dim != self.feature_dim {
                return Err(DataError::Inconsistent(format!(
                    "{name} has feature dim {}, expected {}",
                    set.dim, self.feature_dim
                )));
            }
            if let Some(&bad) = set.labels.iter().find(|&&y| y >= self.num_classes) {
                return Err(DataError::Inconsistent(format!(
                    "{name} has label {bad} outside [0, {})",
                    self.num_classes
                )));
            }
            for &id in &set.ids {
                if !seen.insert(id) {
                    return Err(DataError::Inconsistent(format!("example id {id} appears twice")));
                }
            }
        }
        if self.unlabeled.dim != self.feature_dim {
            return Err(DataError::Inconsistent("unlabeled feature dim mismatch".into()));
        }
        for &id in &self.unlabeled.ids {
            if !seen.insert(id) {
                return Err(DataError::Inconsistent(format!("example id {id} appears twice")));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests;
