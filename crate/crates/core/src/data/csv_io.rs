use std::path::Path;

use super::{DataError, LabeledSet, UnlabeledSet};

/// A loaded CSV file: labeled when it has a final `label` column.
#[derive(Clone, Debug, PartialEq)]
pub enum Dataset {
    Labeled(LabeledSet),
    Unlabeled(UnlabeledSet),
}

impl Dataset {
    pub fn into_labeled(self) -> Result<LabeledSet, DataError> {
        match self {
            Dataset::Labeled(set) => Ok(set),
            Dataset::Unlabeled(_) => Err(DataError::Inconsistent("expected a `label` column".into())),
        }
    }

    /// Labels, if any, are dropped.
    pub fn into_unlabeled(self) -> UnlabeledSet {
        match self {
            Dataset::Labeled(set) => set.unlabeled(),
            Dataset::Unlabeled(set) => set,
        }
    }
}

/// Reads a header-first CSV of real-valued features with an optional final
/// integer `label` column. Row order is preserved; ids are row indices.
pub fn load_csv(path: impl AsRef<Path>, num_classes: usize) -> Result<Dataset, DataError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path.as_ref())?;
    let headers = reader.headers()?.clone();
    let columns: Vec<&str> = headers.iter().map(str::trim).collect();
    let label_pos = columns.iter().position(|&c| c == "label");
    if let Some(pos) = label_pos {
        if pos + 1 != columns.len() {
            return Err(DataError::Parse {
                line: 1,
                message: "`label` must be the final column".into(),
            });
        }
    }
    let dim = columns.len() - usize::from(label_pos.is_some());
    if dim == 0 {
        return Err(DataError::Parse {
            line: 1,
            message: "no feature columns".into(),
        });
    }

    let mut features = Vec::new();
    let mut labels = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != columns.len() {
            return Err(DataError::Parse {
                line,
                message: format!("expected {} fields, found {}", columns.len(), record.len()),
            });
        }
        for (i, cell) in record.iter().take(dim).enumerate() {
            let v: f64 = cell.trim().parse().map_err(|_| DataError::Parse {
                line,
                message: format!("column `{}`: `{cell}` is not a number", columns[i]),
            })?;
            if !v.is_finite() {
                return Err(DataError::Parse {
                    line,
                    message: format!("column `{}`: non-finite value", columns[i]),
                });
            }
            features.push(v);
        }
        if label_pos.is_some() {
            let cell = record[dim].trim();
            let y: usize = cell.parse().map_err(|_| DataError::Parse {
                line,
                message: format!("label `{cell}` is not a non-negative integer"),
            })?;
            if y >= num_classes {
                return Err(DataError::Parse {
                    line,
                    message: format!("label {y} outside [0, {num_classes})"),
                });
            }
            labels.push(y);
        }
    }

    let n = features.len() / dim;
    let ids = (0..n).collect();
    Ok(if label_pos.is_some() {
        Dataset::Labeled(LabeledSet {
            ids,
            dim,
            features,
            labels,
        })
    } else {
        Dataset::Unlabeled(UnlabeledSet { ids, dim, features })
    })
}

fn header(dim: usize, labeled: bool) -> Vec<String> {
    let mut h: Vec<String> = (0..dim).map(|i| format!("x{i}")).collect();
    if labeled {
        h.push("label".into());
    }
    h
}

// `{}` on f64 prints the shortest string that parses back to the same bits.
pub fn write_labeled_csv(path: impl AsRef<Path>, set: &LabeledSet) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(header(set.dim, true))?;
    for i in 0..set.len() {
        let mut row: Vec<String> = set.row(i).iter().map(|v| format!("{v}")).collect();
        row.push(set.labels[i].to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_unlabeled_csv(path: impl AsRef<Path>, set: &UnlabeledSet) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path.as_ref())?;
    w.write_record(header(set.dim, false))?;
    for i in 0..set.len() {
        w.write_record(set.row(i).iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}
