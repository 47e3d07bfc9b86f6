use super::{AutodiffError, Graph, Tensor, Var};

/// Floor applied to predicted probabilities before taking the log.
pub const LOG_FLOOR: f64 = 1e-12;

/// Tolerance on target row sums.
pub const DISTRIBUTION_TOLERANCE: f64 = 1e-6;

fn check_targets(target: &Tensor) -> Result<(), AutodiffError> {
    let k = target.cols();
    for (row, values) in target.data().chunks(k).enumerate() {
        let sum: f64 = values.iter().sum();
        if values.iter().any(|&t| t < 0.0) || (sum - 1.0).abs() > DISTRIBUTION_TOLERANCE {
            return Err(AutodiffError::NotADistribution { row, sum });
        }
    }
    Ok(())
}

/// `-sum_k target_k * ln(max(pred_k, LOG_FLOOR))`, averaged over rows.
///
/// Accepts a single K-vector or an `[n, K]` batch.
pub fn soft_cross_entropy(pred: &Tensor, target: &Tensor) -> Result<f64, AutodiffError> {
    if pred.shape() != target.shape() {
        return Err(AutodiffError::ShapeMismatch {
            op: "soft_cross_entropy",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    check_targets(target)?;
    let total: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| -t * p.max(LOG_FLOOR).ln())
        .sum();
    Ok(total / pred.rows() as f64)
}

impl Graph {
    /// Graph form of [`soft_cross_entropy`]; differentiable in both arguments.
    pub fn soft_cross_entropy(&mut self, pred: Var, target: Var) -> Result<Var, AutodiffError> {
        let (tp, tt) = (self.value(pred), self.value(target));
        if tp.shape() != tt.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "soft_cross_entropy",
                left: tp.shape().to_vec(),
                right: tt.shape().to_vec(),
            });
        }
        check_targets(tt)?;
        let rows = tp.rows() as f64;
        let clamped = self.clamp_min(pred, LOG_FLOOR)?;
        let logs = self.log(clamped)?;
        let weighted = self.mul(target, logs)?;
        let total = self.sum_all(weighted)?;
        self.scale(total, -1.0 / rows)
    }
}

/// One-hot `[n, K]` matrix for integer labels.
pub fn one_hot(labels: &[usize], num_classes: usize) -> Result<Tensor, AutodiffError> {
    let mut data = vec![0.0; labels.len() * num_classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= num_classes {
            return Err(AutodiffError::LabelOutOfRange {
                label: y,
                num_classes,
            });
        }
        data[i * num_classes + y] = 1.0;
    }
    Tensor::matrix(labels.len(), num_classes, data)
}
