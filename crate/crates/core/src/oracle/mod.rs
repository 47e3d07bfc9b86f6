//! Ground-truth architecture gradients, independent of the engine's
//! finite-difference HVP machinery, and the metrics used to judge it.
//!
//! Two references are provided: coordinate-wise central differences of the
//! outer objective (every evaluation redoes both virtual steps and the
//! pseudo-labels) and reverse mode straight through the virtual steps.

use std::fmt;

use rayon::prelude::*;
use thiserror::Error;

use crate::autodiff::l2_norm;
use crate::engine::{combine_arch_grads, EngineError, LbtInstance};

/// Default coordinate step.
pub const DEFAULT_FD_STEP: f64 = 1e-4;
/// Default parameter ceiling for the unrolled oracle.
pub const DEFAULT_PARAM_CEILING: usize = 5_000;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error("finite-difference step must be > 0 and finite, got {0}")]
    InvalidStep(f64),
    #[error("objective is not finite at coordinate {coordinate}: {value}")]
    NonFinite { coordinate: usize, value: f64 },
    #[error("length mismatch: candidate has {candidate}, reference has {reference}")]
    LengthMismatch { candidate: usize, reference: usize },
    #[error("reference gradient has zero norm")]
    ZeroReference,
}

/// Central differences of `f` at `point`, one coordinate per task.
pub fn fd_gradient<F, E>(f: F, point: &[f64], h: f64) -> Result<Vec<f64>, OracleError>
where
    F: Fn(&[f64]) -> Result<f64, E> + Sync,
    E: Into<OracleError> + Send,
{
    if !(h.is_finite() && h > 0.0) {
        return Err(OracleError::InvalidStep(h));
    }
    (0..point.len())
        .into_par_iter()
        .map(|i| {
            let eval = |delta: f64| -> Result<f64, OracleError> {
                let mut x = point.to_vec();
                x[i] += delta;
                let value = f(&x).map_err(Into::into)?;
                if value.is_finite() {
                    Ok(value)
                } else {
                    Err(OracleError::NonFinite { coordinate: i, value })
                }
            };
            Ok((eval(h)? - eval(-h)?) / (2.0 * h))
        })
        .collect()
}

/// Gradient of the instance's one-step outer objective in `A` by central
/// differences. Pseudo-labels stay anchored at the instance's architecture,
/// matching what the engine differentiates.
pub fn fd_hypergradient(instance: &LbtInstance, h: f64) -> Result<Vec<f64>, OracleError> {
    fd_gradient(|a| instance.outer_objective_flat(a), instance.arch.flat(), h)
}

/// Exact reverse-mode gradient of the same objective, differentiating
/// through `T'(A)` and `S'(T'(A))`.
pub fn unrolled_hypergradient(instance: &LbtInstance, ceiling: usize) -> Result<Vec<f64>, OracleError> {
    let params = instance.num_params();
    if params > ceiling {
        return Err(EngineError::TooLarge { params, ceiling }.into());
    }
    let h = instance.unrolled()?;
    Ok(combine_arch_grads(
        &h.grad_teacher,
        &h.grad_student,
        instance.config.gamma,
        instance.config.objective,
    ))
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordinateRow {
    pub index: usize,
    pub candidate: f64,
    pub reference: f64,
    pub abs_error: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradComparison {
    pub cosine: f64,
    pub rel_l2: f64,
    pub max_abs: f64,
    pub table: Option<Vec<CoordinateRow>>,
}

/// Compares `candidate` against `reference`. A zero candidate has cosine 0.
pub fn compare(candidate: &[f64], reference: &[f64], with_table: bool) -> Result<GradComparison, OracleError> {
    if candidate.len() != reference.len() {
        return Err(OracleError::LengthMismatch {
            candidate: candidate.len(),
            reference: reference.len(),
        });
    }
    let ref_norm = l2_norm(reference);
    if ref_norm == 0.0 {
        return Err(OracleError::ZeroReference);
    }
    let cand_norm = l2_norm(candidate);
    let dot: f64 = candidate.iter().zip(reference).map(|(c, r)| c * r).sum();
    let cosine = if cand_norm == 0.0 {
        0.0
    } else {
        (dot / (cand_norm * ref_norm)).clamp(-1.0, 1.0)
    };
    let diff: Vec<f64> = candidate.iter().zip(reference).map(|(c, r)| c - r).collect();
    let max_abs = diff.iter().map(|d| d.abs()).fold(0.0, f64::max);
    let table = with_table.then(|| {
        candidate
            .iter()
            .zip(reference)
            .enumerate()
            .map(|(index, (&candidate, &reference))| CoordinateRow {
                index,
                candidate,
                reference,
                abs_error: (candidate - reference).abs(),
            })
            .collect()
    });
    Ok(GradComparison {
        cosine,
        rel_l2: l2_norm(&diff) / ref_norm,
        max_abs,
        table,
    })
}

impl GradComparison {
    pub fn passes(&self, min_cosine: f64, max_rel_l2: f64) -> bool {
        self.cosine >= min_cosine && self.rel_l2 <= max_rel_l2
    }
}

impl fmt::Display for GradComparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "cosine        {:.12}", self.cosine)?;
        writeln!(f, "relative L2   {:.6e}", self.rel_l2)?;
        writeln!(f, "max abs error {:.6e}", self.max_abs)?;
        if let Some(rows) = &self.table {
            writeln!(f, "{:>6} {:>16} {:>16} {:>12}", "coord", "candidate", "reference", "abs error")?;
            for r in rows {
                writeln!(
                    f,
                    "{:>6} {:>16.9e} {:>16.9e} {:>12.3e}",
                    r.index, r.candidate, r.reference, r.abs_error
                )?;
            }
        }
        Ok(())
    }
}
