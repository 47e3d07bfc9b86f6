//! The three learning stages, their one-step virtual approximations, the
//! architecture hypergradient and the alternating search loop.
//!
//! Notation follows the usual trilevel setup: teacher weights `T`, student
//! weights `S`, architecture `A`, virtual steps `T'` and `S'`.

mod config;
mod hypergrad;
mod instance;
mod retrain;
mod search;
mod steps;

pub use config::{ArchOptimizer, HypergradMode, ModelConfig, Models, ObjectiveMode, SearchConfig};
pub use hypergrad::{
    grad_arch_student_val, grad_arch_teacher_val, hvp_arch_teacher, hypergradients, outer_objective,
    unrolled_hypergradients, Hypergrads, StudentValGrad, TeacherValGrad,
};
pub use instance::LbtInstance;
pub use retrain::{retrain_discrete, train_linear_baseline, RetrainConfig, RetrainOutcome};
pub use search::{
    arch_step, combine_arch_grads, run_search, run_search_with, ArchStepper, RunMetrics, SearchOutcome,
    StepTrace, DIVERGENCE_THRESHOLD,
};
pub use steps::{
    error_rate, evaluate, pseudo_label, student_objective, student_virtual_step, teacher_loss_grads,
    teacher_virtual_step, Batches, LabeledBatch, LossGrads, PseudoLabeledSet, StudentObjective,
    VirtualStep,
};

use thiserror::Error;

use crate::autodiff::AutodiffError;
use crate::data::DataError;
use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("diverged at iteration {iteration}: {quantity} = {value}")]
    Divergence {
        iteration: usize,
        quantity: String,
        value: f64,
    },
    #[error("problem has {params} parameters, ceiling is {ceiling}")]
    TooLarge { params: usize, ceiling: usize },
}

impl EngineError {
    /// True when the error came from a NaN/Inf somewhere in a computation.
    pub fn is_non_finite(&self) -> bool {
        matches!(
            self,
            EngineError::Autodiff(AutodiffError::NonFinite { .. })
                | EngineError::Model(ModelError::Autodiff(AutodiffError::NonFinite { .. }))
                | EngineError::Data(DataError::Autodiff(AutodiffError::NonFinite { .. }))
        )
    }
}
