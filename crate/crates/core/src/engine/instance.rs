use crate::autodiff::WeightSet;
use crate::data::DataBundle;
use crate::model::{init_student_weights, init_teacher_weights, ArchParams};

use super::search::{derive_seed, STREAM_STUDENT_INIT, STREAM_TEACHER_INIT};
use super::{
    combine_arch_grads, hypergradients, outer_objective, unrolled_hypergradients, Batches, EngineError,
    Hypergrads, Models, SearchConfig,
};

/// A frozen search state `(A, T, S)` with one draw of every dataset: the
/// point at which one architecture hypergradient is taken.
#[derive(Clone, Debug, PartialEq)]
pub struct LbtInstance {
    pub models: Models,
    pub config: SearchConfig,
    pub arch: ArchParams,
    pub teacher: WeightSet,
    pub student: WeightSet,
    pub batches: Batches,
}

impl LbtInstance {
    /// The state a search with this seed starts from: uniform architecture,
    /// freshly initialised weights, full-batch data.
    pub fn from_bundle(
        models: Models,
        config: SearchConfig,
        bundle: &DataBundle,
        seed: u64,
    ) -> Result<Self, EngineError> {
        let arch = models.teacher.init_arch()?;
        let teacher = init_teacher_weights(&models.teacher, derive_seed(seed, STREAM_TEACHER_INIT))?;
        let student = init_student_weights(&models.student, derive_seed(seed, STREAM_STUDENT_INIT))?;
        let batches = Batches::full(bundle)?;
        Ok(LbtInstance {
            models,
            config,
            arch,
            teacher,
            student,
            batches,
        })
    }

    /// Architecture scalars plus both weight sets.
    pub fn num_params(&self) -> usize {
        self.arch.len() + self.teacher.num_scalars() + self.student.num_scalars()
    }

    /// The one-step outer objective as a function of the architecture, with
    /// pseudo-labels anchored at `self.arch`.
    pub fn outer_objective(&self, arch: &ArchParams) -> Result<f64, EngineError> {
        outer_objective(
            &self.models,
            &self.config,
            &self.arch,
            arch,
            &self.teacher,
            &self.student,
            &self.batches,
        )
    }

    pub fn outer_objective_flat(&self, flat: &[f64]) -> Result<f64, EngineError> {
        self.outer_objective(&self.arch.with_flat(flat)?)
    }

    /// Both gradient terms in the configured mode.
    pub fn hypergradients(&self) -> Result<Hypergrads, EngineError> {
        hypergradients(
            &self.models,
            &self.config,
            &self.arch,
            &self.teacher,
            &self.student,
            &self.batches,
        )
    }

    /// Both gradient terms by reverse mode through the virtual steps,
    /// regardless of the configured mode.
    pub fn unrolled(&self) -> Result<Hypergrads, EngineError> {
        unrolled_hypergradients(
            &self.models,
            &self.config,
            &self.arch,
            &self.arch,
            &self.teacher,
            &self.student,
            &self.batches,
        )
    }

    /// The gradient the architecture step would descend.
    pub fn combined_gradient(&self) -> Result<Vec<f64>, EngineError> {
        let h = self.hypergradients()?;
        Ok(combine_arch_grads(
            &h.grad_teacher,
            &h.grad_student,
            self.config.gamma,
            self.config.objective,
        ))
    }
}
