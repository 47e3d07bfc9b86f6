//! Teacher supernet, fixed student networks and discrete architecture
//! derivation.

mod arch;
mod genotype;
mod init;
mod student;
mod teacher;

pub use arch::{ArchParams, CellTopology};
pub use genotype::{derive_genotype, Genotype, GenotypeDocument, GenotypeEdge};
pub use init::{init_discrete_weights, init_student_weights, init_teacher_weights};
pub use student::{student_forward, student_logits, Activation, Capacity, StudentSpec};
pub use teacher::{teacher_forward, teacher_logits, Mixing, TeacherSpec, TensorMixing};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::AutodiffError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("unknown operation `{0}`")]
    UnknownOp(String),
}

/// Candidate operations on a supernet edge. The declaration order is the
/// candidate index used for tie-breaking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CandidateOp {
    Identity,
    Zero,
    Linear,
    LinearTanh,
    LinearRelu,
}

impl CandidateOp {
    pub const ALL: [CandidateOp; 5] = [
        CandidateOp::Identity,
        CandidateOp::Zero,
        CandidateOp::Linear,
        CandidateOp::LinearTanh,
        CandidateOp::LinearRelu,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CandidateOp::Identity => "identity",
            CandidateOp::Zero => "zero",
            CandidateOp::Linear => "linear",
            CandidateOp::LinearTanh => "linear_tanh",
            CandidateOp::LinearRelu => "linear_relu",
        }
    }

    pub fn has_weights(self) -> bool {
        matches!(
            self,
            CandidateOp::Linear | CandidateOp::LinearTanh | CandidateOp::LinearRelu
        )
    }
}

impl std::str::FromStr for CandidateOp {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        CandidateOp::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| ModelError::UnknownOp(s.to_string()))
    }
}

impl std::fmt::Display for CandidateOp {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[cfg(test)]
mod tests;
