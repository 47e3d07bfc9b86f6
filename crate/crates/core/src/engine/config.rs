use serde::{Deserialize, Serialize};

use crate::model::{Capacity, CandidateOp, CellTopology, StudentSpec, TeacherSpec};

use super::EngineError;

macro_rules! named_enum {
    ($ty:ident { $($variant:ident => $name:literal),+ $(,)? }) => {
        impl $ty {
            pub fn name(self) -> &'static str {
                match self {
                    $($ty::$variant => $name),+
                }
            }
        }

        impl std::str::FromStr for $ty {
            type Err = EngineError;

            fn from_str(s: &str) -> Result<Self, Self::Err> {
                match s {
                    $($name => Ok($ty::$variant),)+
                    other => Err(EngineError::InvalidConfig(format!(
                        "unknown {} `{other}` (expected one of: {})",
                        stringify!($ty),
                        [$($name),+].join(", ")
                    ))),
                }
            }
        }

        impl std::fmt::Display for $ty {
            fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
                f.write_str(self.name())
            }
        }
    };
}

/// How the architecture hypergradient is obtained.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum HypergradMode {
    /// Finite-difference Hessian-vector products around the virtual steps.
    #[default]
    FiniteDifference,
    /// Reverse mode through both virtual steps.
    ExactUnrolled,
}

named_enum!(HypergradMode {
    FiniteDifference => "finite-difference",
    ExactUnrolled => "exact-unrolled",
});

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ObjectiveMode {
    /// Teacher and student validation losses both drive `A`.
    #[default]
    Full,
    /// Only the student's validation loss drives `A`.
    Ablation1,
    /// The student trains on pseudo-labels only.
    Ablation2,
    /// Teacher-only bilevel search; the student is never built.
    Bilevel,
}

named_enum!(ObjectiveMode {
    Full => "full",
    Ablation1 => "ablation1",
    Ablation2 => "ablation2",
    Bilevel => "bilevel",
});

impl ObjectiveMode {
    pub fn uses_student(self) -> bool {
        self != ObjectiveMode::Bilevel
    }

    /// Weight on the teacher validation term of the outer objective.
    pub fn teacher_weight(self) -> f64 {
        match self {
            ObjectiveMode::Ablation1 => 0.0,
            _ => 1.0,
        }
    }

    /// Whether the student objective keeps its human-label term.
    pub fn student_supervised(self) -> bool {
        self != ObjectiveMode::Ablation2
    }
}

/// Update rule for `A`. Plain gradient descent is the reference.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchOptimizer {
    #[default]
    Sgd,
    Momentum,
    Adam,
}

named_enum!(ArchOptimizer {
    Sgd => "sgd",
    Momentum => "momentum",
    Adam => "adam",
});

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Weight of the pseudo-label loss in the student objective.
    pub lambda: f64,
    /// Weight of the student validation loss in the outer objective.
    pub gamma: f64,
    /// Virtual-step rate for `T'`.
    pub xi_teacher: f64,
    /// Virtual-step rate for `S'`.
    pub xi_student: f64,
    /// Architecture learning rate.
    pub eta: f64,
    /// Committed teacher step; `None` means `xi_teacher`.
    pub lr_teacher: Option<f64>,
    /// Committed student step; `None` means `xi_student`.
    pub lr_student: Option<f64>,
    pub epochs: usize,
    /// 0 = full batch.
    pub batch_size: usize,
    /// Finite-difference constant: `alpha = c_fd / |v|`.
    pub c_fd: f64,
    pub hypergrad: HypergradMode,
    pub objective: ObjectiveMode,
    pub arch_optimizer: ArchOptimizer,
    pub seed: u64,
    /// Adds wall-clock milliseconds to each trace record, which makes the
    /// trace non-reproducible byte for byte.
    pub record_timing: bool,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            lambda: 1.0,
            gamma: 1.0,
            xi_teacher: 0.5,
            xi_student: 0.5,
            eta: 0.5,
            lr_teacher: None,
            lr_student: None,
            epochs: 200,
            batch_size: 0,
            c_fd: 0.01,
            hypergrad: HypergradMode::FiniteDifference,
            objective: ObjectiveMode::Full,
            arch_optimizer: ArchOptimizer::Sgd,
            seed: 0,
            record_timing: false,
        }
    }
}

impl SearchConfig {
    pub fn lr_teacher(&self) -> f64 {
        self.lr_teacher.unwrap_or(self.xi_teacher)
    }

    pub fn lr_student(&self) -> f64 {
        self.lr_student.unwrap_or(self.xi_student)
    }

    /// Virtual rates and `eta` may be zero (those are the reductions);
    /// committed rates and `c_fd` must be positive.
    pub fn validate(&self) -> Result<(), EngineError> {
        let bad = |msg: String| Err(EngineError::InvalidConfig(msg));
        for (name, v) in [
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("xi_teacher", self.xi_teacher),
            ("xi_student", self.xi_student),
            ("eta", self.eta),
        ] {
            if !v.is_finite() || v < 0.0 {
                return bad(format!("{name} must be finite and >= 0, got {v}"));
            }
        }
        for (name, v) in [
            ("lr_teacher", self.lr_teacher()),
            ("lr_student", self.lr_student()),
            ("c_fd", self.c_fd),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return bad(format!(
                    "{name} must be finite and > 0, got {v} (set it explicitly when the matching xi is 0)"
                ));
            }
        }
        Ok(())
    }
}

/// Network shapes shared by a search run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden_dim: usize,
    /// Intermediate nodes per cell.
    pub nodes: usize,
    pub cells: usize,
    pub student: Capacity,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            hidden_dim: 8,
            nodes: 4,
            cells: 1,
            student: Capacity::Small,
        }
    }
}

impl ModelConfig {
    pub fn build(&self, input_dim: usize, num_classes: usize) -> Result<Models, EngineError> {
        let teacher = TeacherSpec {
            input_dim,
            hidden_dim: self.hidden_dim,
            num_classes,
            topology: CellTopology::new(self.nodes),
            cells: self.cells,
            ops: CandidateOp::ALL.to_vec(),
        };
        teacher.validate()?;
        let student = StudentSpec::for_capacity(self.student, input_dim, num_classes);
        student.validate()?;
        Ok(Models { teacher, student })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Models {
    pub teacher: TeacherSpec,
    pub student: StudentSpec,
}

impl Models {
    pub fn num_classes(&self) -> usize {
        self.teacher.num_classes
    }
}
