use crate::autodiff::{l2_norm, softmax_rows, BoundWeights, Graph, Tensor, Var, WeightSet};
use crate::data::{LabeledSet, UnlabeledSet};
use crate::model::{
    student_forward, teacher_forward, teacher_logits, ArchParams, Mixing, StudentSpec, TeacherSpec,
    TensorMixing,
};

use super::{EngineError, ObjectiveMode};

/// Inputs with one-hot targets, ready for the graph.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledBatch {
    pub inputs: Tensor,
    pub targets: Tensor,
}

impl LabeledBatch {
    pub fn from_set(set: &LabeledSet, num_classes: usize) -> Result<Self, EngineError> {
        Ok(LabeledBatch {
            inputs: set.inputs()?,
            targets: set.targets(num_classes)?,
        })
    }

    pub fn len(&self) -> usize {
        self.inputs.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// One draw of every dataset the hypergradient touches.
#[derive(Clone, Debug, PartialEq)]
pub struct Batches {
    pub teacher_train: LabeledBatch,
    pub teacher_val: LabeledBatch,
    pub student_train: LabeledBatch,
    pub student_val: LabeledBatch,
    /// `None` when the unlabeled pool is empty.
    pub unlabeled: Option<Tensor>,
}

impl Batches {
    pub fn full(bundle: &crate::data::DataBundle) -> Result<Self, EngineError> {
        let k = bundle.num_classes;
        Ok(Batches {
            teacher_train: LabeledBatch::from_set(&bundle.teacher_train, k)?,
            teacher_val: LabeledBatch::from_set(&bundle.teacher_val, k)?,
            student_train: LabeledBatch::from_set(&bundle.student_train, k)?,
            student_val: LabeledBatch::from_set(&bundle.student_val, k)?,
            unlabeled: unlabeled_inputs(&bundle.unlabeled)?,
        })
    }
}

pub(crate) fn unlabeled_inputs(set: &UnlabeledSet) -> Result<Option<Tensor>, EngineError> {
    Ok(if set.is_empty() { None } else { Some(set.inputs()?) })
}

/// `D_pl`: unlabeled inputs paired with teacher class probabilities.
#[derive(Clone, Debug, PartialEq)]
pub struct PseudoLabeledSet {
    data: Option<(Tensor, Tensor)>,
}

impl PseudoLabeledSet {
    pub fn empty() -> Self {
        PseudoLabeledSet { data: None }
    }

    /// Pairs inputs with given probability rows.
    pub fn from_parts(inputs: Tensor, labels: Tensor) -> Result<Self, EngineError> {
        if inputs.rows() != labels.rows() {
            return Err(EngineError::InvalidConfig(format!(
                "{} inputs but {} label rows",
                inputs.rows(),
                labels.rows()
            )));
        }
        let set = PseudoLabeledSet {
            data: Some((inputs, labels)),
        };
        if set.max_row_error() > crate::autodiff::DISTRIBUTION_TOLERANCE {
            return Err(EngineError::InvalidConfig("pseudo-label rows must sum to 1".into()));
        }
        Ok(set)
    }

    pub fn len(&self) -> usize {
        self.data.as_ref().map_or(0, |(x, _)| x.rows())
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_none()
    }

    pub fn inputs(&self) -> Option<&Tensor> {
        self.data.as_ref().map(|(x, _)| x)
    }

    pub fn labels(&self) -> Option<&Tensor> {
        self.data.as_ref().map(|(_, p)| p)
    }

    /// Largest `|sum(row) - 1|` over all label rows (0 when empty).
    pub fn max_row_error(&self) -> f64 {
        self.labels().map_or(0.0, |p| {
            p.data()
                .chunks(p.cols())
                .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
                .fold(0.0, f64::max)
        })
    }
}

/// Softmax of the teacher's logits on every unlabeled input.
pub fn pseudo_label(
    spec: &TeacherSpec,
    arch: &ArchParams,
    teacher: &WeightSet,
    unlabeled: Option<&Tensor>,
) -> Result<PseudoLabeledSet, EngineError> {
    let Some(x) = unlabeled else {
        return Ok(PseudoLabeledSet::empty());
    };
    let logits = teacher_logits(spec, TensorMixing::Soft(arch), teacher, x)?;
    Ok(PseudoLabeledSet {
        data: Some((x.clone(), softmax_rows(&logits))),
    })
}

/// Cross-entropy between `softmax(logits)` and a target node.
pub(crate) fn ce_node(g: &mut Graph, logits: Var, target: Var) -> Result<Var, EngineError> {
    let p = g.softmax(logits)?;
    Ok(g.soft_cross_entropy(p, target)?)
}

pub(crate) fn teacher_loss_node(
    g: &mut Graph,
    spec: &TeacherSpec,
    arch: Var,
    weights: &BoundWeights,
    batch: &LabeledBatch,
) -> Result<Var, EngineError> {
    let x = g.constant(batch.inputs.clone());
    let logits = teacher_forward(g, spec, Mixing::Soft(arch), weights, x)?;
    let y = g.constant(batch.targets.clone());
    ce_node(g, logits, y)
}

pub(crate) fn student_loss_node(
    g: &mut Graph,
    spec: &StudentSpec,
    weights: &BoundWeights,
    inputs: &Tensor,
    target: Var,
) -> Result<Var, EngineError> {
    let x = g.constant(inputs.clone());
    let logits = student_forward(g, spec, weights, x)?;
    ce_node(g, logits, target)
}

pub(crate) fn flat(g: &Graph, vars: &[Var]) -> Vec<f64> {
    crate::autodiff::flat_values(g, vars)
}

/// A loss with its gradients w.r.t. the weights and the architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrads {
    pub loss: f64,
    pub weights: Vec<f64>,
    pub arch: Vec<f64>,
}

/// `L(T, A, D)` and both partial gradients.
pub fn teacher_loss_grads(
    spec: &TeacherSpec,
    arch: &ArchParams,
    teacher: &WeightSet,
    batch: &LabeledBatch,
) -> Result<LossGrads, EngineError> {
    let mut g = Graph::new();
    let a = g.param("arch", arch.scalars().clone())?;
    let t = teacher.bind(&mut g, "t.")?;
    let loss = teacher_loss_node(&mut g, spec, a, &t, batch)?;
    let mut wrt = vec![a];
    wrt.extend_from_slice(t.vars());
    let grads = g.backward(loss, &wrt)?;
    Ok(LossGrads {
        loss: g.scalar(loss),
        weights: flat(&g, &grads[1..]),
        arch: g.value(grads[0]).data().to_vec(),
    })
}

/// A virtual (or committed) step `w - rate * grad` plus what produced it.
#[derive(Clone, Debug, PartialEq)]
pub struct VirtualStep {
    pub weights: WeightSet,
    pub loss: f64,
    pub grad: Vec<f64>,
}

impl VirtualStep {
    pub fn grad_norm(&self) -> f64 {
        l2_norm(&self.grad)
    }
}

fn check_finite(grad: &[f64], op: &'static str) -> Result<(), EngineError> {
    if grad.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(crate::autodiff::AutodiffError::NonFinite { op }.into())
    }
}

/// `T' = T - xi * grad_T L(T, A, D_t^tr)`; `T` is left untouched.
pub fn teacher_virtual_step(
    spec: &TeacherSpec,
    arch: &ArchParams,
    teacher: &WeightSet,
    train: &LabeledBatch,
    xi: f64,
) -> Result<VirtualStep, EngineError> {
    let lg = teacher_loss_grads(spec, arch, teacher, train)?;
    check_finite(&lg.weights, "teacher gradient")?;
    Ok(VirtualStep {
        weights: teacher.axpy(-xi, &lg.weights)?,
        loss: lg.loss,
        grad: lg.weights,
    })
}

/// `O_s = L(S, D_s^tr) + lambda * L(S, D_pl)` and its gradient in `S`.
#[derive(Clone, Debug, PartialEq)]
pub struct StudentObjective {
    pub value: f64,
    /// Human-label component (0 when the mode drops it).
    pub supervised: f64,
    /// Pseudo-label component before the `lambda` factor (0 when `D_pl` is
    /// empty).
    pub pseudo: f64,
    pub grad: Vec<f64>,
}

/// Builds `O_s` on `g`. Returns `(value, supervised, pseudo)` nodes.
pub(crate) fn student_objective_nodes(
    g: &mut Graph,
    spec: &StudentSpec,
    student: &BoundWeights,
    train: &LabeledBatch,
    pseudo: Option<(&Tensor, Var)>,
    lambda: f64,
    mode: ObjectiveMode,
) -> Result<(Var, Option<Var>, Option<Var>), EngineError> {
    let supervised = if mode.student_supervised() {
        let y = g.constant(train.targets.clone());
        Some(student_loss_node(g, spec, student, &train.inputs, y)?)
    } else {
        None
    };
    let pseudo = match pseudo {
        Some((x, target)) => Some(student_loss_node(g, spec, student, x, target)?),
        None => None,
    };
    let weighted = match pseudo {
        Some(p) => Some(g.scale(p, lambda)?),
        None => None,
    };
    let value = match (supervised, weighted) {
        (Some(s), Some(w)) => g.add(s, w)?,
        (Some(s), None) => s,
        (None, Some(w)) => w,
        (None, None) => g.constant(Tensor::scalar(0.0)),
    };
    Ok((value, supervised, pseudo))
}

pub fn student_objective(
    spec: &StudentSpec,
    student: &WeightSet,
    train: &LabeledBatch,
    pseudo: &PseudoLabeledSet,
    lambda: f64,
    mode: ObjectiveMode,
) -> Result<StudentObjective, EngineError> {
    if train.is_empty() {
        return Err(EngineError::InvalidConfig("empty student training set".into()));
    }
    let mut g = Graph::new();
    let s = student.bind(&mut g, "s.")?;
    let pl = match (pseudo.inputs(), pseudo.labels()) {
        (Some(x), Some(p)) => Some((x, g.constant(p.clone()))),
        _ => None,
    };
    let (value, sup, pse) = student_objective_nodes(&mut g, spec, &s, train, pl, lambda, mode)?;
    let grads = g.backward(value, s.vars())?;
    Ok(StudentObjective {
        value: g.scalar(value),
        supervised: sup.map_or(0.0, |v| g.scalar(v)),
        pseudo: pse.map_or(0.0, |v| g.scalar(v)),
        grad: flat(&g, &grads),
    })
}

/// `S' = S - xi * grad_S O_s`; `S` is left untouched.
pub fn student_virtual_step(student: &WeightSet, grad: &[f64], xi: f64) -> Result<WeightSet, EngineError> {
    check_finite(grad, "student gradient")?;
    if grad.len() != student.num_scalars() {
        return Err(crate::autodiff::AutodiffError::LengthMismatch {
            expected: student.num_scalars(),
            got: grad.len(),
        }
        .into());
    }
    Ok(student.axpy(-xi, grad)?)
}

/// Fraction of rows whose argmax (lowest index on ties) differs from the
/// label.
pub fn error_rate(logits: &Tensor, labels: &[usize]) -> f64 {
    assert_eq!(logits.rows(), labels.len(), "one logit row per label");
    let k = logits.cols();
    let wrong = logits
        .data()
        .chunks(k)
        .zip(labels)
        .filter(|(row, &y)| {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best != y
        })
        .count();
    wrong as f64 / labels.len() as f64
}

/// Test error of any model given as a logits function.
pub fn evaluate<E>(
    forward: impl FnOnce(&Tensor) -> Result<Tensor, E>,
    set: &LabeledSet,
) -> Result<f64, EngineError>
where
    EngineError: From<E>,
{
    let logits = forward(&set.inputs()?)?;
    Ok(error_rate(&logits, &set.labels))
}
