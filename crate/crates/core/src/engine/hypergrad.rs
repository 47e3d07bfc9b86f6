use crate::autodiff::{l2_norm, Graph, WeightSet};
use crate::model::{teacher_forward, teacher_logits, ArchParams, Mixing, TeacherSpec, TensorMixing};

use super::steps::{flat, student_loss_node, student_objective_nodes, teacher_loss_node};
use super::{
    pseudo_label, student_objective, student_virtual_step, teacher_loss_grads, teacher_virtual_step,
    Batches, EngineError, HypergradMode, LabeledBatch, Models, ObjectiveMode, SearchConfig,
};

fn central_difference(plus: &[f64], minus: &[f64], alpha: f64) -> Vec<f64> {
    plus.iter()
        .zip(minus)
        .map(|(p, m)| (p - m) / (2.0 * alpha))
        .collect()
}

/// `grad^2_{A,T} L(T, A, D_t^tr) . vec` by symmetric differences of the
/// architecture gradient at `T +- alpha * vec`, `alpha = c_fd / |vec|`.
/// A zero `vec` gives the exact zero product.
pub fn hvp_arch_teacher(
    spec: &TeacherSpec,
    arch: &ArchParams,
    teacher: &WeightSet,
    train: &LabeledBatch,
    vec: &[f64],
    c_fd: f64,
) -> Result<Vec<f64>, EngineError> {
    let norm = l2_norm(vec);
    if norm == 0.0 {
        return Ok(vec![0.0; arch.len()]);
    }
    let alpha = c_fd / norm;
    let plus = teacher_loss_grads(spec, arch, &teacher.axpy(alpha, vec)?, train)?;
    let minus = teacher_loss_grads(spec, arch, &teacher.axpy(-alpha, vec)?, train)?;
    Ok(central_difference(&plus.arch, &minus.arch, alpha))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TeacherValGrad {
    /// `L(T', A, D_t^val)`.
    pub loss: f64,
    /// Partial in `A` at fixed `T'`.
    pub direct: Vec<f64>,
    pub grad: Vec<f64>,
}

/// Gradient of `L(T'(A), A, D_t^val)`: the direct partial minus
/// `xi_t * grad^2_{A,T} L_tr . v` with `v = grad_{T'} L_val`.
#[allow(clippy::too_many_arguments)]
pub fn grad_arch_teacher_val(
    spec: &TeacherSpec,
    arch: &ArchParams,
    teacher: &WeightSet,
    teacher_virtual: &WeightSet,
    train: &LabeledBatch,
    val: &LabeledBatch,
    xi_teacher: f64,
    c_fd: f64,
) -> Result<TeacherValGrad, EngineError> {
    let at_virtual = teacher_loss_grads(spec, arch, teacher_virtual, val)?;
    let direct = at_virtual.arch;
    if xi_teacher == 0.0 || l2_norm(&at_virtual.weights) == 0.0 {
        return Ok(TeacherValGrad {
            loss: at_virtual.loss,
            grad: direct.clone(),
            direct,
        });
    }
    let hvp = hvp_arch_teacher(spec, arch, teacher, train, &at_virtual.weights, c_fd)?;
    let grad = direct
        .iter()
        .zip(&hvp)
        .map(|(d, h)| d - xi_teacher * h)
        .collect();
    Ok(TeacherValGrad {
        loss: at_virtual.loss,
        direct,
        grad,
    })
}

/// `grad_{T'} L(S, D_pl(D_u, T'))` with the pseudo-label architecture held
/// at `anchor`.
fn pseudo_loss_teacher_grad(
    models: &Models,
    anchor: &ArchParams,
    teacher_virtual: &WeightSet,
    student: &WeightSet,
    unlabeled: &crate::autodiff::Tensor,
) -> Result<Vec<f64>, EngineError> {
    let mut g = Graph::new();
    let a = g.constant(anchor.scalars().clone());
    let t = teacher_virtual.bind(&mut g, "t.")?;
    let s = student.bind_constant(&mut g);
    let target = pseudo_target(&mut g, &models.teacher, a, &t, unlabeled)?;
    let loss = student_loss_node(&mut g, &models.student, &s, unlabeled, target)?;
    let grads = g.backward(loss, t.vars())?;
    Ok(flat(&g, &grads))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StudentValGrad {
    /// `L(S', D_s^val)`.
    pub loss: f64,
    pub grad: Vec<f64>,
}

/// Gradient of `L(S'(A), D_s^val)` through the teaching path:
/// `xi_s * xi_t * lambda * grad^2_{A,T} L_tr . u` with
/// `u = grad^2_{T',S} L_pl . v` and `v = grad_{S'} L(S', D_s^val)`.
/// Both products use symmetric differences. Any vanishing factor gives the
/// exact zero vector.
#[allow(clippy::too_many_arguments)]
pub fn grad_arch_student_val(
    models: &Models,
    arch: &ArchParams,
    teacher: &WeightSet,
    teacher_virtual: &WeightSet,
    student: &WeightSet,
    student_virtual: &WeightSet,
    batches: &Batches,
    config: &SearchConfig,
) -> Result<StudentValGrad, EngineError> {
    let mut g = Graph::new();
    let sv = student_virtual.bind(&mut g, "s.")?;
    let y = g.constant(batches.student_val.targets.clone());
    let loss = student_loss_node(&mut g, &models.student, &sv, &batches.student_val.inputs, y)?;
    let grads = g.backward(loss, sv.vars())?;
    let v = flat(&g, &grads);
    let loss = g.scalar(loss);
    let zero = StudentValGrad {
        loss,
        grad: vec![0.0; arch.len()],
    };

    let SearchConfig {
        lambda,
        xi_teacher,
        xi_student,
        c_fd,
        ..
    } = *config;
    let v_norm = l2_norm(&v);
    let Some(xu) = batches.unlabeled.as_ref() else {
        return Ok(zero);
    };
    if lambda == 0.0 || xi_teacher == 0.0 || xi_student == 0.0 || v_norm == 0.0 {
        return Ok(zero);
    }

    let alpha = c_fd / v_norm;
    let plus = pseudo_loss_teacher_grad(models, arch, teacher_virtual, &student.axpy(alpha, &v)?, xu)?;
    let minus = pseudo_loss_teacher_grad(models, arch, teacher_virtual, &student.axpy(-alpha, &v)?, xu)?;
    let u = central_difference(&plus, &minus, alpha);
    if l2_norm(&u) == 0.0 {
        return Ok(zero);
    }
    let hvp = hvp_arch_teacher(&models.teacher, arch, teacher, &batches.teacher_train, &u, c_fd)?;
    let factor = xi_student * xi_teacher * lambda;
    Ok(StudentValGrad {
        loss,
        grad: hvp.iter().map(|h| factor * h).collect(),
    })
}

/// Everything stage 3 of an iteration produces.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypergrads {
    pub teacher_val_loss: f64,
    pub student_val_loss: f64,
    pub student_objective: f64,
    pub student_train_loss: f64,
    pub pseudo_loss: f64,
    /// `d L(T', A, D_t^val) / dA`.
    pub grad_teacher: Vec<f64>,
    /// `d L(S', D_s^val) / dA`.
    pub grad_student: Vec<f64>,
    pub pseudo_max_row_error: f64,
}

impl Hypergrads {
    /// `O_v = w_t * L(T', A, D_t^val) + gamma * L(S', D_s^val)`, with
    /// `w_t = 0` in the student-only ablation.
    pub fn val_objective(&self, mode: ObjectiveMode, gamma: f64) -> f64 {
        mode.teacher_weight() * self.teacher_val_loss + gamma * self.student_val_loss
    }
}

/// Stage-3 losses and both architecture gradients at `(A, T, S)` in the
/// configured hypergradient mode.
pub fn hypergradients(
    models: &Models,
    config: &SearchConfig,
    arch: &ArchParams,
    teacher: &WeightSet,
    student: &WeightSet,
    batches: &Batches,
) -> Result<Hypergrads, EngineError> {
    match config.hypergrad {
        HypergradMode::FiniteDifference => fd_hypergradients(models, config, arch, teacher, student, batches),
        HypergradMode::ExactUnrolled => {
            unrolled_hypergradients(models, config, arch, arch, teacher, student, batches)
        }
    }
}

fn fd_hypergradients(
    models: &Models,
    config: &SearchConfig,
    arch: &ArchParams,
    teacher: &WeightSet,
    student: &WeightSet,
    batches: &Batches,
) -> Result<Hypergrads, EngineError> {
    let tv = teacher_virtual_step(&models.teacher, arch, teacher, &batches.teacher_train, config.xi_teacher)?;
    let tg = grad_arch_teacher_val(
        &models.teacher,
        arch,
        teacher,
        &tv.weights,
        &batches.teacher_train,
        &batches.teacher_val,
        config.xi_teacher,
        config.c_fd,
    )?;
    if !config.objective.uses_student() {
        return Ok(Hypergrads {
            teacher_val_loss: tg.loss,
            student_val_loss: 0.0,
            student_objective: 0.0,
            student_train_loss: 0.0,
            pseudo_loss: 0.0,
            grad_student: vec![0.0; arch.len()],
            grad_teacher: tg.grad,
            pseudo_max_row_error: 0.0,
        });
    }
    let pl = pseudo_label(&models.teacher, arch, &tv.weights, batches.unlabeled.as_ref())?;
    let os = student_objective(
        &models.student,
        student,
        &batches.student_train,
        &pl,
        config.lambda,
        config.objective,
    )?;
    let sv = student_virtual_step(student, &os.grad, config.xi_student)?;
    let sg = grad_arch_student_val(models, arch, teacher, &tv.weights, student, &sv, batches, config)?;
    Ok(Hypergrads {
        teacher_val_loss: tg.loss,
        student_val_loss: sg.loss,
        student_objective: os.value,
        student_train_loss: os.supervised,
        pseudo_loss: os.pseudo,
        grad_teacher: tg.grad,
        grad_student: sg.grad,
        pseudo_max_row_error: pl.max_row_error(),
    })
}

/// Reverse mode through both virtual steps on one graph. `arch` is the
/// differentiated variable; pseudo-labels are produced with the
/// architecture held at `anchor`, so `A` reaches the student only through
/// `T'`.
pub fn unrolled_hypergradients(
    models: &Models,
    config: &SearchConfig,
    anchor: &ArchParams,
    arch: &ArchParams,
    teacher: &WeightSet,
    student: &WeightSet,
    batches: &Batches,
) -> Result<Hypergrads, EngineError> {
    let mut g = Graph::new();
    let a = g.param("arch", arch.scalars().clone())?;
    let t = teacher.bind(&mut g, "t.")?;
    let lt = teacher_loss_node(&mut g, &models.teacher, a, &t, &batches.teacher_train)?;
    let gt = g.backward(lt, t.vars())?;
    let tv = t.descend(&mut g, &gt, config.xi_teacher)?;
    let lv = teacher_loss_node(&mut g, &models.teacher, a, &tv, &batches.teacher_val)?;
    let grad_teacher = g.backward(lv, &[a])?[0];
    let grad_teacher = g.value(grad_teacher).data().to_vec();
    let teacher_val_loss = g.scalar(lv);

    if !config.objective.uses_student() {
        return Ok(Hypergrads {
            teacher_val_loss,
            student_val_loss: 0.0,
            student_objective: 0.0,
            student_train_loss: 0.0,
            pseudo_loss: 0.0,
            grad_student: vec![0.0; arch.len()],
            grad_teacher,
            pseudo_max_row_error: 0.0,
        });
    }

    let s = student.bind(&mut g, "s.")?;
    let ac = g.constant(anchor.scalars().clone());
    let pseudo = match batches.unlabeled.as_ref() {
        Some(xu) => Some((xu, pseudo_target(&mut g, &models.teacher, ac, &tv, xu)?)),
        None => None,
    };
    let pseudo_max_row_error = pseudo.map_or(0.0, |(_, p)| {
        let p = g.value(p);
        p.data()
            .chunks(p.cols())
            .map(|row| (row.iter().sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    });
    let (os, sup, pse) = student_objective_nodes(
        &mut g,
        &models.student,
        &s,
        &batches.student_train,
        pseudo,
        config.lambda,
        config.objective,
    )?;
    let gs = g.backward(os, s.vars())?;
    let sv = s.descend(&mut g, &gs, config.xi_student)?;
    let y = g.constant(batches.student_val.targets.clone());
    let ls = student_loss_node(&mut g, &models.student, &sv, &batches.student_val.inputs, y)?;
    let grad_student = g.backward(ls, &[a])?[0];
    Ok(Hypergrads {
        teacher_val_loss,
        student_val_loss: g.scalar(ls),
        student_objective: g.scalar(os),
        student_train_loss: sup.map_or(0.0, |v| g.scalar(v)),
        pseudo_loss: pse.map_or(0.0, |v| g.scalar(v)),
        grad_teacher,
        grad_student: g.value(grad_student).data().to_vec(),
        pseudo_max_row_error,
    })
}

fn teacher_loss(
    spec: &TeacherSpec,
    arch: &ArchParams,
    teacher: &WeightSet,
    batch: &LabeledBatch,
) -> Result<f64, EngineError> {
    let logits = teacher_logits(spec, TensorMixing::Soft(arch), teacher, &batch.inputs)?;
    let probs = crate::autodiff::softmax_rows(&logits);
    Ok(crate::autodiff::soft_cross_entropy(&probs, &batch.targets)?)
}

/// The one-step outer objective as a plain function of `arch`, recomputing
/// `T'(A)`, `D_pl` and `S'(A)` from scratch. Pseudo-labels use `anchor`.
/// In ablation 1 the teacher term is dropped; in bilevel mode only the
/// teacher term remains.
pub fn outer_objective(
    models: &Models,
    config: &SearchConfig,
    anchor: &ArchParams,
    arch: &ArchParams,
    teacher: &WeightSet,
    student: &WeightSet,
    batches: &Batches,
) -> Result<f64, EngineError> {
    let tv = teacher_virtual_step(&models.teacher, arch, teacher, &batches.teacher_train, config.xi_teacher)?;
    let teacher_val = teacher_loss(&models.teacher, arch, &tv.weights, &batches.teacher_val)?;
    if config.objective == ObjectiveMode::Bilevel {
        return Ok(teacher_val);
    }
    let pl = pseudo_label(&models.teacher, anchor, &tv.weights, batches.unlabeled.as_ref())?;
    let os = student_objective(
        &models.student,
        student,
        &batches.student_train,
        &pl,
        config.lambda,
        config.objective,
    )?;
    let sv = student_virtual_step(student, &os.grad, config.xi_student)?;
    let logits = crate::model::student_logits(&models.student, &sv, &batches.student_val.inputs)?;
    let probs = crate::autodiff::softmax_rows(&logits);
    let student_val = crate::autodiff::soft_cross_entropy(&probs, &batches.student_val.targets)?;
    Ok(config.objective.teacher_weight() * teacher_val + config.gamma * student_val)
}

/// `softmax(teacher(A, T, x))` as a graph node, used as a soft target.
pub(crate) fn pseudo_target(
    g: &mut Graph,
    spec: &TeacherSpec,
    arch: crate::autodiff::Var,
    teacher: &crate::autodiff::BoundWeights,
    inputs: &crate::autodiff::Tensor,
) -> Result<crate::autodiff::Var, EngineError> {
    let x = g.constant(inputs.clone());
    let logits = teacher_forward(g, spec, Mixing::Soft(arch), teacher, x)?;
    Ok(g.softmax(logits)?)
}
