use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{l2_norm, Tensor, WeightSet};
use crate::data::DataBundle;
use crate::model::{
    derive_genotype, init_student_weights, init_teacher_weights, student_logits, teacher_logits,
    ArchParams, Genotype, TensorMixing,
};

use super::steps::unlabeled_inputs;
use super::{
    evaluate, hypergradients, pseudo_label, student_objective, student_virtual_step, teacher_virtual_step,
    ArchOptimizer, Batches, EngineError, LabeledBatch, Models, ObjectiveMode, SearchConfig,
};

/// Any loss above this (or non-finite) aborts a run.
pub const DIVERGENCE_THRESHOLD: f64 = 1e6;

/// One iteration of the search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepTrace {
    pub iteration: usize,
    pub lambda: f64,
    pub gamma: f64,
    pub xi_teacher: f64,
    pub xi_student: f64,
    pub eta: f64,
    /// `L(T, A, D_t^tr)` before the committed teacher step.
    pub teacher_train_loss: f64,
    /// `O_s` at the stage-3 virtual step.
    pub student_objective: f64,
    pub student_train_loss: f64,
    pub pseudo_loss: f64,
    /// `O_v = w_t * teacher_val_loss + gamma * student_val_loss`, `w_t = 0`
    /// only in the student-only ablation.
    pub val_objective: f64,
    pub teacher_val_loss: f64,
    pub student_val_loss: f64,
    pub grad_norm_teacher: f64,
    pub grad_norm_student: f64,
    pub grad_norm_arch: f64,
    /// Largest `|sum - 1|` over pseudo-label rows built this iteration.
    pub pseudo_label_max_row_error: f64,
    /// Architecture scalars after the update.
    pub arch: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_time_ms: Option<f64>,
}

/// Final errors on the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub iterations: usize,
    /// Supernet error at the initial `(A, T)`.
    pub teacher_test_error_initial: f64,
    /// Supernet error at the final `(A, T)`.
    pub teacher_test_error: f64,
    /// `None` in bilevel mode.
    pub student_test_error: Option<f64>,
    pub final_val_objective: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub arch: ArchParams,
    pub genotype: Genotype,
    pub teacher: WeightSet,
    pub student: Option<WeightSet>,
    pub traces: Vec<StepTrace>,
    pub metrics: RunMetrics,
}

/// The gradient the architecture step descends: `g_t + gamma * g_s` in full
/// and ablation-2 modes, `gamma * g_s` in ablation 1, `g_t` in bilevel mode.
/// With `gamma = 0` the student term is not touched at all.
pub fn combine_arch_grads(
    grad_teacher: &[f64],
    grad_student: &[f64],
    gamma: f64,
    mode: ObjectiveMode,
) -> Vec<f64> {
    match mode {
        ObjectiveMode::Bilevel => grad_teacher.to_vec(),
        ObjectiveMode::Ablation1 => grad_student.iter().map(|g| gamma * g).collect(),
        ObjectiveMode::Full | ObjectiveMode::Ablation2 if gamma == 0.0 => grad_teacher.to_vec(),
        ObjectiveMode::Full | ObjectiveMode::Ablation2 => grad_teacher
            .iter()
            .zip(grad_student)
            .map(|(t, s)| t + gamma * s)
            .collect(),
    }
}

/// Plain gradient descent: `A - eta * grad`.
pub fn arch_step(arch: &ArchParams, grad: &[f64], eta: f64) -> Result<ArchParams, EngineError> {
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(crate::autodiff::AutodiffError::NonFinite { op: "arch gradient" }.into());
    }
    let flat: Vec<f64> = arch.flat().iter().zip(grad).map(|(a, g)| a - eta * g).collect();
    Ok(arch.with_flat(&flat)?)
}

const MOMENTUM: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Stateful architecture update for the optional momentum and Adam rules.
#[derive(Clone, Debug)]
pub struct ArchStepper {
    optimizer: ArchOptimizer,
    eta: f64,
    steps: i32,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl ArchStepper {
    pub fn new(optimizer: ArchOptimizer, eta: f64, len: usize) -> Self {
        ArchStepper {
            optimizer,
            eta,
            steps: 0,
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }

    pub fn step(&mut self, arch: &ArchParams, grad: &[f64]) -> Result<ArchParams, EngineError> {
        match self.optimizer {
            ArchOptimizer::Sgd => arch_step(arch, grad, self.eta),
            ArchOptimizer::Momentum => {
                for (m, g) in self.first.iter_mut().zip(grad) {
                    *m = MOMENTUM * *m + g;
                }
                arch_step(arch, &self.first, self.eta)
            }
            ArchOptimizer::Adam => {
                self.steps += 1;
                let c1 = 1.0 - MOMENTUM.powi(self.steps);
                let c2 = 1.0 - ADAM_BETA2.powi(self.steps);
                let mut dir = Vec::with_capacity(grad.len());
                for ((m, v), g) in self.first.iter_mut().zip(&mut self.second).zip(grad) {
                    *m = MOMENTUM * *m + (1.0 - MOMENTUM) * g;
                    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                    dir.push((*m / c1) / ((*v / c2).sqrt() + ADAM_EPS));
                }
                arch_step(arch, &dir, self.eta)
            }
        }
    }
}

fn guard(iteration: usize, quantity: &str, value: f64) -> Result<(), EngineError> {
    if value.is_finite() && value.abs() <= DIVERGENCE_THRESHOLD {
        Ok(())
    } else {
        Err(EngineError::Divergence {
            iteration,
            quantity: quantity.to_string(),
            value,
        })
    }
}

/// Independent seed derived from `(seed, tag)`.
pub(crate) fn derive_seed(seed: u64, tag: u64) -> u64 {
    use rand::RngCore;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(tag);
    rng.next_u64()
}

pub(crate) const STREAM_TEACHER_INIT: u64 = 1;
pub(crate) const STREAM_STUDENT_INIT: u64 = 2;
const STREAM_BATCHES: u64 = 16;

/// Full-batch data, or independent random subsets per stage.
struct BatchSource<'a> {
    bundle: &'a DataBundle,
    full: Batches,
    size: usize,
    streams: Vec<ChaCha8Rng>,
}

impl<'a> BatchSource<'a> {
    fn new(bundle: &'a DataBundle, size: usize, seed: u64) -> Result<Self, EngineError> {
        let streams = (0..3)
            .map(|stage| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(STREAM_BATCHES + stage);
                rng
            })
            .collect();
        Ok(BatchSource {
            bundle,
            full: Batches::full(bundle)?,
            size,
            streams,
        })
    }

    fn iterations_per_epoch(&self) -> usize {
        if self.size == 0 {
            1
        } else {
            self.bundle.teacher_train.len().div_ceil(self.size)
        }
    }

    fn draw(&mut self, stage: usize) -> Result<Batches, EngineError> {
        if self.size == 0 {
            return Ok(self.full.clone());
        }
        let size = self.size;
        let k = self.bundle.num_classes;
        let rng = &mut self.streams[stage];
        let mut pick = |n: usize| -> Vec<usize> {
            if size >= n {
                (0..n).collect()
            } else {
                rand::seq::index::sample(rng, n, size).into_vec()
            }
        };
        let b = self.bundle;
        let tt = pick(b.teacher_train.len());
        let tv = pick(b.teacher_val.len());
        let st = pick(b.student_train.len());
        let sv = pick(b.student_val.len());
        let u = pick(b.unlabeled.len());
        Ok(Batches {
            teacher_train: LabeledBatch::from_set(&b.teacher_train.subset(&tt), k)?,
            teacher_val: LabeledBatch::from_set(&b.teacher_val.subset(&tv), k)?,
            student_train: LabeledBatch::from_set(&b.student_train.subset(&st), k)?,
            student_val: LabeledBatch::from_set(&b.student_val.subset(&sv), k)?,
            unlabeled: unlabeled_inputs(&b.unlabeled.subset(&u))?,
        })
    }
}

pub fn run_search(models: &Models, config: &SearchConfig, bundle: &DataBundle) -> Result<SearchOutcome, EngineError> {
    run_search_with(models, config, bundle, |_| {})
}

/// Alternating search. Each iteration (1) commits a teacher step on
/// `D_t^tr`, (2) pseudo-labels `D_u` with the committed teacher and commits
/// a student step on `O_s`, (3) takes fresh virtual steps from the committed
/// weights and descends the architecture hypergradient. `on_step` sees every
/// trace record as it is produced.
pub fn run_search_with(
    models: &Models,
    config: &SearchConfig,
    bundle: &DataBundle,
    mut on_step: impl FnMut(&StepTrace),
) -> Result<SearchOutcome, EngineError> {
    config.validate()?;
    bundle.validate()?;
    if config.objective.uses_student() && config.lambda > 0.0 && bundle.unlabeled.is_empty() {
        return Err(EngineError::InvalidConfig(
            "the unlabeled pool may be empty only when lambda = 0".into(),
        ));
    }
    let mut arch = models.teacher.init_arch()?;
    let mut teacher = init_teacher_weights(&models.teacher, derive_seed(config.seed, STREAM_TEACHER_INIT))?;
    let mut student = init_student_weights(&models.student, derive_seed(config.seed, STREAM_STUDENT_INIT))?;
    let teacher_error = |arch: &ArchParams, teacher: &WeightSet| {
        evaluate(
            |x: &Tensor| teacher_logits(&models.teacher, TensorMixing::Soft(arch), teacher, x),
            &bundle.test,
        )
    };
    let teacher_test_error_initial = teacher_error(&arch, &teacher)?;

    let mut source = BatchSource::new(bundle, config.batch_size, config.seed)?;
    let iterations = config.epochs * source.iterations_per_epoch();
    let mut stepper = ArchStepper::new(config.arch_optimizer, config.eta, arch.len());
    let mut traces = Vec::with_capacity(iterations);
    for it in 0..iterations {
        let started = config.record_timing.then(Instant::now);
        let result = iterate(
            models,
            config,
            &mut source,
            &mut stepper,
            it,
            &mut arch,
            &mut teacher,
            &mut student,
        );
        let mut trace = match result {
            Ok(t) => t,
            Err(e) if e.is_non_finite() => {
                return Err(EngineError::Divergence {
                    iteration: it,
                    quantity: e.to_string(),
                    value: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        };
        trace.wall_time_ms = started.map(|s| s.elapsed().as_secs_f64() * 1e3);
        on_step(&trace);
        traces.push(trace);
    }

    let uses_student = config.objective.uses_student();
    let student_test_error = if uses_student {
        Some(evaluate(
            |x: &Tensor| student_logits(&models.student, &student, x),
            &bundle.test,
        )?)
    } else {
        None
    };
    let metrics = RunMetrics {
        iterations,
        teacher_test_error_initial,
        teacher_test_error: teacher_error(&arch, &teacher)?,
        student_test_error,
        final_val_objective: traces.last().map(|t| t.val_objective),
    };
    Ok(SearchOutcome {
        genotype: derive_genotype(&arch),
        arch,
        teacher,
        student: uses_student.then_some(student),
        traces,
        metrics,
    })
}

#[allow(clippy::too_many_arguments)]
fn iterate(
    models: &Models,
    config: &SearchConfig,
    source: &mut BatchSource<'_>,
    stepper: &mut ArchStepper,
    it: usize,
    arch: &mut ArchParams,
    teacher: &mut WeightSet,
    student: &mut WeightSet,
) -> Result<StepTrace, EngineError> {
    let b1 = source.draw(0)?;
    let committed = teacher_virtual_step(&models.teacher, arch, teacher, &b1.teacher_train, config.lr_teacher())?;
    guard(it, "teacher_train_loss", committed.loss)?;
    let grad_norm_teacher = committed.grad_norm();
    *teacher = committed.weights;

    let mut row_error: f64 = 0.0;
    let mut grad_norm_student = 0.0;
    if config.objective.uses_student() {
        let b2 = source.draw(1)?;
        let pl = pseudo_label(&models.teacher, arch, teacher, b2.unlabeled.as_ref())?;
        row_error = row_error.max(pl.max_row_error());
        let os = student_objective(
            &models.student,
            student,
            &b2.student_train,
            &pl,
            config.lambda,
            config.objective,
        )?;
        guard(it, "student_objective", os.value)?;
        grad_norm_student = l2_norm(&os.grad);
        *student = student_virtual_step(student, &os.grad, config.lr_student())?;
    }

    let b3 = source.draw(2)?;
    let h = hypergradients(models, config, arch, teacher, student, &b3)?;
    guard(it, "teacher_val_loss", h.teacher_val_loss)?;
    guard(it, "student_val_loss", h.student_val_loss)?;
    guard(it, "stage-3 student_objective", h.student_objective)?;
    row_error = row_error.max(h.pseudo_max_row_error);
    let combined = combine_arch_grads(&h.grad_teacher, &h.grad_student, config.gamma, config.objective);
    *arch = stepper.step(arch, &combined)?;

    Ok(StepTrace {
        iteration: it,
        lambda: config.lambda,
        gamma: config.gamma,
        xi_teacher: config.xi_teacher,
        xi_student: config.xi_student,
        eta: config.eta,
        teacher_train_loss: committed.loss,
        student_objective: h.student_objective,
        student_train_loss: h.student_train_loss,
        pseudo_loss: h.pseudo_loss,
        val_objective: h.val_objective(config.objective, config.gamma),
        teacher_val_loss: h.teacher_val_loss,
        student_val_loss: h.student_val_loss,
        grad_norm_teacher,
        grad_norm_student,
        grad_norm_arch: l2_norm(&combined),
        pseudo_label_max_row_error: row_error,
        arch: arch.flat().to_vec(),
        wall_time_ms: None,
    })
}
