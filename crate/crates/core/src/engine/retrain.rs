use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Tensor, WeightSet};
use crate::data::LabeledSet;
use crate::model::{
    init_discrete_weights, init_student_weights, student_forward, student_logits, teacher_forward,
    teacher_logits, Activation, Capacity, Genotype, Mixing, StudentSpec, TeacherSpec, TensorMixing,
};

use super::steps::ce_node;
use super::{error_rate, EngineError};

/// Full-batch gradient descent from scratch. Steps are clipped to global
/// norm `clip_norm` so summed-node cells stay stable at a fixed rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RetrainConfig {
    pub epochs: usize,
    pub lr: f64,
    #[serde(default = "default_clip")]
    pub clip_norm: f64,
    pub seed: u64,
}

fn default_clip() -> f64 {
    1.0
}

impl Default for RetrainConfig {
    fn default() -> Self {
        RetrainConfig {
            epochs: 300,
            lr: 0.5,
            clip_norm: default_clip(),
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RetrainOutcome {
    pub weights: WeightSet,
    /// Training loss after the last step (initial loss for 0 epochs).
    pub train_loss: f64,
    pub test_error: f64,
}

fn descend(
    mut weights: WeightSet,
    train: &LabeledSet,
    num_classes: usize,
    config: &RetrainConfig,
    forward: impl Fn(&mut Graph, &crate::autodiff::BoundWeights, crate::autodiff::Var) -> Result<crate::autodiff::Var, EngineError>,
) -> Result<(WeightSet, f64), EngineError> {
    if !(config.lr.is_finite() && config.lr > 0.0) {
        return Err(EngineError::InvalidConfig(format!("retrain lr must be > 0, got {}", config.lr)));
    }
    if !(config.clip_norm.is_finite() && config.clip_norm > 0.0) {
        return Err(EngineError::InvalidConfig(format!(
            "retrain clip_norm must be > 0, got {}",
            config.clip_norm
        )));
    }
    let inputs = train.inputs()?;
    let targets = train.targets(num_classes)?;
    let mut loss = f64::NAN;
    for epoch in 0..=config.epochs {
        let mut g = Graph::new();
        let w = weights.bind(&mut g, "")?;
        let x = g.constant(inputs.clone());
        let logits = forward(&mut g, &w, x)?;
        let y = g.constant(targets.clone());
        let l = ce_node(&mut g, logits, y)?;
        loss = g.scalar(l);
        if epoch == config.epochs {
            break;
        }
        let grads = g.backward(l, w.vars())?;
        let grad = crate::autodiff::flat_values(&g, &grads);
        let norm = crate::autodiff::l2_norm(&grad);
        if !norm.is_finite() {
            return Err(crate::autodiff::AutodiffError::NonFinite { op: "retrain gradient" }.into());
        }
        let rate = config.lr * (config.clip_norm / norm).min(1.0);
        weights = weights.axpy(-rate, &grad)?;
    }
    Ok((weights, loss))
}

/// Trains the discrete network of `genotype` (its own cell count) on
/// `train` and reports its error on `test`.
pub fn retrain_discrete(
    spec: &TeacherSpec,
    genotype: &Genotype,
    train: &LabeledSet,
    test: &LabeledSet,
    config: &RetrainConfig,
) -> Result<RetrainOutcome, EngineError> {
    let init = init_discrete_weights(spec, genotype, config.seed)?;
    let (weights, train_loss) = descend(init, train, spec.num_classes, config, |g, w, x| {
        Ok(teacher_forward(g, spec, Mixing::Hard(genotype), w, x)?)
    })?;
    let logits = teacher_logits(spec, TensorMixing::Hard(genotype), &weights, &test.inputs()?)?;
    Ok(RetrainOutcome {
        test_error: error_rate(&logits, &test.labels),
        weights,
        train_loss,
    })
}

/// Softmax regression under the same protocol, as a reference point.
pub fn train_linear_baseline(
    train: &LabeledSet,
    test: &LabeledSet,
    num_classes: usize,
    config: &RetrainConfig,
) -> Result<RetrainOutcome, EngineError> {
    let spec = StudentSpec::new(train.dim, &[], Activation::Identity, num_classes, Capacity::Small);
    let init = init_student_weights(&spec, config.seed)?;
    let (weights, train_loss) = descend(init, train, num_classes, config, |g, w, x| {
        Ok(student_forward(g, &spec, w, x)?)
    })?;
    let logits: Tensor = student_logits(&spec, &weights, &test.inputs()?)?;
    Ok(RetrainOutcome {
        test_error: error_rate(&logits, &test.labels),
        weights,
        train_loss,
    })
}
