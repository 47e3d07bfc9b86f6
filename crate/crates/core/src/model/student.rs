use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundWeights, Graph, Tensor, Var, WeightSet};

use super::ModelError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

/// Stand-in for a smaller vs larger human-designed student.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Capacity {
    Small,
    Large,
}

/// Fixed feed-forward classifier. `widths` runs from the input dimension to
/// the class count; `activations` has one entry per hidden layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StudentSpec {
    pub widths: Vec<usize>,
    pub activations: Vec<Activation>,
    pub capacity: Capacity,
}

impl StudentSpec {
    pub fn new(
        input_dim: usize,
        hidden: &[usize],
        activation: Activation,
        num_classes: usize,
        capacity: Capacity,
    ) -> Self {
        let mut widths = vec![input_dim];
        widths.extend_from_slice(hidden);
        widths.push(num_classes);
        StudentSpec {
            widths,
            activations: vec![activation; hidden.len()],
            capacity,
        }
    }

    pub fn small(input_dim: usize, num_classes: usize) -> Self {
        Self::new(input_dim, &[8], Activation::Tanh, num_classes, Capacity::Small)
    }

    pub fn large(input_dim: usize, num_classes: usize) -> Self {
        Self::new(input_dim, &[32, 32], Activation::Tanh, num_classes, Capacity::Large)
    }

    pub fn for_capacity(capacity: Capacity, input_dim: usize, num_classes: usize) -> Self {
        match capacity {
            Capacity::Small => Self::small(input_dim, num_classes),
            Capacity::Large => Self::large(input_dim, num_classes),
        }
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len().saturating_sub(1)
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().expect("validated spec")
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(ModelError::InvalidSpec("student needs positive widths".into()));
        }
        if self.activations.len() + 2 != self.widths.len() {
            return Err(ModelError::InvalidSpec(
                "one activation per hidden layer".into(),
            ));
        }
        Ok(())
    }
}

/// Student logits `[n, K]`.
pub fn student_forward(
    g: &mut Graph,
    spec: &StudentSpec,
    weights: &BoundWeights,
    input: Var,
) -> Result<Var, ModelError> {
    spec.validate()?;
    let mut h = input;
    for layer in 0..spec.num_layers() {
        let w = weights.get(&format!("layer{layer}.w"))?;
        let b = weights.get(&format!("layer{layer}.b"))?;
        let z = g.matmul(h, w)?;
        h = g.add_row(z, b)?;
        if let Some(act) = spec.activations.get(layer) {
            h = match act {
                Activation::Identity => h,
                Activation::Tanh => g.tanh(h)?,
                Activation::Relu => g.relu(h)?,
            };
        }
    }
    Ok(h)
}

pub fn student_logits(spec: &StudentSpec, weights: &WeightSet, inputs: &Tensor) -> Result<Tensor, ModelError> {
    let mut g = Graph::new();
    let bound = weights.bind_constant(&mut g);
    let x = g.constant(inputs.clone());
    let out = student_forward(&mut g, spec, &bound, x)?;
    Ok(g.value(out).clone())
}
