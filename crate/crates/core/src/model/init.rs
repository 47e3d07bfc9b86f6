use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{Tensor, WeightSet};

use super::{CandidateOp, Genotype, ModelError, StudentSpec, TeacherSpec};

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for both weight and bias.
fn push_linear(
    set: &mut WeightSet,
    rng: &mut ChaCha8Rng,
    name: &str,
    fan_in: usize,
    fan_out: usize,
) -> Result<(), ModelError> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let w: Vec<f64> = (0..fan_in * fan_out)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    let b: Vec<f64> = (0..fan_out).map(|_| rng.random_range(-bound..bound)).collect();
    set.push(format!("{name}.w"), Tensor::matrix(fan_in, fan_out, w)?)?;
    set.push(format!("{name}.b"), Tensor::vector(b)?)?;
    Ok(())
}

fn teacher_weights(
    spec: &TeacherSpec,
    seed: u64,
    cells: usize,
    mut op_for: impl FnMut(usize, CandidateOp) -> bool,
) -> Result<WeightSet, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = WeightSet::new();
    let h = spec.hidden_dim;
    push_linear(&mut set, &mut rng, "stem", spec.input_dim, h)?;
    for cell in 0..cells {
        for edge in 0..spec.topology.num_edges() {
            for &op in &spec.ops {
                if op.has_weights() && op_for(edge, op) {
                    let name = format!("cell{cell}.edge{edge}.{}", op.name());
                    push_linear(&mut set, &mut rng, &name, h, h)?;
                }
            }
        }
    }
    push_linear(&mut set, &mut rng, "head", h, spec.num_classes)?;
    Ok(set)
}

/// Supernet weights: every parametric candidate on every edge of every cell.
pub fn init_teacher_weights(spec: &TeacherSpec, seed: u64) -> Result<WeightSet, ModelError> {
    teacher_weights(spec, seed, spec.cells, |_, _| true)
}

/// Weights for a discrete network built from `genotype` (cell count taken
/// from the genotype).
pub fn init_discrete_weights(
    spec: &TeacherSpec,
    genotype: &Genotype,
    seed: u64,
) -> Result<WeightSet, ModelError> {
    if genotype.edges.len() != spec.topology.num_edges() {
        return Err(ModelError::InvalidSpec(
            "genotype does not match teacher topology".into(),
        ));
    }
    teacher_weights(spec, seed, genotype.cells, |edge, op| genotype.op(edge) == op)
}

pub fn init_student_weights(spec: &StudentSpec, seed: u64) -> Result<WeightSet, ModelError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = WeightSet::new();
    for layer in 0..spec.num_layers() {
        push_linear(
            &mut set,
            &mut rng,
            &format!("layer{layer}"),
            spec.widths[layer],
            spec.widths[layer + 1],
        )?;
    }
    Ok(set)
}
