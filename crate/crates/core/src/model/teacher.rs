use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundWeights, Graph, Tensor, Var, WeightSet};

use super::{ArchParams, CandidateOp, CellTopology, Genotype, ModelError};

/// Shape of the teacher supernet: a linear stem into `hidden_dim`, `cells`
/// stacked copies of one searchable cell, and a linear classifier head.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherSpec {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub num_classes: usize,
    pub topology: CellTopology,
    pub cells: usize,
    pub ops: Vec<CandidateOp>,
}

impl TeacherSpec {
    pub fn new(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        TeacherSpec {
            input_dim,
            hidden_dim,
            num_classes,
            topology: CellTopology::default(),
            cells: 1,
            ops: CandidateOp::ALL.to_vec(),
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.num_classes < 2 {
            return Err(ModelError::InvalidSpec(
                "teacher dimensions must be positive and K >= 2".into(),
            ));
        }
        if self.topology.nodes == 0 || self.cells == 0 {
            return Err(ModelError::InvalidSpec("teacher cell must have nodes".into()));
        }
        if self.ops.is_empty() {
            return Err(ModelError::InvalidSpec("empty candidate op set".into()));
        }
        for (i, op) in self.ops.iter().enumerate() {
            if self.ops[..i].contains(op) {
                return Err(ModelError::InvalidSpec(format!("duplicate op `{op}`")));
            }
        }
        Ok(())
    }

    pub fn init_arch(&self) -> Result<ArchParams, ModelError> {
        ArchParams::uniform(&self.ops, self.topology, self.cells)
    }

    /// Weight tensor name for op `op` on edge `edge` of cell `cell`.
    pub fn op_weight_name(cell: usize, edge: usize, op: CandidateOp, part: &str) -> String {
        format!("cell{cell}.edge{edge}.{}.{part}", op.name())
    }

    fn check_arch(&self, arch_rows: usize, arch_cols: usize) -> Result<(), ModelError> {
        if arch_rows != self.topology.num_edges() || arch_cols != self.ops.len() {
            return Err(ModelError::InvalidSpec(format!(
                "architecture is {arch_rows}x{arch_cols}, cell needs {}x{}",
                self.topology.num_edges(),
                self.ops.len()
            )));
        }
        Ok(())
    }
}

/// How edge outputs are combined.
#[derive(Clone, Copy, Debug)]
pub enum Mixing<'a> {
    /// Softmax-weighted sum over all candidates; the node holds the
    /// `[edges, ops]` scalar matrix.
    Soft(Var),
    /// Only the selected operation per edge.
    Hard(&'a Genotype),
}

fn apply_op(
    g: &mut Graph,
    op: CandidateOp,
    input: Var,
    weights: &BoundWeights,
    cell: usize,
    edge: usize,
) -> Result<Option<Var>, ModelError> {
    let linear = |g: &mut Graph| -> Result<Var, ModelError> {
        let w = weights.get(&TeacherSpec::op_weight_name(cell, edge, op, "w"))?;
        let b = weights.get(&TeacherSpec::op_weight_name(cell, edge, op, "b"))?;
        let z = g.matmul(input, w)?;
        Ok(g.add_row(z, b)?)
    };
    Ok(match op {
        CandidateOp::Zero => None,
        CandidateOp::Identity => Some(input),
        CandidateOp::Linear => Some(linear(g)?),
        CandidateOp::LinearTanh => {
            let z = linear(g)?;
            Some(g.tanh(z)?)
        }
        CandidateOp::LinearRelu => {
            let z = linear(g)?;
            Some(g.relu(z)?)
        }
    })
}

fn sum_terms(g: &mut Graph, terms: Vec<Var>, shape: &[usize]) -> Result<Var, ModelError> {
    let mut iter = terms.into_iter();
    let Some(mut acc) = iter.next() else {
        return Ok(g.constant(Tensor::zeros(shape)));
    };
    for t in iter {
        acc = g.add(acc, t)?;
    }
    Ok(acc)
}

/// Teacher logits `[n, K]` for an `[n, input_dim]` input node.
pub fn teacher_forward(
    g: &mut Graph,
    spec: &TeacherSpec,
    mixing: Mixing<'_>,
    weights: &BoundWeights,
    input: Var,
) -> Result<Var, ModelError> {
    let n = g.value(input).rows();
    let hidden_shape = [n, spec.hidden_dim];
    let edges = spec.topology.edges();
    let num_ops = spec.ops.len();

    let mix = match mixing {
        Mixing::Soft(arch) => {
            let t = g.value(arch);
            spec.check_arch(t.rows(), t.cols())?;
            Some(g.softmax(arch)?)
        }
        Mixing::Hard(genotype) => {
            if genotype.edges.len() != edges.len() {
                return Err(ModelError::InvalidSpec(
                    "genotype does not match cell topology".into(),
                ));
            }
            None
        }
    };
    let cells = match mixing {
        Mixing::Soft(_) => spec.cells,
        Mixing::Hard(genotype) => genotype.cells,
    };

    let stem_w = weights.get("stem.w")?;
    let stem_b = weights.get("stem.b")?;
    let z = g.matmul(input, stem_w)?;
    let mut h = g.add_row(z, stem_b)?;

    for cell in 0..cells {
        let mut states = vec![h];
        let mut edge = 0;
        for _to in 1..=spec.topology.nodes {
            let mut node_terms = Vec::new();
            for from in 0..states.len() {
                let src = states[from];
                let edge_out = match (mix, mixing) {
                    (Some(mix), _) => {
                        let mut terms = Vec::with_capacity(num_ops);
                        for (p, &op) in spec.ops.iter().enumerate() {
                            if let Some(out) = apply_op(g, op, src, weights, cell, edge)? {
                                let w = g.element(mix, edge * num_ops + p)?;
                                terms.push(g.scalar_mul(w, out)?);
                            }
                        }
                        sum_terms(g, terms, &hidden_shape)?
                    }
                    (None, Mixing::Hard(genotype)) => {
                        let op = genotype.op(edge);
                        match apply_op(g, op, src, weights, cell, edge)? {
                            Some(out) => out,
                            None => g.constant(Tensor::zeros(&hidden_shape)),
                        }
                    }
                    (None, Mixing::Soft(_)) => unreachable!("soft mixing always has weights"),
                };
                node_terms.push(edge_out);
                edge += 1;
            }
            let node = sum_terms(g, node_terms, &hidden_shape)?;
            states.push(node);
        }
        h = *states.last().expect("cell has at least one node");
    }

    let head_w = weights.get("head.w")?;
    let head_b = weights.get("head.b")?;
    let z = g.matmul(h, head_w)?;
    Ok(g.add_row(z, head_b)?)
}

/// Plain-tensor convenience wrapper around [`teacher_forward`].
pub fn teacher_logits(
    spec: &TeacherSpec,
    mixing: TensorMixing<'_>,
    weights: &WeightSet,
    inputs: &Tensor,
) -> Result<Tensor, ModelError> {
    let mut g = Graph::new();
    let bound = weights.bind_constant(&mut g);
    let x = g.constant(inputs.clone());
    let out = match mixing {
        TensorMixing::Soft(arch) => {
            let a = g.constant(arch.scalars().clone());
            teacher_forward(&mut g, spec, Mixing::Soft(a), &bound, x)?
        }
        TensorMixing::Hard(genotype) => teacher_forward(&mut g, spec, Mixing::Hard(genotype), &bound, x)?,
    };
    Ok(g.value(out).clone())
}

/// [`Mixing`] for callers holding plain values instead of graph nodes.
#[derive(Clone, Copy, Debug)]
pub enum TensorMixing<'a> {
    Soft(&'a ArchParams),
    Hard(&'a Genotype),
}
