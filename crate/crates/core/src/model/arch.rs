use serde::{Deserialize, Serialize};

use crate::autodiff::{softmax_rows, Tensor};

use super::{CandidateOp, ModelError};

/// Dense DAG cell: node 0 is the cell input, nodes `1..=nodes` are
/// intermediate and each takes an edge from every predecessor. The last
/// node is the cell output.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CellTopology {
    pub nodes: usize,
}

impl CellTopology {
    pub fn new(nodes: usize) -> Self {
        CellTopology { nodes }
    }

    /// `(from, to)` pairs ordered by target node, then source.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for to in 1..=self.nodes {
            for from in 0..to {
                out.push((from, to));
            }
        }
        out
    }

    pub fn num_edges(&self) -> usize {
        self.nodes * (self.nodes + 1) / 2
    }
}

impl Default for CellTopology {
    fn default() -> Self {
        CellTopology { nodes: 4 }
    }
}

/// Architecture scalars: one row per edge, one column per candidate op.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchParams {
    ops: Vec<CandidateOp>,
    topology: CellTopology,
    cells: usize,
    scalars: Tensor,
}

impl ArchParams {
    /// All-zero scalars, i.e. uniform mixing on every edge.
    pub fn uniform(ops: &[CandidateOp], topology: CellTopology, cells: usize) -> Result<Self, ModelError> {
        let e = topology.num_edges();
        Self::from_scalars(ops, topology, cells, vec![0.0; e * ops.len()])
    }

    pub fn from_scalars(
        ops: &[CandidateOp],
        topology: CellTopology,
        cells: usize,
        scalars: Vec<f64>,
    ) -> Result<Self, ModelError> {
        if ops.is_empty() || topology.nodes == 0 || cells == 0 {
            return Err(ModelError::InvalidSpec(
                "architecture needs at least one op, node and cell".into(),
            ));
        }
        let e = topology.num_edges();
        let scalars = Tensor::matrix(e, ops.len(), scalars)?;
        Ok(ArchParams {
            ops: ops.to_vec(),
            topology,
            cells,
            scalars,
        })
    }

    pub fn ops(&self) -> &[CandidateOp] {
        &self.ops
    }

    pub fn topology(&self) -> CellTopology {
        self.topology
    }

    pub fn cells(&self) -> usize {
        self.cells
    }

    pub fn edges(&self) -> Vec<(usize, usize)> {
        self.topology.edges()
    }

    pub fn num_edges(&self) -> usize {
        self.topology.num_edges()
    }

    /// `[edges, ops]` scalar matrix.
    pub fn scalars(&self) -> &Tensor {
        &self.scalars
    }

    pub fn len(&self) -> usize {
        self.scalars.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scalars.is_empty()
    }

    pub fn flat(&self) -> &[f64] {
        self.scalars.data()
    }

    pub fn with_flat(&self, flat: &[f64]) -> Result<Self, ModelError> {
        Ok(ArchParams {
            scalars: self.scalars.with_data(flat.to_vec())?,
            ..self.clone()
        })
    }

    pub fn scalar(&self, edge: usize, op: usize) -> f64 {
        self.scalars.get(edge, op)
    }

    /// Per-edge softmax of the scalars.
    pub fn mixing_weights(&self) -> Tensor {
        softmax_rows(&self.scalars)
    }

    /// Row of scalars as `[edge][op]`.
    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.num_edges())
            .map(|e| self.scalars.row(e).to_vec())
            .collect()
    }
}
