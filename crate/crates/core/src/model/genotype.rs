use serde::{Deserialize, Serialize};

use super::{ArchParams, CandidateOp, CellTopology, ModelError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenotypeEdge {
    pub from: usize,
    pub to: usize,
    pub op: CandidateOp,
}

/// Discrete architecture: one selected operation per edge.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Genotype {
    pub topology: CellTopology,
    pub cells: usize,
    pub edges: Vec<GenotypeEdge>,
}

impl Genotype {
    pub fn op(&self, edge: usize) -> CandidateOp {
        self.edges[edge].op
    }

    pub fn uniform_op(topology: CellTopology, cells: usize, op: CandidateOp) -> Self {
        Genotype {
            topology,
            cells,
            edges: topology
                .edges()
                .into_iter()
                .map(|(from, to)| GenotypeEdge { from, to, op })
                .collect(),
        }
    }
}

/// Per edge, the candidate with the largest scalar among the non-`zero`
/// ops; ties go to the lowest candidate index.
pub fn derive_genotype(arch: &ArchParams) -> Genotype {
    let edges = arch
        .edges()
        .into_iter()
        .enumerate()
        .map(|(e, (from, to))| {
            let mut best: Option<(usize, f64)> = None;
            for (i, op) in arch.ops().iter().enumerate() {
                if *op == CandidateOp::Zero {
                    continue;
                }
                let s = arch.scalar(e, i);
                // strict comparison keeps the earliest index on ties
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((i, s));
                }
            }
            // an op set of only `zero` cannot be built (see ArchParams checks
            // in the teacher spec), identity is the fallback
            let op = best.map_or(CandidateOp::Identity, |(i, _)| arch.ops()[i]);
            GenotypeEdge { from, to, op }
        })
        .collect();
    Genotype {
        topology: arch.topology(),
        cells: arch.cells(),
        edges,
    }
}

/// JSON export: selected op per edge plus the raw scalar matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenotypeDocument {
    pub nodes: usize,
    pub cells: usize,
    pub ops: Vec<CandidateOp>,
    pub edges: Vec<GenotypeEdge>,
    pub scalars: Vec<Vec<f64>>,
}

impl GenotypeDocument {
    pub fn new(arch: &ArchParams) -> Self {
        let genotype = derive_genotype(arch);
        GenotypeDocument {
            nodes: arch.topology().nodes,
            cells: arch.cells(),
            ops: arch.ops().to_vec(),
            edges: genotype.edges,
            scalars: arch.rows(),
        }
    }

    pub fn genotype(&self) -> Result<Genotype, ModelError> {
        let topology = CellTopology::new(self.nodes);
        let expected = topology.edges();
        if expected.len() != self.edges.len()
            || expected
                .iter()
                .zip(&self.edges)
                .any(|(&(f, t), e)| e.from != f || e.to != t)
        {
            return Err(ModelError::InvalidSpec(format!(
                "genotype edges do not match a {}-node cell",
                self.nodes
            )));
        }
        if self.edges.iter().any(|e| e.op == CandidateOp::Zero) {
            return Err(ModelError::InvalidSpec("genotype selects `zero`".into()));
        }
        Ok(Genotype {
            topology,
            cells: self.cells,
            edges: self.edges.clone(),
        })
    }

    pub fn arch(&self) -> Result<ArchParams, ModelError> {
        let flat: Vec<f64> = self.scalars.iter().flatten().copied().collect();
        ArchParams::from_scalars(&self.ops, CellTopology::new(self.nodes), self.cells, flat)
    }
}
