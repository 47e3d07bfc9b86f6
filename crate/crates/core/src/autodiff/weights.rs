use serde::{Deserialize, Serialize};

use super::{AutodiffError, Graph, Tensor, Var};

/// Ordered, named collection of trainable tensors.
///
/// The entry order is the canonical parameter order: flattening, gradients
/// and updates all use it, so vectors from different code paths line up.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct WeightSet {
    entries: Vec<(String, Tensor)>,
}

impl WeightSet {
    pub fn new() -> Self {
        WeightSet::default()
    }

    pub fn push(&mut self, name: impl Into<String>, value: Tensor) -> Result<(), AutodiffError> {
        let name = name.into();
        if self.entries.iter().any(|(n, _)| *n == name) {
            return Err(AutodiffError::DuplicateParameter(name));
        }
        self.entries.push((name, value));
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor, AutodiffError> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| AutodiffError::UnboundParameter(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|(n, _)| n.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Number of tensors.
    pub fn num_tensors(&self) -> usize {
        self.entries.len()
    }

    /// Total scalar count.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_scalars());
        for (_, t) in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Same names and shapes, values taken from `flat`.
    pub fn with_flat(&self, flat: &[f64]) -> Result<WeightSet, AutodiffError> {
        if flat.len() != self.num_scalars() {
            return Err(AutodiffError::LengthMismatch {
                expected: self.num_scalars(),
                got: flat.len(),
            });
        }
        let mut offset = 0;
        let mut entries = Vec::with_capacity(self.entries.len());
        for (name, t) in &self.entries {
            let n = t.len();
            entries.push((name.clone(), t.with_data(flat[offset..offset + n].to_vec())?));
            offset += n;
        }
        Ok(WeightSet { entries })
    }

    /// `self + scale * direction`, elementwise over the flat vector.
    pub fn axpy(&self, scale: f64, direction: &[f64]) -> Result<WeightSet, AutodiffError> {
        let flat: Vec<f64> = self
            .flatten()
            .iter()
            .zip(direction)
            .map(|(w, d)| w + scale * d)
            .collect();
        self.with_flat(&flat)
    }

    /// Registers every tensor as a graph parameter named `prefix + name`.
    pub fn bind(&self, graph: &mut Graph, prefix: &str) -> Result<BoundWeights, AutodiffError> {
        let mut bound = BoundWeights::default();
        for (name, t) in &self.entries {
            let v = graph.param(&format!("{prefix}{name}"), t.clone())?;
            bound.names.push(name.clone());
            bound.vars.push(v);
        }
        Ok(bound)
    }

    /// Adds every tensor as an unnamed constant leaf.
    pub fn bind_constant(&self, graph: &mut Graph) -> BoundWeights {
        let mut bound = BoundWeights::default();
        for (name, t) in &self.entries {
            bound.names.push(name.clone());
            bound.vars.push(graph.constant(t.clone()));
        }
        bound
    }
}

/// Weight names mapped to graph nodes: either leaves or computed values
/// such as a virtual step `w - lr * grad`.
#[derive(Clone, Debug, Default)]
pub struct BoundWeights {
    names: Vec<String>,
    vars: Vec<Var>,
}

impl BoundWeights {
    pub fn from_parts(names: Vec<String>, vars: Vec<Var>) -> Self {
        assert_eq!(names.len(), vars.len());
        BoundWeights { names, vars }
    }

    pub fn get(&self, name: &str) -> Result<Var, AutodiffError> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.vars[i])
            .ok_or_else(|| AutodiffError::UnboundParameter(name.to_string()))
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// `w_i - rate * grad_i` for each bound tensor, as new graph nodes.
    pub fn descend(
        &self,
        graph: &mut Graph,
        grads: &[Var],
        rate: f64,
    ) -> Result<BoundWeights, AutodiffError> {
        let mut vars = Vec::with_capacity(self.vars.len());
        for (&w, &g) in self.vars.iter().zip(grads) {
            let step = graph.scale(g, rate)?;
            vars.push(graph.sub(w, step)?);
        }
        Ok(BoundWeights {
            names: self.names.clone(),
            vars,
        })
    }

    /// Concatenated values in bound order.
    pub fn flat_values(&self, graph: &Graph) -> Vec<f64> {
        self.vars
            .iter()
            .flat_map(|v| graph.value(*v).data().iter().copied())
            .collect()
    }
}

/// Concatenates the values of `vars`.
pub fn flat_values(graph: &Graph, vars: &[Var]) -> Vec<f64> {
    vars.iter()
        .flat_map(|v| graph.value(*v).data().iter().copied())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> WeightSet {
        let mut w = WeightSet::new();
        w.push("a", Tensor::vector(vec![1.0, 2.0]).unwrap()).unwrap();
        w.push("b", Tensor::matrix(1, 2, vec![3.0, 4.0]).unwrap()).unwrap();
        w
    }

    #[test]
    fn flatten_follows_insertion_order() {
        assert_eq!(sample().flatten(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(sample().num_scalars(), 4);
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut w = sample();
        assert!(matches!(
            w.push("a", Tensor::scalar(0.0)),
            Err(AutodiffError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn axpy_and_with_flat() {
        let w = sample();
        let moved = w.axpy(-0.5, &[2.0, 2.0, 2.0, 2.0]).unwrap();
        assert_eq!(moved.flatten(), vec![0.0, 1.0, 2.0, 3.0]);
        assert_eq!(moved.get("b").unwrap().shape(), &[1, 2]);
        assert!(w.with_flat(&[1.0]).is_err());
    }

    #[test]
    fn missing_name_is_unbound() {
        assert!(matches!(
            sample().get("zz"),
            Err(AutodiffError::UnboundParameter(_))
        ));
    }
}
