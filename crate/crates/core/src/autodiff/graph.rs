//! Eager reverse-mode tape.
//!
//! Every primitive evaluates immediately and appends one node, so the node
//! list is topologically ordered by construction. [`Graph::backward`] emits
//! the adjoint computation as ordinary nodes on the same tape, which makes
//! the returned gradients differentiable in turn (gradient-of-gradient is
//! how the exact unrolled hypergradient is obtained).

use super::{AutodiffError, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    ScalarMul(Var, Var),
    AddRow(Var, Var),
    SumRows(Var),
    BroadcastRows(Var),
    SumCols(Var),
    BroadcastCols(Var),
    SumAll(Var),
    Fill(Var),
    Element(Var, usize),
    Scatter(Var, usize),
    Tanh(Var),
    Relu(Var),
    SoftmaxRows(Var),
    Log(Var),
    ClampMin(Var, f64),
}

impl Op {
    fn inputs(&self) -> [Option<Var>; 2] {
        use Op::*;
        match *self {
            Leaf => [None, None],
            MatMul(a, b) | Add(a, b) | Sub(a, b) | Mul(a, b) | Div(a, b) | ScalarMul(a, b)
            | AddRow(a, b) => [Some(a), Some(b)],
            Transpose(a) | Scale(a, _) | SumRows(a) | BroadcastRows(a) | SumCols(a)
            | BroadcastCols(a) | SumAll(a) | Fill(a) | Element(a, _) | Scatter(a, _)
            | Tanh(a) | Relu(a) | SoftmaxRows(a) | Log(a) | ClampMin(a, _) => [Some(a), None],
        }
    }
}

#[derive(Clone, Debug)]
struct Node {
    op: Op,
    value: Tensor,
}

/// Computation graph plus the parameter names bound on it.
#[derive(Clone, Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
}

fn check_finite(op: &'static str, data: &[f64]) -> Result<(), AutodiffError> {
    if data.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AutodiffError::NonFinite { op })
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> AutodiffError {
    AutodiffError::ShapeMismatch {
        op,
        left: a.shape().to_vec(),
        right: b.shape().to_vec(),
    }
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Scalar value of a single-element node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, op: Op, value: Tensor) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    fn push_checked(&mut self, name: &'static str, op: Op, value: Tensor) -> Result<Var, AutodiffError> {
        check_finite(name, value.data())?;
        Ok(self.push(op, value))
    }

    /// Registers a named trainable leaf. Each name may be bound once.
    pub fn param(&mut self, name: &str, value: Tensor) -> Result<Var, AutodiffError> {
        if self.params.iter().any(|(n, _)| n == name) {
            return Err(AutodiffError::DuplicateParameter(name.to_string()));
        }
        check_finite("param", value.data())?;
        let v = self.push(Op::Leaf, value);
        self.params.push((name.to_string(), v));
        Ok(v)
    }

    /// Unnamed leaf (data, targets, masks). Gradients never flow into it
    /// unless it is explicitly listed in a `backward` call.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(Op::Leaf, value)
    }

    pub fn param_var(&self, name: &str) -> Result<Var, AutodiffError> {
        self.params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| *v)
            .ok_or_else(|| AutodiffError::UnknownParameter(name.to_string()))
    }

    /// Parameter names in registration order.
    pub fn param_names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|(n, _)| n.as_str())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 2 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("matmul", ta, tb));
        }
        let (m, k, n) = (ta.shape()[0], ta.shape()[1], tb.shape()[1]);
        let (da, db) = (ta.data(), tb.data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = da[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &db[p * n..(p + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        self.push_checked("matmul", Op::MatMul(a, b), Tensor::from_parts(vec![m, n], out))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(AutodiffError::InvalidShape {
                op: "transpose",
                shape: ta.shape().to_vec(),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let d = ta.data();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = d[i * n + j];
            }
        }
        Ok(self.push(Op::Transpose(a), Tensor::from_parts(vec![n, m], out)))
    }

    fn zip_same(
        &mut self,
        name: &'static str,
        a: Var,
        b: Var,
        op: Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, ta, tb));
        }
        let out: Vec<f64> = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let shape = ta.shape().to_vec();
        self.push_checked(name, op, Tensor::from_parts(shape, out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same("add", a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same("sub", a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same("mul", a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        self.zip_same("div", a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| x * c);
        self.push_checked("scale", Op::Scale(a, c), out)
    }

    /// `s * a` for a single-element `s`.
    pub fn scalar_mul(&mut self, s: Var, a: Var) -> Result<Var, AutodiffError> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(mismatch("scalar_mul", ts, self.value(a)));
        }
        let c = ts.item();
        let out = self.value(a).map(|x| c * x);
        self.push_checked("scalar_mul", Op::ScalarMul(s, a), out)
    }

    /// Adds a length-n vector to every row of an `[m, n]` matrix.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var, AutodiffError> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.rank() != 2 || tb.rank() != 1 || ta.shape()[1] != tb.shape()[0] {
            return Err(mismatch("add_row", ta, tb));
        }
        let n = tb.len();
        let bias = tb.data();
        let out: Vec<f64> = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| x + bias[i % n])
            .collect();
        let shape = ta.shape().to_vec();
        self.push_checked("add_row", Op::AddRow(a, b), Tensor::from_parts(shape, out))
    }

    /// Column sums of an `[m, n]` matrix, giving `[n]`.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(AutodiffError::InvalidShape {
                op: "sum_rows",
                shape: ta.shape().to_vec(),
            });
        }
        let n = ta.shape()[1];
        let mut out = vec![0.0; n];
        for row in ta.data().chunks(n) {
            for (o, &x) in out.iter_mut().zip(row) {
                *o += x;
            }
        }
        self.push_checked("sum_rows", Op::SumRows(a), Tensor::from_parts(vec![n], out))
    }

    /// Repeats an `[n]` vector `m` times, giving `[m, n]`.
    pub fn broadcast_rows(&mut self, a: Var, m: usize) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.rank() != 1 || m == 0 {
            return Err(AutodiffError::InvalidShape {
                op: "broadcast_rows",
                shape: ta.shape().to_vec(),
            });
        }
        let n = ta.len();
        let out = ta.data().repeat(m);
        Ok(self.push(Op::BroadcastRows(a), Tensor::from_parts(vec![m, n], out)))
    }

    /// Row sums of an `[m, n]` matrix, giving `[m]`.
    pub fn sum_cols(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.rank() != 2 {
            return Err(AutodiffError::InvalidShape {
                op: "sum_cols",
                shape: ta.shape().to_vec(),
            });
        }
        let (m, n) = (ta.shape()[0], ta.shape()[1]);
        let out: Vec<f64> = ta.data().chunks(n).map(|r| r.iter().sum()).collect();
        self.push_checked("sum_cols", Op::SumCols(a), Tensor::from_parts(vec![m], out))
    }

    /// Repeats each entry of an `[m]` vector across `n` columns, giving `[m, n]`.
    pub fn broadcast_cols(&mut self, a: Var, n: usize) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.rank() != 1 || n == 0 {
            return Err(AutodiffError::InvalidShape {
                op: "broadcast_cols",
                shape: ta.shape().to_vec(),
            });
        }
        let m = ta.len();
        let out: Vec<f64> = ta
            .data()
            .iter()
            .flat_map(|&x| std::iter::repeat_n(x, n))
            .collect();
        Ok(self.push(Op::BroadcastCols(a), Tensor::from_parts(vec![m, n], out)))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let s: f64 = self.value(a).data().iter().sum();
        self.push_checked("sum_all", Op::SumAll(a), Tensor::scalar(s))
    }

    /// Broadcasts a single-element tensor to `shape`.
    pub fn fill(&mut self, s: Var, shape: &[usize]) -> Result<Var, AutodiffError> {
        let ts = self.value(s);
        if ts.len() != 1 {
            return Err(AutodiffError::InvalidShape {
                op: "fill",
                shape: ts.shape().to_vec(),
            });
        }
        let out = Tensor::filled(shape, ts.item());
        Ok(self.push(Op::Fill(s), out))
    }

    /// Picks one entry (row-major flat index) as a scalar.
    pub fn element(&mut self, a: Var, index: usize) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if index >= ta.len() {
            return Err(AutodiffError::InvalidShape {
                op: "element",
                shape: ta.shape().to_vec(),
            });
        }
        let v = ta.data()[index];
        Ok(self.push(Op::Element(a, index), Tensor::scalar(v)))
    }

    /// Zero tensor of `shape` holding the scalar `s` at `index`.
    pub fn scatter(&mut self, s: Var, index: usize, shape: &[usize]) -> Result<Var, AutodiffError> {
        let ts = self.value(s);
        let n: usize = shape.iter().product();
        if ts.len() != 1 || index >= n {
            return Err(AutodiffError::InvalidShape {
                op: "scatter",
                shape: shape.to_vec(),
            });
        }
        let mut data = vec![0.0; n];
        data[index] = ts.item();
        Ok(self.push(Op::Scatter(s, index), Tensor::from_parts(shape.to_vec(), data)))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(f64::tanh);
        self.push_checked("tanh", Op::Tanh(a), out)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        Ok(self.push(Op::Relu(a), out))
    }

    /// Softmax over each row; a vector is treated as a single row.
    pub fn softmax(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let ta = self.value(a);
        if ta.rank() == 0 || ta.rank() > 2 {
            return Err(AutodiffError::InvalidShape {
                op: "softmax",
                shape: ta.shape().to_vec(),
            });
        }
        let out = super::softmax_rows(ta);
        self.push_checked("softmax", Op::SoftmaxRows(a), out)
    }

    pub fn log(&mut self, a: Var) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(f64::ln);
        self.push_checked("log", Op::Log(a), out)
    }

    /// `max(a, floor)` elementwise; the derivative is zero where clamped.
    pub fn clamp_min(&mut self, a: Var, floor: f64) -> Result<Var, AutodiffError> {
        let out = self.value(a).map(|x| x.max(floor));
        self.push_checked("clamp_min", Op::ClampMin(a, floor), out)
    }

    /// Reverse pass from the scalar `loss` to each of `wrt`.
    ///
    /// The adjoints are built as nodes on this graph, so a returned gradient
    /// can itself be differentiated. Inputs unreachable from `loss` receive a
    /// zero constant.
    pub fn backward(&mut self, loss: Var, wrt: &[Var]) -> Result<Vec<Var>, AutodiffError> {
        if self.value(loss).len() != 1 {
            return Err(AutodiffError::NonScalarLoss(self.value(loss).shape().to_vec()));
        }
        let end = loss.0 + 1;
        let mut depends = vec![false; end];
        for w in wrt {
            if w.0 < end {
                depends[w.0] = true;
            }
        }
        for i in 0..end {
            if depends[i] {
                continue;
            }
            let inputs = self.nodes[i].op.inputs();
            depends[i] = inputs.iter().flatten().any(|v| depends[v.0]);
        }

        let mut adjoint: Vec<Option<Var>> = vec![None; end];
        if depends[loss.0] {
            let shape = self.value(loss).shape().to_vec();
            adjoint[loss.0] = Some(self.constant(Tensor::filled(&shape, 1.0)));
        }
        for i in (0..end).rev() {
            let Some(g) = adjoint[i] else { continue };
            if !depends[i] {
                continue;
            }
            let op = self.nodes[i].op.clone();
            let y = Var(i);
            let contributions = self.adjoint_rule(&op, y, g, &depends)?;
            for (input, grad) in contributions {
                adjoint[input.0] = Some(match adjoint[input.0] {
                    Some(prev) => self.add(prev, grad)?,
                    None => grad,
                });
            }
        }

        wrt.iter()
            .map(|w| {
                let existing = if w.0 < end { adjoint[w.0] } else { None };
                Ok(match existing {
                    Some(g) => g,
                    None => {
                        let shape = self.value(*w).shape().to_vec();
                        self.constant(Tensor::zeros(&shape))
                    }
                })
            })
            .collect()
    }

    fn adjoint_rule(
        &mut self,
        op: &Op,
        y: Var,
        g: Var,
        depends: &[bool],
    ) -> Result<Vec<(Var, Var)>, AutodiffError> {
        let need = |v: Var| depends[v.0];
        let mut out = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if need(a) {
                    let bt = self.transpose(b)?;
                    out.push((a, self.matmul(g, bt)?));
                }
                if need(b) {
                    let at = self.transpose(a)?;
                    out.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => out.push((a, self.transpose(g)?)),
            Op::Add(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, self.scale(g, -1.0)?));
                }
            }
            Op::Mul(a, b) => {
                if need(a) {
                    out.push((a, self.mul(g, b)?));
                }
                if need(b) {
                    out.push((b, self.mul(g, a)?));
                }
            }
            Op::Div(a, b) => {
                if need(a) {
                    out.push((a, self.div(g, b)?));
                }
                if need(b) {
                    let gy = self.mul(g, y)?;
                    let q = self.div(gy, b)?;
                    out.push((b, self.scale(q, -1.0)?));
                }
            }
            Op::Scale(a, c) => out.push((a, self.scale(g, c)?)),
            Op::ScalarMul(s, a) => {
                if need(s) {
                    let ga = self.mul(g, a)?;
                    out.push((s, self.sum_all(ga)?));
                }
                if need(a) {
                    out.push((a, self.scalar_mul(s, g)?));
                }
            }
            Op::AddRow(a, b) => {
                if need(a) {
                    out.push((a, g));
                }
                if need(b) {
                    out.push((b, self.sum_rows(g)?));
                }
            }
            Op::SumRows(a) => {
                let m = self.value(a).shape()[0];
                out.push((a, self.broadcast_rows(g, m)?));
            }
            Op::BroadcastRows(a) => out.push((a, self.sum_rows(g)?)),
            Op::SumCols(a) => {
                let n = self.value(a).shape()[1];
                out.push((a, self.broadcast_cols(g, n)?));
            }
            Op::BroadcastCols(a) => out.push((a, self.sum_cols(g)?)),
            Op::SumAll(a) => {
                let shape = self.value(a).shape().to_vec();
                out.push((a, self.fill(g, &shape)?));
            }
            Op::Fill(s) => out.push((s, self.sum_all(g)?)),
            Op::Element(a, idx) => {
                let shape = self.value(a).shape().to_vec();
                out.push((a, self.scatter(g, idx, &shape)?));
            }
            Op::Scatter(s, idx) => out.push((s, self.element(g, idx)?)),
            Op::Tanh(a) => {
                // g * (1 - y^2)
                let yy = self.mul(y, y)?;
                let gyy = self.mul(g, yy)?;
                out.push((a, self.sub(g, gyy)?));
            }
            Op::Relu(a) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                out.push((a, self.mul(g, mask)?));
            }
            Op::SoftmaxRows(a) => {
                // y * (g - rowsum(g * y))
                let gy = self.mul(g, y)?;
                let shape = self.value(a).shape().to_vec();
                let inner = if shape.len() == 1 {
                    let s = self.sum_all(gy)?;
                    self.fill(s, &shape)?
                } else {
                    let s = self.sum_cols(gy)?;
                    self.broadcast_cols(s, shape[1])?
                };
                let diff = self.sub(g, inner)?;
                out.push((a, self.mul(y, diff)?));
            }
            Op::Log(a) => out.push((a, self.div(g, a)?)),
            Op::ClampMin(a, floor) => {
                let mask = self.value(a).map(|x| if x > floor { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                out.push((a, self.mul(g, mask)?));
            }
        }
        Ok(out)
    }

    /// Flat gradient of `loss` with respect to the named parameters.
    ///
    /// Output is concatenated in parameter registration order regardless of
    /// the order of `names`.
    pub fn gradient(&mut self, loss: Var, names: &[&str]) -> Result<Vec<f64>, AutodiffError> {
        let mut selected = Vec::with_capacity(names.len());
        for name in names {
            selected.push(self.param_var(name)?);
        }
        selected.sort_by_key(|v| v.0);
        selected.dedup();
        let grads = self.backward(loss, &selected)?;
        Ok(grads
            .iter()
            .flat_map(|g| self.value(*g).data().to_vec())
            .collect())
    }
}
