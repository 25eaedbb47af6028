use crate::tensor::Tensor;
use crate::{Error, Result};

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Deliberately wrong backward rules, for testing that gradient checks catch them.
/// The selected op passes twice the correct gradient to its input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    Sigmoid,
    Softmax,
    MatMul,
    LayerNorm,
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Relu(Var),
    Sigmoid(Var),
    Exp(Var),
    Log(Var),
    Softmax(Var),
    LogSoftmax(Var),
    LayerNorm(Var, Vec<f64>),
    Gather(Var, Vec<usize>),
    Transpose(Var),
    Reshape(Var),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize),
    Sum(Var),
    Mean(Var),
    SumAxis(Var, usize),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A tape of tensor operations. Nodes are appended in evaluation order, which is
/// therefore a topological order of the computation.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    fault: Option<Fault>,
}

/// Gradients of a scalar with respect to every node that requires them.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// The gradient, or zeros shaped like `like` when no path reached `v`.
    pub fn wrt(&self, v: Var, like: &Tensor) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(like.shape()))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn shape_err<T>(op: &str, a: &[usize], b: &[usize]) -> Result<T> {
    Err(Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}")))
}

impl Graph {
    pub fn new() -> Self {
        Graph::default()
    }

    pub fn with_fault(fault: Fault) -> Self {
        Graph { nodes: Vec::new(), fault: Some(fault) }
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

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn leaf(&mut self, t: Tensor, requires_grad: bool) -> Result<Var> {
        if !t.is_finite() {
            return Err(Error::Numeric { op: "leaf" });
        }
        self.nodes.push(Node { value: t, op: Op::Leaf, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A leaf that receives no gradient.
    pub fn constant(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, false)
    }

    /// A leaf whose gradient is tracked.
    pub fn param(&mut self, t: Tensor) -> Result<Var> {
        self.leaf(t, true)
    }

    fn push(&mut self, name: &'static str, value: Tensor, op: Op, parents: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::Numeric { op: name });
        }
        let requires_grad = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        self.nodes.push(Node { value, op, requires_grad });
        Ok(Var(self.nodes.len() - 1))
    }

    fn dims2(&self, v: Var) -> Result<(usize, usize)> {
        self.value(v).dims2()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push("matmul", out, Op::MatMul(a, b), &[a, b])
    }

    fn zip(&self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return shape_err(name, x.shape(), y.shape());
        }
        Tensor::new(x.shape(), x.data().iter().zip(y.data()).map(|(&p, &q)| f(p, q)).collect())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("add", a, b, |x, y| x + y)?;
        self.push("add", out, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("sub", a, b, |x, y| x - y)?;
        self.push("sub", out, Op::Sub(a, b), &[a, b])
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("mul", a, b, |x, y| x * y)?;
        self.push("mul", out, Op::Mul(a, b), &[a, b])
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip("div", a, b, |x, y| x / y)?;
        self.push("div", out, Op::Div(a, b), &[a, b])
    }

    fn row_operand(&self, name: &str, a: Var, b: Var) -> Result<(usize, usize)> {
        let (r, c) = self.dims2(a)?;
        let bs = self.shape(b);
        if !(bs == [c] || bs == [1, c]) {
            return shape_err(name, self.shape(a), bs);
        }
        Ok((r, c))
    }

    /// `a[i, j] + b[j]`; `b` has shape `[n]` or `[1, n]`.
    pub fn add_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.row_operand("add_row", a, b)?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let out = Tensor::new(&[r, c], (0..r * c).map(|i| x[i] + y[i % c]).collect())?;
        self.push("add_row", out, Op::AddRow(a, b), &[a, b])
    }

    /// `a[i, j] * b[j]`.
    pub fn mul_row(&mut self, a: Var, b: Var) -> Result<Var> {
        let (r, c) = self.row_operand("mul_row", a, b)?;
        let (x, y) = (self.value(a).data(), self.value(b).data());
        let out = Tensor::new(&[r, c], (0..r * c).map(|i| x[i] * y[i % c]).collect())?;
        self.push("mul_row", out, Op::MulRow(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x * s);
        self.push("scale", out, Op::Scale(a, s), &[a])
    }

    pub fn add_scalar(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).map(|x| x + s);
        self.push("add_scalar", out, Op::AddScalar(a), &[a])
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.scale(a, -1.0)
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|x| x.max(0.0));
        self.push("relu", out, Op::Relu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a), &[a])
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::exp);
        self.push("exp", out, Op::Exp(a), &[a])
    }

    /// Natural log; non-positive inputs trip the numeric guard.
    pub fn log(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(f64::ln);
        self.push("log", out, Op::Log(a), &[a])
    }

    /// Row-wise softmax of `a + mask`. The mask is not differentiated and may hold
    /// `-inf` to exclude entries; a fully masked row is a numeric error.
    pub fn softmax(&mut self, a: Var, mask: Option<&Tensor>) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        if let Some(m) = mask {
            if m.shape() != [r, c] {
                return shape_err("softmax mask", &[r, c], m.shape());
            }
        }
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row: Vec<f64> = (0..c).map(|j| x[i * c + j] + mask.map_or(0.0, |m| m.data()[i * c + j])).collect();
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = e.iter().sum();
            for j in 0..c {
                out[i * c + j] = e[j] / s;
            }
        }
        self.push("softmax", Tensor::new(&[r, c], out)?, Op::Softmax(a), &[a])
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            for j in 0..c {
                out[i * c + j] = row[j] - lse;
            }
        }
        self.push("log_softmax", Tensor::new(&[r, c], out)?, Op::LogSoftmax(a), &[a])
    }

    /// Per-row standardization `(x - mean) / sqrt(var + eps)` with the biased
    /// variance. No affine part.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; r * c];
        let mut inv_std = Vec::with_capacity(r);
        for i in 0..r {
            let row = &x[i * c..(i + 1) * c];
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + eps).sqrt();
            for j in 0..c {
                out[i * c + j] = (row[j] - mean) * is;
            }
            inv_std.push(is);
        }
        self.push("layer_norm", Tensor::new(&[r, c], out)?, Op::LayerNorm(a, inv_std), &[a])
    }

    /// `out.data[i] = a.data[index[i]]`, reshaped to `shape`.
    pub fn gather(&mut self, a: Var, index: Vec<usize>, shape: &[usize]) -> Result<Var> {
        let x = self.value(a).data();
        if let Some(&bad) = index.iter().find(|&&i| i >= x.len()) {
            return Err(Error::Input(format!("gather index {bad} out of range for {} values", x.len())));
        }
        let out = Tensor::new(shape, index.iter().map(|&i| x[i]).collect())?;
        self.push("gather", out, Op::Gather(a, index), &[a])
    }

    /// Rows of `table` selected by `ids`.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let (v, d) = self.dims2(table)?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::Input(format!("token index {bad} out of range for vocabulary of {v}")));
        }
        let index = ids.iter().flat_map(|&i| (i * d)..(i + 1) * d).collect();
        self.gather(table, index, &[ids.len(), d])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).transposed()?;
        self.push("transpose", out, Op::Transpose(a), &[a])
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(a).clone().reshaped(shape)?;
        self.push("reshape", out, Op::Reshape(a), &[a])
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let r = match parts.first() {
            Some(&p) => self.dims2(p)?.0,
            None => return Err(Error::Input("concat of nothing".into())),
        };
        let mut widths = Vec::with_capacity(parts.len());
        for &p in parts {
            let (pr, pc) = self.dims2(p)?;
            if pr != r {
                return shape_err("concat_cols", self.shape(parts[0]), self.shape(p));
            }
            widths.push(pc);
        }
        let c: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * c);
        for i in 0..r {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push("concat_cols", Tensor::new(&[r, c], out)?, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let c = match parts.first() {
            Some(&p) => self.dims2(p)?.1,
            None => return Err(Error::Input("concat of nothing".into())),
        };
        let mut out = Vec::new();
        let mut r = 0;
        for &p in parts {
            let (pr, pc) = self.dims2(p)?;
            if pc != c {
                return shape_err("concat_rows", self.shape(parts[0]), self.shape(p));
            }
            out.extend_from_slice(self.value(p).data());
            r += pr;
        }
        self.push("concat_rows", Tensor::new(&[r, c], out)?, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        if start > end || end > c {
            return Err(Error::Shape(format!("column range {start}..{end} outside 0..{c}")));
        }
        let x = self.value(a);
        let out = (0..r).flat_map(|i| x.row(i)[start..end].to_vec()).collect();
        self.push("slice_cols", Tensor::new(&[r, end - start], out)?, Op::SliceCols(a, start), &[a])
    }

    /// Sum of all entries, as a scalar.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).data().iter().sum();
        self.push("sum", Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::Input("mean of an empty tensor".into()));
        }
        let m = x.data().iter().sum::<f64>() / x.len() as f64;
        self.push("mean", Tensor::scalar(m), Op::Mean(a), &[a])
    }

    /// Sums a matrix along `axis`: 0 gives `[1, cols]`, 1 gives `[rows, 1]`.
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Result<Var> {
        let (r, c) = self.dims2(a)?;
        let x = self.value(a);
        let out = match axis {
            0 => Tensor::new(&[1, c], (0..c).map(|j| (0..r).map(|i| x.get2(i, j)).sum()).collect())?,
            1 => Tensor::new(&[r, 1], (0..r).map(|i| x.row(i).iter().sum()).collect())?,
            _ => return Err(Error::Input(format!("axis {axis} out of range for a matrix"))),
        };
        self.push("sum_axis", out, Op::SumAxis(a, axis), &[a])
    }

    /// Reverse-mode gradients of the single-element node `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Input(format!("loss must be scalar, has shape {:?}", self.shape(loss))));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.shape(loss), 1.0));
        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn faulty(&self, f: Fault, t: Tensor) -> Tensor {
        if self.fault == Some(f) {
            t.map(|v| 2.0 * v)
        } else {
            t
        }
    }

    fn acc(&self, grads: &mut [Option<Tensor>], v: Var, g: Tensor) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(t) => t.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn propagate(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let y = &node.value;
        let zip = |a: &Tensor, f: &dyn Fn(f64, f64) -> f64| -> Tensor {
            Tensor::new(g.shape(), g.data().iter().zip(a.data()).map(|(&gv, &av)| f(gv, av)).collect())
                .expect("gradient matches node shape")
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    let ga = g.matmul(&bv.transposed()?)?;
                    self.acc(grads, *a, self.faulty(Fault::MatMul, ga));
                }
                if self.requires_grad(*b) {
                    self.acc(grads, *b, av.transposed()?.matmul(g)?);
                }
            }
            Op::Add(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.acc(grads, *a, g.clone());
                self.acc(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                self.acc(grads, *a, zip(self.value(*b), &|gv, bv| gv * bv));
                self.acc(grads, *b, zip(self.value(*a), &|gv, av| gv * av));
            }
            Op::Div(a, b) => {
                let bv = self.value(*b);
                self.acc(grads, *a, zip(bv, &|gv, q| gv / q));
                let ga: Vec<f64> = (0..g.len()).map(|i| -g.data()[i] * y.data()[i] / bv.data()[i]).collect();
                self.acc(grads, *b, Tensor::new(bv.shape(), ga)?);
            }
            Op::AddRow(a, b) => {
                self.acc(grads, *a, g.clone());
                let (r, c) = g.dims2()?;
                let gb = (0..c).map(|j| (0..r).map(|i| g.get2(i, j)).sum()).collect();
                self.acc(grads, *b, Tensor::new(self.shape(*b), gb)?);
            }
            Op::MulRow(a, b) => {
                let (r, c) = g.dims2()?;
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                let ga = (0..r * c).map(|i| g.data()[i] * bv[i % c]).collect();
                self.acc(grads, *a, Tensor::new(&[r, c], ga)?);
                let gb = (0..c).map(|j| (0..r).map(|i| g.get2(i, j) * av[i * c + j]).sum()).collect();
                self.acc(grads, *b, Tensor::new(self.shape(*b), gb)?);
            }
            Op::Scale(a, s) => self.acc(grads, *a, g.map(|v| v * s)),
            Op::AddScalar(a) => self.acc(grads, *a, g.clone()),
            Op::Relu(a) => {
                let ga = zip(self.value(*a), &|gv, x| if x > 0.0 { gv } else { 0.0 });
                self.acc(grads, *a, ga);
            }
            Op::Sigmoid(a) => {
                let ga = zip(y, &|gv, s| gv * s * (1.0 - s));
                self.acc(grads, *a, self.faulty(Fault::Sigmoid, ga));
            }
            Op::Exp(a) => self.acc(grads, *a, zip(y, &|gv, e| gv * e)),
            Op::Log(a) => self.acc(grads, *a, zip(self.value(*a), &|gv, x| gv / x)),
            Op::Softmax(a) => {
                let (r, c) = y.dims2()?;
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let dot: f64 = yr.iter().zip(gr).map(|(p, q)| p * q).sum();
                    for j in 0..c {
                        ga[i * c + j] = yr[j] * (gr[j] - dot);
                    }
                }
                self.acc(grads, *a, self.faulty(Fault::Softmax, Tensor::new(&[r, c], ga)?));
            }
            Op::LogSoftmax(a) => {
                let (r, c) = y.dims2()?;
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let gs: f64 = gr.iter().sum();
                    for j in 0..c {
                        ga[i * c + j] = gr[j] - yr[j].exp() * gs;
                    }
                }
                self.acc(grads, *a, Tensor::new(&[r, c], ga)?);
            }
            Op::LayerNorm(a, inv_std) => {
                let (r, c) = y.dims2()?;
                let n = c as f64;
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    let (yr, gr) = (y.row(i), g.row(i));
                    let mg = gr.iter().sum::<f64>() / n;
                    let mgy = gr.iter().zip(yr).map(|(p, q)| p * q).sum::<f64>() / n;
                    for j in 0..c {
                        ga[i * c + j] = inv_std[i] * (gr[j] - mg - yr[j] * mgy);
                    }
                }
                self.acc(grads, *a, self.faulty(Fault::LayerNorm, Tensor::new(&[r, c], ga)?));
            }
            Op::Gather(a, index) => {
                let mut ga = Tensor::zeros(self.shape(*a));
                let d = ga.data_mut();
                for (k, &i) in index.iter().enumerate() {
                    d[i] += g.data()[k];
                }
                self.acc(grads, *a, ga);
            }
            Op::Transpose(a) => self.acc(grads, *a, g.transposed()?),
            Op::Reshape(a) => self.acc(grads, *a, g.clone().reshaped(self.shape(*a))?),
            Op::ConcatCols(parts) => {
                let (r, _) = g.dims2()?;
                let mut start = 0;
                for &p in parts {
                    let pc = self.dims2(p)?.1;
                    let gp = (0..r).flat_map(|i| g.row(i)[start..start + pc].to_vec()).collect();
                    self.acc(grads, p, Tensor::new(&[r, pc], gp)?);
                    start += pc;
                }
            }
            Op::ConcatRows(parts) => {
                let mut off = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    self.acc(grads, p, Tensor::new(self.shape(p), g.data()[off..off + n].to_vec())?);
                    off += n;
                }
            }
            Op::SliceCols(a, start) => {
                let (r, c) = self.dims2(*a)?;
                let w = g.dims2()?.1;
                let mut ga = vec![0.0; r * c];
                for i in 0..r {
                    ga[i * c + start..i * c + start + w].copy_from_slice(g.row(i));
                }
                self.acc(grads, *a, Tensor::new(&[r, c], ga)?);
            }
            Op::Sum(a) => self.acc(grads, *a, Tensor::full(self.shape(*a), g.item())),
            Op::Mean(a) => {
                let n = self.value(*a).len() as f64;
                self.acc(grads, *a, Tensor::full(self.shape(*a), g.item() / n));
            }
            Op::SumAxis(a, axis) => {
                let (r, c) = self.dims2(*a)?;
                let gd = g.data();
                let ga = (0..r * c).map(|k| if *axis == 0 { gd[k % c] } else { gd[k / c] }).collect();
                self.acc(grads, *a, Tensor::new(&[r, c], ga)?);
            }
        }
        Ok(())
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(&[1, 2], vec![0.0, 0.0]).unwrap()).unwrap();
        let s = g.softmax(x, None).unwrap();
        assert_eq!(g.value(s).data(), [0.5, 0.5]);
        let z = g.constant(Tensor::new(&[1, 1], vec![0.0]).unwrap()).unwrap();
        let sg = g.sigmoid(z).unwrap();
        assert_eq!(g.value(sg).item(), 0.5);
        let m = g.constant(Tensor::new(&[1, 1], vec![-3.0]).unwrap()).unwrap();
        let r = g.relu(m).unwrap();
        assert_eq!(g.value(r).item(), 0.0);
    }

    #[test]
    fn sigmoid_derivative_and_sum_gradient() {
        let mut g = Graph::new();
        let x = g.param(Tensor::new(&[1, 1], vec![0.0]).unwrap()).unwrap();
        let s = g.sigmoid(x).unwrap();
        let l = g.sum(s).unwrap();
        assert_eq!(g.backward(l).unwrap().get(x).unwrap().item(), 0.25);

        let mut g = Graph::new();
        let x = g.param(Tensor::from_fn(&[2, 3], |i| i as f64)).unwrap();
        let l = g.sum(x).unwrap();
        assert_eq!(g.backward(l).unwrap().get(x).unwrap().data(), [1.0; 6]);
    }

    #[test]
    fn masked_softmax_rows() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[3, 3], |i| (i as f64 * 0.7).sin() * 5.0)).unwrap();
        let mask = Tensor::from_fn(&[3, 3], |k| if k % 3 > k / 3 { f64::NEG_INFINITY } else { 0.0 });
        let s = g.softmax(x, Some(&mask)).unwrap();
        let v = g.value(s);
        for i in 0..3 {
            assert!((v.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
            for j in i + 1..3 {
                assert!(v.get2(i, j) < 1e-30);
            }
        }
        let all = Tensor::full(&[3, 3], f64::NEG_INFINITY);
        assert!(matches!(g.softmax(x, Some(&all)), Err(Error::Numeric { .. })));
    }

    #[test]
    fn layer_norm_statistics() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_fn(&[4, 16], |i| ((i * 37 % 11) as f64) * 0.3 - 1.0)).unwrap();
        let y = g.layer_norm(x, 1e-10).unwrap();
        let v = g.value(y);
        for i in 0..4 {
            let r = v.row(i);
            let m = r.iter().sum::<f64>() / 16.0;
            let var = r.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / 16.0;
            assert!(m.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-8);
        }
    }

    #[test]
    fn errors() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        let b = g.constant(Tensor::zeros(&[2, 3])).unwrap();
        assert!(matches!(g.matmul(a, b), Err(Error::Shape(_))));
        assert!(matches!(g.log(a), Err(Error::Numeric { op: "log" })));
        assert!(matches!(g.backward(a), Err(Error::Input(_))));
        assert!(matches!(g.embedding(a, &[2]), Err(Error::Input(_))));
        assert!(g.constant(Tensor::scalar(f64::NAN)).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut g = Graph::new();
        let w = g.param(Tensor::full(&[2, 2], 1.0)).unwrap();
        let c = g.constant(Tensor::full(&[2, 2], 3.0)).unwrap();
        let p = g.mul(w, c).unwrap();
        let l = g.sum(p).unwrap();
        let gr = g.backward(l).unwrap();
        assert_eq!(gr.get(w).unwrap().data(), [3.0; 4]);
        assert!(gr.get(c).is_none());
    }
}
