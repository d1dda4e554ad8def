use std::collections::HashMap;

use super::params::ParamStore;
use super::tensor::{gemm, Tensor};
use super::AutodiffError;

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// An operation defined outside the engine, with a hand-written backward.
pub trait CustomOp: Send + Sync {
    fn name(&self) -> &'static str;

    /// Gradients with respect to each input, in input order.
    fn backward(&self, inputs: &[&Tensor], output: &Tensor, grad: &Tensor) -> Vec<Tensor>;
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    DivCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Transpose(Var),
    Concat { inputs: Vec<Var>, axis: usize },
    SliceRows { input: Var, start: usize },
    SliceCols { input: Var, start: usize },
    MaxReduce { input: Var, axis: usize, argmax: Vec<usize> },
    Relu(Var),
    LeakyRelu(Var, f64),
    Sigmoid(Var),
    Softmax(Var, usize),
    Log(Var),
    Exp(Var),
    Square(Var),
    Sqrt(Var),
    Sum(Var),
    SumAxis(Var, usize),
    Mean(Var),
    Gather { input: Var, index: Vec<usize> },
    ScatterMax { input: Var, argmax: Vec<usize> },
    SqDist(Var, Var),
    Custom { inputs: Vec<Var>, op: Box<dyn CustomOp> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// A tape is single-owner: build it, run `backward` once per loss, drop it.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(String, Var)>,
    param_index: HashMap<String, Var>,
}

type Res = Result<Var, AutodiffError>;

fn mismatch(op: &'static str, detail: String) -> AutodiffError {
    AutodiffError::ShapeMismatch { op, detail }
}

fn check_axis(op: &'static str, axis: usize) -> Result<(), AutodiffError> {
    if axis > 1 {
        return Err(mismatch(op, format!("axis {axis} out of range for rank-2 tensors")));
    }
    Ok(())
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
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

    fn push(&mut self, name: &'static str, value: Tensor, op: Op) -> Res {
        if !value.is_finite() {
            return Err(AutodiffError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// A non-trainable input.
    pub fn constant(&mut self, value: Tensor) -> Res {
        self.push("constant", value, Op::Leaf)
    }

    /// A leaf whose gradient is reported under `name` after backward.
    /// Registering the same name twice returns the same node.
    pub fn leaf(&mut self, name: &str, value: Tensor) -> Res {
        if let Some(&v) = self.param_index.get(name) {
            return Ok(v);
        }
        let v = self.push("leaf", value, Op::Leaf)?;
        self.params.push((name.to_string(), v));
        self.param_index.insert(name.to_string(), v);
        Ok(v)
    }

    /// Loads a parameter from `store` onto the tape.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Res {
        if let Some(&v) = self.param_index.get(name) {
            return Ok(v);
        }
        let value = store.get(name).ok_or_else(|| AutodiffError::UnknownParam(name.to_string()))?;
        self.leaf(name, value.clone())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Res {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.rows() {
            return Err(mismatch("matmul", format!("{:?} x {:?}", ta.shape(), tb.shape())));
        }
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        let mut out = Tensor::zeros(m, n);
        gemm(m, k, n, ta.data(), false, tb.data(), false, 0.0, out.data_mut());
        self.push("matmul", out, Op::MatMul(a, b))
    }

    fn zip_same(&mut self, name: &'static str, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op) -> Res {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(name, format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        let out = Tensor::new(ta.rows(), ta.cols(), data)?;
        self.push(name, out, op)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Res {
        self.zip_same("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Res {
        self.zip_same("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Res {
        self.zip_same("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    /// `a[m,n] + row[1,n]`, broadcasting the row over the leading dimension.
    pub fn add_row(&mut self, a: Var, row: Var) -> Res {
        let (ta, tr) = (self.value(a), self.value(row));
        if tr.rows() != 1 || tr.cols() != ta.cols() {
            return Err(mismatch("add_row", format!("{:?} + {:?}", ta.shape(), tr.shape())));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            for (o, b) in out.row_slice_mut(r).iter_mut().zip(tr.data()) {
                *o += b;
            }
        }
        self.push("add_row", out, Op::AddRow(a, row))
    }

    fn col_broadcast(&mut self, name: &'static str, a: Var, col: Var, divide: bool) -> Res {
        let (ta, tc) = (self.value(a), self.value(col));
        if tc.cols() != 1 || tc.rows() != ta.rows() {
            return Err(mismatch(name, format!("{:?} with {:?}", ta.shape(), tc.shape())));
        }
        let mut out = ta.clone();
        for r in 0..out.rows() {
            let s = tc.get(r, 0);
            for o in out.row_slice_mut(r) {
                if divide {
                    *o /= s;
                } else {
                    *o *= s;
                }
            }
        }
        let op = if divide { Op::DivCol(a, col) } else { Op::MulCol(a, col) };
        self.push(name, out, op)
    }

    /// `a[m,n] * col[m,1]`, scaling each row.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Res {
        self.col_broadcast("mul_col", a, col, false)
    }

    /// `a[m,n] / col[m,1]`, dividing each row.
    pub fn div_col(&mut self, a: Var, col: Var) -> Res {
        self.col_broadcast("div_col", a, col, true)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Res {
        let out = self.value(a).map(|v| v * c);
        self.push("scale", out, Op::Scale(a, c))
    }

    pub fn add_scalar(&mut self, a: Var, c: f64) -> Res {
        let out = self.value(a).map(|v| v + c);
        self.push("add_scalar", out, Op::AddScalar(a))
    }

    pub fn neg(&mut self, a: Var) -> Res {
        self.scale(a, -1.0)
    }

    pub fn transpose(&mut self, a: Var) -> Res {
        let out = self.value(a).transpose();
        self.push("transpose", out, Op::Transpose(a))
    }

    /// Concatenates along `axis` (0 stacks rows, 1 joins columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Res {
        check_axis("concat", axis)?;
        if inputs.is_empty() {
            return Err(mismatch("concat", "no inputs".into()));
        }
        let first = self.value(inputs[0]).shape();
        let out = if axis == 0 {
            let mut rows = 0;
            let mut data = Vec::new();
            for &v in inputs {
                let t = self.value(v);
                if t.cols() != first[1] {
                    return Err(mismatch("concat", format!("{:?} vs {:?}", first, t.shape())));
                }
                rows += t.rows();
                data.extend_from_slice(t.data());
            }
            Tensor::new(rows, first[1], data)?
        } else {
            let mut cols = 0;
            for &v in inputs {
                let t = self.value(v);
                if t.rows() != first[0] {
                    return Err(mismatch("concat", format!("{:?} vs {:?}", first, t.shape())));
                }
                cols += t.cols();
            }
            let mut out = Tensor::zeros(first[0], cols);
            for r in 0..first[0] {
                let mut offset = 0;
                for &v in inputs {
                    let t = self.value(v);
                    out.row_slice_mut(r)[offset..offset + t.cols()].copy_from_slice(t.row_slice(r));
                    offset += t.cols();
                }
            }
            out
        };
        self.push("concat", out, Op::Concat { inputs: inputs.to_vec(), axis })
    }

    /// Rows `start..end`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Res {
        let t = self.value(a);
        if start > end || end > t.rows() {
            return Err(mismatch("slice_rows", format!("{start}..{end} of {:?}", t.shape())));
        }
        let cols = t.cols();
        let out = Tensor::new(end - start, cols, t.data()[start * cols..end * cols].to_vec())?;
        self.push("slice_rows", out, Op::SliceRows { input: a, start })
    }

    /// Columns `start..end`.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Res {
        let t = self.value(a);
        if start > end || end > t.cols() {
            return Err(mismatch("slice_cols", format!("{start}..{end} of {:?}", t.shape())));
        }
        let mut out = Tensor::zeros(t.rows(), end - start);
        for r in 0..t.rows() {
            out.row_slice_mut(r).copy_from_slice(&t.row_slice(r)[start..end]);
        }
        self.push("slice_cols", out, Op::SliceCols { input: a, start })
    }

    /// Maximum along `axis`; ties resolve to the lowest index.
    pub fn max_reduce(&mut self, a: Var, axis: usize) -> Res {
        check_axis("max_reduce", axis)?;
        let t = self.value(a);
        if t.is_empty() {
            return Err(mismatch("max_reduce", "empty input".into()));
        }
        let (out, argmax) = if axis == 0 {
            let mut out = Tensor::row(t.row_slice(0));
            let mut arg = vec![0; t.cols()];
            for r in 1..t.rows() {
                for (c, &v) in t.row_slice(r).iter().enumerate() {
                    if v > out.get(0, c) {
                        out.set(0, c, v);
                        arg[c] = r;
                    }
                }
            }
            (out, arg)
        } else {
            let mut vals = Vec::with_capacity(t.rows());
            let mut arg = Vec::with_capacity(t.rows());
            for r in 0..t.rows() {
                let row = t.row_slice(r);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = c;
                    }
                }
                vals.push(row[best]);
                arg.push(best);
            }
            (Tensor::column(&vals), arg)
        };
        self.push("max_reduce", out, Op::MaxReduce { input: a, axis, argmax })
    }

    /// Minimum along `axis`, as `-max(-a)`.
    pub fn min_reduce(&mut self, a: Var, axis: usize) -> Res {
        let n = self.neg(a)?;
        let m = self.max_reduce(n, axis)?;
        self.neg(m)
    }

    pub fn relu(&mut self, a: Var) -> Res {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push("relu", out, Op::Relu(a))
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Res {
        let out = self.value(a).map(|v| if v > 0.0 { v } else { slope * v });
        self.push("leaky_relu", out, Op::LeakyRelu(a, slope))
    }

    pub fn sigmoid(&mut self, a: Var) -> Res {
        let out = self.value(a).map(sigmoid);
        self.push("sigmoid", out, Op::Sigmoid(a))
    }

    /// Softmax along `axis` (1 normalizes each row, 0 each column).
    pub fn softmax(&mut self, a: Var, axis: usize) -> Res {
        check_axis("softmax", axis)?;
        let t = self.value(a);
        let out = if axis == 1 {
            softmax_rows(t)
        } else {
            softmax_rows(&t.transpose()).transpose()
        };
        self.push("softmax", out, Op::Softmax(a, axis))
    }

    pub fn log(&mut self, a: Var) -> Res {
        let out = self.value(a).map(f64::ln);
        self.push("log", out, Op::Log(a))
    }

    pub fn exp(&mut self, a: Var) -> Res {
        let out = self.value(a).map(f64::exp);
        self.push("exp", out, Op::Exp(a))
    }

    pub fn square(&mut self, a: Var) -> Res {
        let out = self.value(a).map(|v| v * v);
        self.push("square", out, Op::Square(a))
    }

    pub fn sqrt(&mut self, a: Var) -> Res {
        let out = self.value(a).map(f64::sqrt);
        self.push("sqrt", out, Op::Sqrt(a))
    }

    /// Sum of all entries, as a `1 x 1` tensor.
    pub fn sum(&mut self, a: Var) -> Res {
        let out = Tensor::scalar(self.value(a).sum());
        self.push("sum", out, Op::Sum(a))
    }

    /// Sum along `axis` (0 gives `1 x n`, 1 gives `m x 1`).
    pub fn sum_axis(&mut self, a: Var, axis: usize) -> Res {
        check_axis("sum_axis", axis)?;
        let t = self.value(a);
        let out = if axis == 0 {
            let mut out = Tensor::zeros(1, t.cols());
            for r in 0..t.rows() {
                for (o, v) in out.data_mut().iter_mut().zip(t.row_slice(r)) {
                    *o += v;
                }
            }
            out
        } else {
            let vals: Vec<f64> = (0..t.rows()).map(|r| t.row_slice(r).iter().sum()).collect();
            Tensor::column(&vals)
        };
        self.push("sum_axis", out, Op::SumAxis(a, axis))
    }

    pub fn mean(&mut self, a: Var) -> Res {
        let t = self.value(a);
        if t.is_empty() {
            return Err(mismatch("mean", "empty input".into()));
        }
        let out = Tensor::scalar(t.sum() / t.len() as f64);
        self.push("mean", out, Op::Mean(a))
    }

    /// Selects rows by index; indices may repeat.
    pub fn gather(&mut self, a: Var, index: &[usize]) -> Res {
        let t = self.value(a);
        let cols = t.cols();
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index {
            if i >= t.rows() {
                return Err(mismatch("gather", format!("row {i} of {:?}", t.shape())));
            }
            data.extend_from_slice(t.row_slice(i));
        }
        let out = Tensor::new(index.len(), cols, data)?;
        self.push("gather", out, Op::Gather { input: a, index: index.to_vec() })
    }

    /// Row-wise max scatter: `out[target[e]] = max_e a[e]` over an `out_rows`
    /// output. Rows receiving nothing are zero. Ties keep the lowest `e`.
    pub fn scatter_max(&mut self, a: Var, target: &[usize], out_rows: usize) -> Res {
        let t = self.value(a);
        if target.len() != t.rows() {
            return Err(mismatch("scatter_max", format!("{} targets for {:?}", target.len(), t.shape())));
        }
        let cols = t.cols();
        let mut out = Tensor::zeros(out_rows, cols);
        let mut argmax = vec![usize::MAX; out_rows * cols];
        for (e, &r) in target.iter().enumerate() {
            if r >= out_rows {
                return Err(mismatch("scatter_max", format!("target {r} >= {out_rows}")));
            }
            let src = t.row_slice(e);
            for c in 0..cols {
                let slot = r * cols + c;
                if argmax[slot] == usize::MAX || src[c] > out.data()[slot] {
                    out.data_mut()[slot] = src[c];
                    argmax[slot] = e;
                }
            }
        }
        self.push("scatter_max", out, Op::ScatterMax { input: a, argmax })
    }

    /// Pairwise squared Euclidean distances between the rows of `a[n,d]` and `b[m,d]`.
    pub fn sq_dist(&mut self, a: Var, b: Var) -> Res {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.cols() != tb.cols() {
            return Err(mismatch("sq_dist", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let mut out = Tensor::zeros(ta.rows(), tb.rows());
        for i in 0..ta.rows() {
            let ai = ta.row_slice(i);
            for j in 0..tb.rows() {
                let d: f64 = ai.iter().zip(tb.row_slice(j)).map(|(x, y)| (x - y) * (x - y)).sum();
                out.set(i, j, d);
            }
        }
        self.push("sq_dist", out, Op::SqDist(a, b))
    }

    /// Records a custom op whose forward value was computed by the caller.
    pub fn custom(&mut self, inputs: &[Var], output: Tensor, op: Box<dyn CustomOp>) -> Res {
        let name = op.name();
        self.push(name, output, Op::Custom { inputs: inputs.to_vec(), op })
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, AutodiffError> {
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(AutodiffError::NonScalarLoss(lt.shape()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::scalar(1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        let params = self.params.iter().filter(|(_, v)| v.0 <= loss.0).map(|(n, v)| (n.clone(), *v)).collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                let mut da = Tensor::zeros(m, k);
                gemm(m, n, k, g.data(), false, tb.data(), true, 0.0, da.data_mut());
                let mut db = Tensor::zeros(k, n);
                gemm(k, m, n, ta.data(), true, g.data(), false, 0.0, db.data_mut());
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                accumulate(grads, *a, g.clone());
                accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                accumulate(grads, *a, zip(g, tb, |x, y| x * y));
                accumulate(grads, *b, zip(g, ta, |x, y| x * y));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, g.clone());
                let mut dr = Tensor::zeros(1, g.cols());
                for r in 0..g.rows() {
                    for (o, v) in dr.data_mut().iter_mut().zip(g.row_slice(r)) {
                        *o += v;
                    }
                }
                accumulate(grads, *row, dr);
            }
            Op::MulCol(a, col) => {
                let (ta, tc) = (self.value(*a), self.value(*col));
                let mut da = g.clone();
                let mut dc = Tensor::zeros(tc.rows(), 1);
                for r in 0..g.rows() {
                    let s = tc.get(r, 0);
                    let mut acc = 0.0;
                    for (c, d) in da.row_slice_mut(r).iter_mut().enumerate() {
                        acc += *d * ta.get(r, c);
                        *d *= s;
                    }
                    dc.set(r, 0, acc);
                }
                accumulate(grads, *a, da);
                accumulate(grads, *col, dc);
            }
            Op::DivCol(a, col) => {
                let tc = self.value(*col);
                let mut da = g.clone();
                let mut dc = Tensor::zeros(tc.rows(), 1);
                for r in 0..g.rows() {
                    let s = tc.get(r, 0);
                    let mut acc = 0.0;
                    for (c, d) in da.row_slice_mut(r).iter_mut().enumerate() {
                        acc += *d * y.get(r, c);
                        *d /= s;
                    }
                    dc.set(r, 0, -acc / s);
                }
                accumulate(grads, *a, da);
                accumulate(grads, *col, dc);
            }
            Op::Scale(a, c) => accumulate(grads, *a, g.map(|v| v * c)),
            Op::AddScalar(a) => accumulate(grads, *a, g.clone()),
            Op::Transpose(a) => accumulate(grads, *a, g.transpose()),
            Op::Concat { inputs, axis } => {
                if *axis == 0 {
                    let mut row = 0;
                    for &v in inputs {
                        let t = self.value(v);
                        let cols = t.cols();
                        let part = g.data()[row * cols..(row + t.rows()) * cols].to_vec();
                        accumulate(grads, v, Tensor::new(t.rows(), cols, part).expect("shape"));
                        row += t.rows();
                    }
                } else {
                    let mut offset = 0;
                    for &v in inputs {
                        let t = self.value(v);
                        let mut part = Tensor::zeros(t.rows(), t.cols());
                        for r in 0..t.rows() {
                            part.row_slice_mut(r).copy_from_slice(&g.row_slice(r)[offset..offset + t.cols()]);
                        }
                        accumulate(grads, v, part);
                        offset += t.cols();
                    }
                }
            }
            Op::SliceRows { input, start } => {
                let t = self.value(*input);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                let cols = t.cols();
                d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                accumulate(grads, *input, d);
            }
            Op::SliceCols { input, start } => {
                let t = self.value(*input);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    d.row_slice_mut(r)[*start..start + g.cols()].copy_from_slice(g.row_slice(r));
                }
                accumulate(grads, *input, d);
            }
            Op::MaxReduce { input, axis, argmax } => {
                let t = self.value(*input);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                if *axis == 0 {
                    for (c, &r) in argmax.iter().enumerate() {
                        d.set(r, c, g.get(0, c));
                    }
                } else {
                    for (r, &c) in argmax.iter().enumerate() {
                        d.set(r, c, g.get(r, 0));
                    }
                }
                accumulate(grads, *input, d);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, zip(g, x, |gv, xv| if xv > 0.0 { gv } else { 0.0 }));
            }
            Op::LeakyRelu(a, slope) => {
                let x = self.value(*a);
                accumulate(grads, *a, zip(g, x, |gv, xv| if xv > 0.0 { gv } else { slope * gv }));
            }
            Op::Sigmoid(a) => accumulate(grads, *a, zip(g, y, |gv, yv| gv * yv * (1.0 - yv))),
            Op::Softmax(a, axis) => {
                let d = if *axis == 1 {
                    softmax_rows_backward(y, g)
                } else {
                    softmax_rows_backward(&y.transpose(), &g.transpose()).transpose()
                };
                accumulate(grads, *a, d);
            }
            Op::Log(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, zip(g, x, |gv, xv| gv / xv));
            }
            Op::Exp(a) => accumulate(grads, *a, zip(g, y, |gv, yv| gv * yv)),
            Op::Square(a) => {
                let x = self.value(*a);
                accumulate(grads, *a, zip(g, x, |gv, xv| 2.0 * gv * xv));
            }
            Op::Sqrt(a) => accumulate(grads, *a, zip(g, y, |gv, yv| gv / (2.0 * yv))),
            Op::Sum(a) => {
                let t = self.value(*a);
                accumulate(grads, *a, Tensor::filled(t.rows(), t.cols(), g.item()));
            }
            Op::SumAxis(a, axis) => {
                let t = self.value(*a);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for r in 0..t.rows() {
                    for c in 0..t.cols() {
                        let gv = if *axis == 0 { g.get(0, c) } else { g.get(r, 0) };
                        d.set(r, c, gv);
                    }
                }
                accumulate(grads, *a, d);
            }
            Op::Mean(a) => {
                let t = self.value(*a);
                accumulate(grads, *a, Tensor::filled(t.rows(), t.cols(), g.item() / t.len() as f64));
            }
            Op::Gather { input, index } => {
                let t = self.value(*input);
                let mut d = Tensor::zeros(t.rows(), t.cols());
                for (e, &i) in index.iter().enumerate() {
                    for (o, v) in d.row_slice_mut(i).iter_mut().zip(g.row_slice(e)) {
                        *o += v;
                    }
                }
                accumulate(grads, *input, d);
            }
            Op::ScatterMax { input, argmax } => {
                let t = self.value(*input);
                let cols = t.cols();
                let mut d = Tensor::zeros(t.rows(), cols);
                for (slot, &e) in argmax.iter().enumerate() {
                    if e != usize::MAX {
                        let c = slot % cols;
                        d.data_mut()[e * cols + c] += g.data()[slot];
                    }
                }
                accumulate(grads, *input, d);
            }
            Op::SqDist(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let mut da = Tensor::zeros(ta.rows(), ta.cols());
                let mut db = Tensor::zeros(tb.rows(), tb.cols());
                for i in 0..ta.rows() {
                    for j in 0..tb.rows() {
                        let gij = 2.0 * g.get(i, j);
                        if gij == 0.0 {
                            continue;
                        }
                        for c in 0..ta.cols() {
                            let diff = gij * (ta.get(i, c) - tb.get(j, c));
                            da.data_mut()[i * ta.cols() + c] += diff;
                            db.data_mut()[j * tb.cols() + c] -= diff;
                        }
                    }
                }
                accumulate(grads, *a, da);
                accumulate(grads, *b, db);
            }
            Op::Custom { inputs, op } => {
                let values: Vec<&Tensor> = inputs.iter().map(|&v| self.value(v)).collect();
                let ds = op.backward(&values, y, g);
                for (&v, d) in inputs.iter().zip(ds) {
                    accumulate(grads, v, d);
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, d: Tensor) {
    match &mut grads[v.0] {
        Some(existing) => existing.add_assign(&d),
        slot @ None => *slot = Some(d),
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::new(a.rows(), a.cols(), data).expect("same shape")
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..out.rows() {
        let row = out.row_slice_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

fn softmax_rows_backward(y: &Tensor, g: &Tensor) -> Tensor {
    let mut d = Tensor::zeros(y.rows(), y.cols());
    for r in 0..y.rows() {
        let (yr, gr) = (y.row_slice(r), g.row_slice(r));
        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
        for (c, o) in d.row_slice_mut(r).iter_mut().enumerate() {
            *o = yr[c] * (gr[c] - dot);
        }
    }
    d
}

/// Result of [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    params: Vec<(String, Var)>,
}

/// Gradients keyed by parameter name.
pub type GradMap = HashMap<String, Tensor>;

impl Gradients {
    /// Gradient of the loss with respect to `v`, if `v` influenced it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient with respect to `v`, zero when `v` did not influence the loss.
    pub fn get_or_zero(&self, tape: &Tape, v: Var) -> Tensor {
        self.get(v).cloned().unwrap_or_else(|| {
            let t = tape.value(v);
            Tensor::zeros(t.rows(), t.cols())
        })
    }

    /// One entry per parameter in `store`; parameters the loss never
    /// touched get a zero gradient.
    pub fn for_store(&self, store: &ParamStore) -> GradMap {
        let mut map = GradMap::new();
        for (name, v) in &self.params {
            if let Some(g) = self.get(*v) {
                map.insert(name.clone(), g.clone());
            }
        }
        for (name, value) in store.iter() {
            map.entry(name.to_string()).or_insert_with(|| Tensor::zeros(value.rows(), value.cols()));
        }
        map
    }
}
