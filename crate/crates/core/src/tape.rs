//! Define-by-run reverse-mode automatic differentiation.
//!
//! A [`Tape`] records every operation as it is evaluated. Nodes are appended in
//! evaluation order, so the node list is already topologically sorted and `backward`
//! simply walks it from the output towards the leaves. A fresh tape is built for each
//! optimization step.

use alloc::vec;
use alloc::vec::Vec;

use crate::math;
use crate::tensor::{dims2, dot, matmul_at_into, matmul_bt_into, Tensor, TensorError};

/// Epsilon added to the variance in [`Tape::layernorm`].
pub const LAYERNORM_EPS: f64 = 1e-5;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Shift(Var),
    Concat(Vec<Var>),
    SliceRows(Var, usize),
    Transpose(Var),
    Reshape(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Sigmoid(Var),
    Relu(Var),
    Ln(Var),
    Sqrt(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        rstd: Vec<f64>,
    },
    Sum(Var),
    Mean(Var),
    Gather(Var, Vec<usize>),
    BceWithLogits(Var, Vec<f64>),
    AvgPool2x2 { x: Var, h: usize, w: usize },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Recorded computation with reverse traversal.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Drops every node and gradient.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.grads.clear();
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a differentiable input.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records an input that never receives a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    fn mismatch(&self, op: &'static str, a: Var, b: Var) -> TensorError {
        TensorError::ShapeMismatch {
            op,
            left: self.shape(a).to_vec(),
            right: self.shape(b).to_vec(),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<(), TensorError> {
        if self.shape(a) == self.shape(b) {
            Ok(())
        } else {
            Err(self.mismatch(op, a, b))
        }
    }

    fn zip_with(&self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::new(va.shape().to_vec(), data).expect("same shape")
    }

    fn unary(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let value = self.value(a).map(f);
        let rg = self.rg(a);
        self.push(value, op, rg)
    }

    /// Matrix product `[m x k] * [k x n]`.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("add", a, b)?;
        let value = self.zip_with(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    /// Adds a row vector (length = column count of `a`) to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var, TensorError> {
        let cols = self.value(a).cols();
        if self.value(row).len() != cols || self.value(a).rank() == 0 {
            return Err(self.mismatch("add_row", a, row));
        }
        let r = self.value(row).data().to_vec();
        let mut value = self.value(a).clone();
        for chunk in value.data_mut().chunks_mut(cols) {
            for (x, y) in chunk.iter_mut().zip(&r) {
                *x += y;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("sub", a, b)?;
        let value = self.zip_with(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("mul", a, b)?;
        let value = self.zip_with(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        self.same_shape("div", a, b)?;
        let value = self.zip_with(a, b, |x, y| x / y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Div(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Scale(a, c), |x| c * x)
    }

    /// Adds a constant to every element.
    pub fn shift(&mut self, a: Var, c: f64) -> Var {
        self.unary(a, Op::Shift(a), |x| x + c)
    }

    /// Stacks rank-2 tensors with equal column counts along the row axis.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var, TensorError> {
        let first = *parts.first().ok_or(TensorError::Index {
            op: "concat_rows",
            index: 0,
            extent: 0,
        })?;
        let (_, cols) = dims2("concat_rows", self.value(first))?;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = dims2("concat_rows", self.value(p))?;
            if c != cols {
                return Err(self.mismatch("concat_rows", first, p));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        let value = Tensor::new([rows, cols], data)?;
        Ok(self.push(value, Op::Concat(parts.to_vec()), rg))
    }

    /// Rows `start..start + len` of a rank-2 tensor.
    pub fn slice_rows(&mut self, a: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let (rows, cols) = dims2("slice_rows", self.value(a))?;
        if start + len > rows {
            return Err(TensorError::Index {
                op: "slice_rows",
                index: start + len,
                extent: rows,
            });
        }
        let data = self.value(a).data()[start * cols..(start + len) * cols].to_vec();
        let value = Tensor::new([len, cols], data)?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var, TensorError> {
        let value = self.value(a).transpose()?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Transpose(a), rg))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let value = self.value(a).clone().reshape(shape.to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Softmax along `axis`. Rank-2 tensors support both axes; other ranks only the last.
    pub fn softmax(&mut self, a: Var, axis: usize) -> Result<Var, TensorError> {
        let rank = self.value(a).rank().max(1);
        if axis + 1 == rank {
            Ok(self.softmax_last(a))
        } else if rank == 2 && axis == 0 {
            let t = self.transpose(a)?;
            let s = self.softmax_last(t);
            self.transpose(s)
        } else {
            Err(TensorError::Axis {
                op: "softmax",
                axis,
                shape: self.shape(a).to_vec(),
            })
        }
    }

    /// Softmax along the last axis, with max subtraction.
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let cols = value.cols();
        for row in value.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        let rg = self.rg(a);
        self.push(value, Op::Softmax(a), rg)
    }

    /// Log-softmax along the last axis.
    pub fn log_softmax(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let cols = value.cols();
        for row in value.data_mut().chunks_mut(cols) {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + math::ln(row.iter().map(|&x| math::exp(x - m)).sum::<f64>());
            for x in row.iter_mut() {
                *x -= lse;
            }
        }
        let rg = self.rg(a);
        self.push(value, Op::LogSoftmax(a), rg)
    }

    /// Logistic function on inputs clamped to `[-30, 30]`.
    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sigmoid(a), math::sigmoid)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.unary(a, Op::Relu(a), |x| if x > 0.0 { x } else { 0.0 })
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.unary(a, Op::Ln(a), math::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.unary(a, Op::Sqrt(a), math::sqrt)
    }

    /// Normalizes each row to zero mean and unit variance, then applies `gain` and `bias`.
    pub fn layernorm(&mut self, x: Var, gain: Var, bias: Var) -> Result<Var, TensorError> {
        let cols = self.value(x).cols();
        if self.value(gain).len() != cols {
            return Err(self.mismatch("layernorm", x, gain));
        }
        if self.value(bias).len() != cols {
            return Err(self.mismatch("layernorm", x, bias));
        }
        let xv = self.value(x);
        let g = self.value(gain).data();
        let b = self.value(bias).data();
        let rows = xv.rows();
        let mut xhat = vec![0.0; xv.len()];
        let mut rstd = vec![0.0; rows];
        let mut out = vec![0.0; xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let rs = 1.0 / math::sqrt(var + LAYERNORM_EPS);
            rstd[r] = rs;
            for c in 0..cols {
                let h = (row[c] - mean) * rs;
                xhat[r * cols + c] = h;
                out[r * cols + c] = h * g[c] + b[c];
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out)?;
        let rg = self.rg(x) || self.rg(gain) || self.rg(bias);
        Ok(self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            },
            rg,
        ))
    }

    /// Sum of every element, as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean of every element, as a scalar.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Embedding lookup: selects rows of a rank-2 table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var, TensorError> {
        let (rows, cols) = dims2("gather_rows", self.value(table))?;
        let mut data = Vec::with_capacity(indices.len() * cols);
        for &i in indices {
            if i >= rows {
                return Err(TensorError::Index {
                    op: "gather_rows",
                    index: i,
                    extent: rows,
                });
            }
            data.extend_from_slice(self.value(table).row(i));
        }
        let value = Tensor::new([indices.len(), cols], data)?;
        let rg = self.rg(table);
        Ok(self.push(value, Op::Gather(table, indices.to_vec()), rg))
    }

    /// Elementwise binary cross-entropy between `sigmoid(x)` and `target`, computed as
    /// `max(x, 0) - t x + ln(1 + e^{-|x|})` so that it never saturates.
    pub fn bce_with_logits(&mut self, x: Var, target: &[f64]) -> Result<Var, TensorError> {
        if self.value(x).len() != target.len() {
            return Err(TensorError::ShapeMismatch {
                op: "bce_with_logits",
                left: self.shape(x).to_vec(),
                right: vec![target.len()],
            });
        }
        let data = self
            .value(x)
            .data()
            .iter()
            .zip(target)
            .map(|(&v, &t)| v.max(0.0) - t * v + math::ln(1.0 + math::exp(-v.abs())))
            .collect();
        let value = Tensor::new(self.shape(x).to_vec(), data)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::BceWithLogits(x, target.to_vec()), rg))
    }

    /// 2x2 average pooling of a `[h*w x c]` feature grid stored row-major over pixels.
    pub fn avg_pool2x2(&mut self, x: Var, h: usize, w: usize) -> Result<Var, TensorError> {
        let (n, c) = dims2("avg_pool2x2", self.value(x))?;
        if n != h * w || h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::ShapeMismatch {
                op: "avg_pool2x2",
                left: self.shape(x).to_vec(),
                right: vec![h, w],
            });
        }
        let (ph, pw) = (h / 2, w / 2);
        let src = self.value(x).data();
        let mut out = vec![0.0; ph * pw * c];
        for y in 0..h {
            for xx in 0..w {
                let dst = ((y / 2) * pw + xx / 2) * c;
                let s = (y * w + xx) * c;
                for k in 0..c {
                    out[dst + k] += 0.25 * src[s + k];
                }
            }
        }
        let value = Tensor::new([ph * pw, c], out)?;
        let rg = self.rg(x);
        Ok(self.push(value, Op::AvgPool2x2 { x, h, w }, rg))
    }

    /// Gradient of the last `backward` root with respect to `v`, if one was recorded.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Like [`Tape::grad`] but shaped like the node value; zeros when no gradient reached `v`.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let shape = self.shape(v).to_vec();
        match self.grad(v) {
            Some(g) => Tensor::new(shape, g.to_vec()).expect("grad matches value shape"),
            None => Tensor::zeros(shape),
        }
    }

    /// Reverse sweep from a scalar `root`, populating gradients of every
    /// `requires_grad` ancestor.
    pub fn backward(&mut self, root: Var) -> Result<(), TensorError> {
        if self.value(root).len() != 1 {
            return Err(TensorError::NotScalar {
                shape: self.shape(root).to_vec(),
            });
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if self.nodes[i].requires_grad {
                self.propagate(i, &g, &mut grads);
            }
            grads[i] = Some(g);
        }
        for (i, node) in self.nodes.iter().enumerate() {
            if !node.requires_grad {
                grads[i] = None;
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let av = self.value(*a);
                let bv = self.value(*b);
                let (m, k) = (av.shape()[0], av.shape()[1]);
                let n = bv.shape()[1];
                if self.rg(*a) {
                    matmul_bt_into(g, bv.data(), self.acc(grads, *a), m, n, k);
                }
                if self.rg(*b) {
                    matmul_at_into(av.data(), g, self.acc(grads, *b), m, k, n);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if self.rg(v) {
                        axpy(self.acc(grads, v), 1.0, g);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.rg(*a) {
                    axpy(self.acc(grads, *a), 1.0, g);
                }
                if self.rg(*row) {
                    let cols = self.value(*row).len();
                    let dr = self.acc(grads, *row);
                    for chunk in g.chunks(cols) {
                        axpy(dr, 1.0, chunk);
                    }
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    axpy(self.acc(grads, *a), 1.0, g);
                }
                if self.rg(*b) {
                    axpy(self.acc(grads, *b), -1.0, g);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let da = self.acc(grads, *a);
                    for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi * bi;
                    }
                }
                if self.rg(*b) {
                    let db = self.acc(grads, *b);
                    for ((d, &gi), &ai) in db.iter_mut().zip(g).zip(av) {
                        *d += gi * ai;
                    }
                }
            }
            Op::Div(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let da = self.acc(grads, *a);
                    for ((d, &gi), &bi) in da.iter_mut().zip(g).zip(bv) {
                        *d += gi / bi;
                    }
                }
                if self.rg(*b) {
                    let db = self.acc(grads, *b);
                    for (((d, &gi), &ai), &bi) in db.iter_mut().zip(g).zip(av).zip(bv) {
                        *d -= gi * ai / (bi * bi);
                    }
                }
            }
            Op::Scale(a, c) => axpy(self.acc(grads, *a), *c, g),
            Op::Shift(a) | Op::Reshape(a) => axpy(self.acc(grads, *a), 1.0, g),
            Op::Concat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let n = self.value(p).len();
                    if self.rg(p) {
                        axpy(self.acc(grads, p), 1.0, &g[offset..offset + n]);
                    }
                    offset += n;
                }
            }
            Op::SliceRows(a, start) => {
                let cols = node.value.cols();
                let off = start * cols;
                let da = self.acc(grads, *a);
                axpy(&mut da[off..off + g.len()], 1.0, g);
            }
            Op::Transpose(a) => {
                let (m, n) = (node.value.shape()[0], node.value.shape()[1]);
                let da = self.acc(grads, *a);
                for r in 0..m {
                    for c in 0..n {
                        da[c * m + r] += g[r * n + c];
                    }
                }
            }
            Op::Softmax(a) => {
                let cols = node.value.cols();
                let da = self.acc(grads, *a);
                for ((dr, gr), yr) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                    let s = dot(gr, yr);
                    for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += yi * (gi - s);
                    }
                }
            }
            Op::LogSoftmax(a) => {
                let cols = node.value.cols();
                let da = self.acc(grads, *a);
                for ((dr, gr), yr) in da.chunks_mut(cols).zip(g.chunks(cols)).zip(y.chunks(cols)) {
                    let s: f64 = gr.iter().sum();
                    for ((d, &gi), &yi) in dr.iter_mut().zip(gr).zip(yr) {
                        *d += gi - math::exp(yi) * s;
                    }
                }
            }
            Op::Sigmoid(a) => {
                let x = self.value(*a).data();
                let da = self.acc(grads, *a);
                for (((d, &gi), &yi), &xi) in da.iter_mut().zip(g).zip(y).zip(x) {
                    if xi.abs() <= math::SIGMOID_CLAMP {
                        *d += gi * yi * (1.0 - yi);
                    }
                }
            }
            Op::Relu(a) => {
                let x = self.value(*a).data();
                let da = self.acc(grads, *a);
                for ((d, &gi), &xi) in da.iter_mut().zip(g).zip(x) {
                    if xi > 0.0 {
                        *d += gi;
                    }
                }
            }
            Op::Ln(a) => {
                let x = self.value(*a).data();
                let da = self.acc(grads, *a);
                for ((d, &gi), &xi) in da.iter_mut().zip(g).zip(x) {
                    *d += gi / xi;
                }
            }
            Op::Sqrt(a) => {
                let da = self.acc(grads, *a);
                for ((d, &gi), &yi) in da.iter_mut().zip(g).zip(y) {
                    *d += gi / (2.0 * yi);
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                rstd,
            } => {
                let cols = node.value.cols();
                let gv = self.value(*gain).data();
                if self.rg(*gain) {
                    let dg = self.acc(grads, *gain);
                    for (gr, hr) in g.chunks(cols).zip(xhat.chunks(cols)) {
                        for ((d, &gi), &hi) in dg.iter_mut().zip(gr).zip(hr) {
                            *d += gi * hi;
                        }
                    }
                }
                if self.rg(*bias) {
                    let db = self.acc(grads, *bias);
                    for gr in g.chunks(cols) {
                        axpy(db, 1.0, gr);
                    }
                }
                if self.rg(*x) {
                    let dx = self.acc(grads, *x);
                    let n = cols as f64;
                    let mut dh = vec![0.0; cols];
                    for (r, (gr, hr)) in g.chunks(cols).zip(xhat.chunks(cols)).enumerate() {
                        for c in 0..cols {
                            dh[c] = gr[c] * gv[c];
                        }
                        let mean_dh = dh.iter().sum::<f64>() / n;
                        let mean_dh_h = dot(&dh, hr) / n;
                        let dr = &mut dx[r * cols..(r + 1) * cols];
                        for c in 0..cols {
                            dr[c] += rstd[r] * (dh[c] - mean_dh - hr[c] * mean_dh_h);
                        }
                    }
                }
            }
            Op::Sum(a) => {
                let da = self.acc(grads, *a);
                for d in da.iter_mut() {
                    *d += g[0];
                }
            }
            Op::Mean(a) => {
                let da = self.acc(grads, *a);
                let s = g[0] / da.len() as f64;
                for d in da.iter_mut() {
                    *d += s;
                }
            }
            Op::Gather(table, indices) => {
                let cols = node.value.cols();
                let dt = self.acc(grads, *table);
                for (k, &i) in indices.iter().enumerate() {
                    axpy(&mut dt[i * cols..(i + 1) * cols], 1.0, &g[k * cols..(k + 1) * cols]);
                }
            }
            Op::BceWithLogits(a, target) => {
                let x = self.value(*a).data();
                let da = self.acc(grads, *a);
                for (((d, &gi), &xi), &ti) in da.iter_mut().zip(g).zip(x).zip(target) {
                    let p = 1.0 / (1.0 + math::exp(-xi));
                    *d += gi * (p - ti);
                }
            }
            Op::AvgPool2x2 { x, h, w } => {
                let c = node.value.cols();
                let pw = w / 2;
                let dx = self.acc(grads, *x);
                for yy in 0..*h {
                    for xx in 0..*w {
                        let src = ((yy / 2) * pw + xx / 2) * c;
                        let dst = (yy * w + xx) * c;
                        for k in 0..c {
                            dx[dst + k] += 0.25 * g[src + k];
                        }
                    }
                }
            }
        }
    }

    fn acc<'g>(&self, grads: &'g mut [Option<Vec<f64>>], v: Var) -> &'g mut [f64] {
        let n = self.nodes[v.0].value.len();
        grads[v.0].get_or_insert_with(|| vec![0.0; n])
    }
}

fn axpy(dst: &mut [f64], a: f64, src: &[f64]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += a * s;
    }
}

pub(crate) fn softmax_in_place(row: &mut [f64]) {
    let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s = 0.0;
    for x in row.iter_mut() {
        *x = math::exp(*x - m);
        s += *x;
    }
    for x in row.iter_mut() {
        *x /= s;
    }
}
