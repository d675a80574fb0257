//! Reverse-mode automatic differentiation over matrices.
//!
//! A [`Tape`] records every primitive in execution order together with the
//! intermediates its backward rule needs. [`Tape::backward`] walks the
//! record once in reverse and accumulates gradients into every operand that
//! (transitively) depends on a trainable leaf.

use super::kernels;
use super::{Scalar, Tensor};
use crate::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, T),
    ConcatCols(Vec<Var>),
    SliceCols(Var, usize),
    SelectCols(Var, Vec<usize>),
    Transpose(Var),
    Relu(Var),
    Softmax(Var),
    LayerNorm(Var, Vec<T>),
    Dropout(Var, Vec<T>),
    Sum(Var),
    CrossEntropy {
        logits: Var,
        probs: Vec<T>,
        targets: Vec<Option<usize>>,
        count: usize,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn shape_err(op: &'static str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape {
        op,
        lhs: a.to_vec(),
        rhs: b.to_vec(),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
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

    /// Trainable input.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives a gradient (features, masks).
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = &self.nodes[v.0].value;
        (t.rows(), t.cols())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        if k != k2 {
            return Err(shape_err("matmul", self.value(a).shape(), self.value(b).shape()));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::matmul(self.value(a).data(), self.value(b).data(), m, k, n, &mut out);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::matrix(m, n, out)?, Op::MatMul(a, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(shape_err(op, self.value(a).shape(), self.value(b).shape()));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o += y;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let mut out = self.value(a).clone();
        for (o, &y) in out.data_mut().iter_mut().zip(self.value(b).data()) {
            *o *= y;
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    fn row_check(&self, op: &'static str, a: Var, row: Var) -> Result<usize> {
        let cols = self.value(a).cols();
        if self.value(row).numel() != cols {
            return Err(shape_err(op, self.value(a).shape(), self.value(row).shape()));
        }
        Ok(cols)
    }

    /// Adds a row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let cols = self.row_check("add_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row).data();
        for orow in out.data_mut().chunks_mut(cols) {
            for (o, &v) in orow.iter_mut().zip(r) {
                *o += v;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::AddRow(a, row), rg))
    }

    /// Multiplies every row of `a` elementwise by a row vector.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let cols = self.row_check("mul_row", a, row)?;
        let mut out = self.value(a).clone();
        let r = self.value(row).data();
        for orow in out.data_mut().chunks_mut(cols) {
            for (o, &v) in orow.iter_mut().zip(r) {
                *o *= v;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(out, Op::MulRow(a, row), rg))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let out = self.value(a).map(|v| v * s);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, s), rg)
    }

    /// Horizontal concatenation of matrices with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let first = *parts.first().ok_or_else(|| Error::invalid("concat of nothing"))?;
        let rows = self.dims(first).0;
        for &p in parts {
            if self.dims(p).0 != rows {
                return Err(shape_err("concat_cols", self.value(first).shape(), self.value(p).shape()));
            }
        }
        let total: usize = parts.iter().map(|&p| self.dims(p).1).sum();
        let mut out = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(Tensor::matrix(rows, total, out)?, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let (rows, cols) = self.dims(a);
        if start + len > cols {
            return Err(shape_err("slice_cols", self.value(a).shape(), &[start, len]));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * len);
        for i in 0..rows {
            out.extend_from_slice(&src[i * cols + start..i * cols + start + len]);
        }
        let rg = self.rg(a);
        Ok(self.push(Tensor::matrix(rows, len, out)?, Op::SliceCols(a, start), rg))
    }

    /// Gathers the listed columns of `a` (repeats allowed).
    pub fn select_cols(&mut self, a: Var, cols: &[usize]) -> Result<Var> {
        let (rows, width) = self.dims(a);
        if let Some(&bad) = cols.iter().find(|&&c| c >= width) {
            return Err(shape_err("select_cols", self.value(a).shape(), &[bad]));
        }
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(rows * cols.len());
        for i in 0..rows {
            let row = &src[i * width..(i + 1) * width];
            out.extend(cols.iter().map(|&c| row[c]));
        }
        let rg = self.rg(a);
        Ok(self.push(
            Tensor::matrix(rows, cols.len(), out)?,
            Op::SelectCols(a, cols.to_vec()),
            rg,
        ))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let out = kernels::transpose(self.value(a).data(), r, c);
        let rg = self.rg(a);
        self.push(Tensor::matrix(c, r, out).expect("shape"), Op::Transpose(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    /// Softmax along each row.
    pub fn row_softmax(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        let cols = out.cols();
        kernels::softmax_rows(out.data_mut(), cols);
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    /// Per-row standardization without affine parameters.
    pub fn layer_norm(&mut self, a: Var, eps: T) -> Var {
        let src = self.value(a);
        let cols = src.cols();
        let mut out = Tensor::zeros(src.shape());
        let rstd = kernels::layer_norm_rows(src.data(), cols, eps, out.data_mut());
        let rg = self.rg(a);
        self.push(out, Op::LayerNorm(a, rstd), rg)
    }

    /// Inverted dropout with an explicit keep mask (entries 0 or 1).
    pub fn dropout_with_mask(&mut self, a: Var, keep: &[bool], p: f64) -> Result<Var> {
        if keep.len() != self.value(a).numel() {
            return Err(shape_err("dropout", self.value(a).shape(), &[keep.len()]));
        }
        let scale = T::of(1.0 / (1.0 - p));
        let mask: Vec<T> = keep
            .iter()
            .map(|&k| if k { scale } else { T::zero() })
            .collect();
        let mut out = self.value(a).clone();
        for (o, &m) in out.data_mut().iter_mut().zip(&mask) {
            *o *= m;
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::Dropout(a, mask), rg))
    }

    /// Dropout with a Bernoulli keep mask drawn from `rng`; identity if `p == 0`.
    pub fn dropout(&mut self, a: Var, p: f64, rng: &mut impl rand::Rng) -> Result<Var> {
        if p <= 0.0 {
            return Ok(a);
        }
        let keep: Vec<bool> = (0..self.value(a).numel())
            .map(|_| rng.gen::<f64>() >= p)
            .collect();
        self.dropout_with_mask(a, &keep, p)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    /// Mean over unmasked rows of `-log softmax(logits)[target]`.
    ///
    /// `targets[i] == None` excludes row `i` from the loss.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Result<Var> {
        let (rows, cols) = self.dims(logits);
        if targets.len() != rows {
            return Err(shape_err("cross_entropy", self.value(logits).shape(), &[targets.len()]));
        }
        let count = targets.iter().filter(|t| t.is_some()).count();
        if count == 0 {
            return Err(Error::invalid("cross_entropy: every position is masked"));
        }
        if let Some(bad) = targets.iter().flatten().find(|&&t| t >= cols) {
            return Err(Error::invalid(format!(
                "cross_entropy: target {bad} outside vocabulary of {cols}"
            )));
        }
        let mut probs = self.value(logits).data().to_vec();
        kernels::softmax_rows(&mut probs, cols);
        let src = self.value(logits).data();
        let mut loss = 0.0f64;
        for (i, t) in targets.iter().enumerate() {
            if let Some(t) = *t {
                let row = &src[i * cols..(i + 1) * cols];
                let max = row.iter().copied().fold(T::neg_infinity(), T::max);
                let lse = max.as_f64()
                    + row
                        .iter()
                        .map(|&v| (v - max).as_f64().exp())
                        .sum::<f64>()
                        .ln();
                loss += lse - row[t].as_f64();
            }
        }
        let value = Tensor::scalar(T::of(loss / count as f64));
        let rg = self.rg(logits);
        Ok(self.push(
            value,
            Op::CrossEntropy {
                logits,
                probs,
                targets: targets.to_vec(),
                count,
            },
            rg,
        ))
    }

    /// Gradients of the scalar `root` with respect to every trainable leaf.
    pub fn backward(&self, root: Var) -> Result<Gradients<T>> {
        let rv = &self.nodes[root.0].value;
        if rv.numel() != 1 {
            return Err(Error::invalid(format!(
                "backward needs a scalar root, got shape {:?}",
                rv.shape()
            )));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.nodes[root.0].requires_grad {
            return Ok(Gradients {
                grads,
                shapes: self.shapes(),
            });
        }
        grads[root.0] = Some(vec![T::one()]);
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else {
                continue;
            };
            let node = &self.nodes[idx];
            self.backprop(&node.op, &node.value, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.shapes(),
        })
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        self.nodes.iter().map(|n| n.value.shape().to_vec()).collect()
    }

    fn slot<'g>(&self, grads: &'g mut [Option<Vec<T>>], v: Var) -> Option<&'g mut Vec<T>> {
        if !self.nodes[v.0].requires_grad {
            return None;
        }
        let n = self.nodes[v.0].value.numel();
        Some(grads[v.0].get_or_insert_with(|| vec![T::zero(); n]))
    }

    fn backprop(&self, op: &Op<T>, out: &Tensor<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = self.dims(*b).1;
                if let Some(ga) = self.slot(grads, *a) {
                    kernels::matmul_nt_acc(g, self.value(*b).data(), m, n, k, ga);
                }
                if let Some(gb) = self.slot(grads, *b) {
                    kernels::matmul_tn_acc(self.value(*a).data(), g, m, k, n, gb);
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if let Some(gv) = self.slot(grads, v) {
                        kernels::axpy(T::one(), g, gv);
                    }
                }
            }
            Op::Mul(a, b) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gi), &bi) in ga.iter_mut().zip(g).zip(self.value(*b).data()) {
                        *o += gi * bi;
                    }
                }
                if let Some(gb) = self.slot(grads, *b) {
                    for ((o, &gi), &ai) in gb.iter_mut().zip(g).zip(self.value(*a).data()) {
                        *o += gi * ai;
                    }
                }
            }
            Op::AddRow(a, row) => {
                let cols = out.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    kernels::axpy(T::one(), g, ga);
                }
                if let Some(gr) = self.slot(grads, *row) {
                    for grow in g.chunks(cols) {
                        kernels::axpy(T::one(), grow, gr);
                    }
                }
            }
            Op::MulRow(a, row) => {
                let cols = out.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    let r = self.value(*row).data();
                    for (garow, grow) in ga.chunks_mut(cols).zip(g.chunks(cols)) {
                        for ((o, &gi), &ri) in garow.iter_mut().zip(grow).zip(r) {
                            *o += gi * ri;
                        }
                    }
                }
                if let Some(gr) = self.slot(grads, *row) {
                    for (arow, grow) in self.value(*a).data().chunks(cols).zip(g.chunks(cols)) {
                        for ((o, &gi), &ai) in gr.iter_mut().zip(grow).zip(arow) {
                            *o += gi * ai;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if let Some(ga) = self.slot(grads, *a) {
                    kernels::axpy(*s, g, ga);
                }
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let mut offset = 0;
                for &p in parts {
                    let (rows, c) = self.dims(p);
                    if let Some(gp) = self.slot(grads, p) {
                        for i in 0..rows {
                            let src = &g[i * total + offset..i * total + offset + c];
                            kernels::axpy(T::one(), src, &mut gp[i * c..(i + 1) * c]);
                        }
                    }
                    offset += c;
                }
            }
            Op::SliceCols(a, start) => {
                let cols = self.dims(*a).1;
                let len = out.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for (i, grow) in g.chunks(len).enumerate() {
                        let dst = &mut ga[i * cols + start..i * cols + start + len];
                        kernels::axpy(T::one(), grow, dst);
                    }
                }
            }
            Op::SelectCols(a, cols) => {
                let width = self.dims(*a).1;
                if let Some(ga) = self.slot(grads, *a) {
                    for (i, grow) in g.chunks(cols.len()).enumerate() {
                        let dst = &mut ga[i * width..(i + 1) * width];
                        for (&c, &gv) in cols.iter().zip(grow) {
                            dst[c] += gv;
                        }
                    }
                }
            }
            Op::Transpose(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    let (r, c) = (out.rows(), out.cols());
                    let back = kernels::transpose(g, r, c);
                    kernels::axpy(T::one(), &back, ga);
                }
            }
            Op::Relu(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gi), &y) in ga.iter_mut().zip(g).zip(out.data()) {
                        if y > T::zero() {
                            *o += gi;
                        }
                    }
                }
            }
            Op::Softmax(a) => {
                let cols = out.cols();
                if let Some(ga) = self.slot(grads, *a) {
                    for ((garow, grow), yrow) in ga
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(out.data().chunks(cols))
                    {
                        let inner = kernels::dot(grow, yrow);
                        for ((o, &gi), &y) in garow.iter_mut().zip(grow).zip(yrow) {
                            *o += y * (gi - inner);
                        }
                    }
                }
            }
            Op::LayerNorm(a, rstd) => {
                let cols = out.cols();
                let n = T::of(cols as f64);
                if let Some(ga) = self.slot(grads, *a) {
                    for (((garow, grow), xhat), &r) in ga
                        .chunks_mut(cols)
                        .zip(g.chunks(cols))
                        .zip(out.data().chunks(cols))
                        .zip(rstd)
                    {
                        let mean_g = grow.iter().copied().sum::<T>() / n;
                        let mean_gx = kernels::dot(grow, xhat) / n;
                        for ((o, &gi), &xh) in garow.iter_mut().zip(grow).zip(xhat) {
                            *o += r * (gi - mean_g - xh * mean_gx);
                        }
                    }
                }
            }
            Op::Dropout(a, mask) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for ((o, &gi), &m) in ga.iter_mut().zip(g).zip(mask) {
                        *o += gi * m;
                    }
                }
            }
            Op::Sum(a) => {
                if let Some(ga) = self.slot(grads, *a) {
                    for o in ga.iter_mut() {
                        *o += g[0];
                    }
                }
            }
            Op::CrossEntropy {
                logits,
                probs,
                targets,
                count,
            } => {
                let cols = self.dims(*logits).1;
                let scale = g[0] / T::of(*count as f64);
                if let Some(gl) = self.slot(grads, *logits) {
                    for (i, t) in targets.iter().enumerate() {
                        let Some(t) = *t else { continue };
                        let prow = &probs[i * cols..(i + 1) * cols];
                        let grow = &mut gl[i * cols..(i + 1) * cols];
                        kernels::axpy(scale, prow, grow);
                        grow[t] -= scale;
                    }
                }
            }
        }
    }
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a trainable leaf; `None` if it did not influence the root.
    pub fn get(&self, v: Var) -> Option<Tensor<T>> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()).expect("grad shape"))
    }

    /// Like [`Self::get`] but moves the buffer out, zero-filled if absent.
    pub fn take(&mut self, v: Var) -> Tensor<T> {
        let shape = self.shapes[v.0].clone();
        match self.grads[v.0].take() {
            Some(g) => Tensor::new(shape, g).expect("grad shape"),
            None => Tensor::zeros(&shape),
        }
    }
}
