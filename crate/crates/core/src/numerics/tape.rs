use std::sync::Arc;

use super::Tensor;
use crate::error::{Error, Result};
use crate::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MulScalar(Var, T),
    Relu(Var),
    Exp(Var),
    Log(Var),
    RowL2Normalize(Var),
    Sum(Var, Option<usize>),
    MeanRows(Var),
    ConcatRows(Vec<Var>),
    SegmentSum(Var, Arc<[usize]>),
    GatherRows(Var, Arc<[usize]>),
    ScaleRows(Var, Arc<[T]>),
    LogSumExpRows(Var, bool),
    Diagonal(Var),
    PickPerRow(Var, Arc<[usize]>),
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Define-by-run record of tensor operations.
///
/// Every operation stores its output on the tape and returns a [`Var`]. Nodes
/// whose inputs do not require gradients are kept for their values only and
/// are skipped by [`Tape::backward`]. A tape belongs to one thread.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar with respect to every gradient-requiring leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of a leaf created with `requires_grad`; `None` for any other var.
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<T>> {
        self.grads.get_mut(v.0).and_then(Option::take)
    }
}

fn require_matrix<T: Scalar>(op: &'static str, t: &Tensor<T>) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::shape(op, format!("expected a matrix, got shape {s:?}"))),
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    fn push(&mut self, name: &'static str, value: Tensor<T>, op: Op<T>, inputs: &[Var]) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("output of {name}")));
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    fn unary(&mut self, name: &'static str, a: Var, f: impl Fn(T) -> T, op: Op<T>) -> Result<Var> {
        let value = self.value(a).map(f);
        self.push(name, value, op, &[a])
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = matmul(self.value(a), self.value(b))?;
        self.push("matmul", value, Op::MatMul(a, b), &[a, b])
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let value = transpose(self.value(a))?;
        self.push("transpose", value, Op::Transpose(a), &[a])
    }

    /// `a + b` where `b` has the shape of `a` or is a row (`[c]` or `[1, c]`)
    /// broadcast over the rows of `a`.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let value = if ta.shape() == tb.shape() {
            let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x + y).collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else if ta.shape().len() == 2 && tb.rows() == 1 && tb.shape().len() >= 1 && tb.cols() == ta.cols() {
            let cols = ta.cols();
            let data = ta
                .data()
                .iter()
                .enumerate()
                .map(|(i, &x)| x + tb.data()[i % cols])
                .collect();
            Tensor::new(ta.shape().to_vec(), data)?
        } else {
            return Err(Error::shape(
                "add",
                format!("cannot broadcast {:?} onto {:?}", tb.shape(), ta.shape()),
            ));
        };
        self.push("add", value, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("sub", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x - y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("sub", value, Op::Sub(a, b), &[a, b])
    }

    /// Elementwise product of equally shaped tensors.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(Error::shape("mul", format!("{:?} vs {:?}", ta.shape(), tb.shape())));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| x * y).collect();
        let value = Tensor::new(ta.shape().to_vec(), data)?;
        self.push("mul", value, Op::Mul(a, b), &[a, b])
    }

    pub fn mul_scalar(&mut self, a: Var, c: T) -> Result<Var> {
        self.unary("mul_scalar", a, |x| x * c, Op::MulScalar(a, c))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.unary("relu", a, |x| if x > T::zero() { x } else { T::zero() }, Op::Relu(a))
    }

    pub fn exp(&mut self, a: Var) -> Result<Var> {
        self.unary("exp", a, T::exp, Op::Exp(a))
    }

    pub fn log(&mut self, a: Var) -> Result<Var> {
        if let Some(x) = self.value(a).data().iter().find(|&&x| x <= T::zero()) {
            return Err(Error::Domain {
                op: "log",
                detail: format!("non-positive input {x}"),
            });
        }
        self.unary("log", a, T::ln, Op::Log(a))
    }

    /// Scales every row to unit Euclidean norm; all-zero rows stay zero.
    pub fn row_l2_normalize(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = require_matrix("row_l2_normalize", t)?;
        let mut data = t.data().to_vec();
        for r in 0..rows {
            let row = &mut data[r * cols..(r + 1) * cols];
            let norm = row.iter().map(|&x| x * x).sum::<T>().sqrt();
            if norm > T::zero() {
                row.iter_mut().for_each(|x| *x = *x / norm);
            }
        }
        let value = Tensor::matrix(rows, cols, data)?;
        self.push("row_l2_normalize", value, Op::RowL2Normalize(a), &[a])
    }

    /// Sum of all entries (`axis = None`, a scalar), over rows (`Some(0)`,
    /// shape `[1, c]`) or over columns (`Some(1)`, shape `[r, 1]`).
    pub fn sum(&mut self, a: Var, axis: Option<usize>) -> Result<Var> {
        let t = self.value(a);
        let value = match axis {
            None => Tensor::scalar(t.data().iter().copied().sum()),
            Some(0) => {
                let (rows, cols) = require_matrix("sum", t)?;
                let mut out = vec![T::zero(); cols];
                for r in 0..rows {
                    for (o, &x) in out.iter_mut().zip(t.row(r)) {
                        *o = *o + x;
                    }
                }
                Tensor::matrix(1, cols, out)?
            }
            Some(1) => {
                let (rows, _) = require_matrix("sum", t)?;
                let out = (0..rows).map(|r| t.row(r).iter().copied().sum()).collect();
                Tensor::matrix(rows, 1, out)?
            }
            Some(axis) => return Err(Error::shape("sum", format!("axis {axis} out of range"))),
        };
        self.push("sum", value, Op::Sum(a, axis), &[a])
    }

    /// Mean of all entries, as a scalar.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(Error::shape("mean", "empty tensor"));
        }
        let s = self.sum(a, None)?;
        self.mul_scalar(s, T::one() / T::of(n as f64))
    }

    /// Column means, shape `[1, c]`.
    pub fn mean_rows(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = require_matrix("mean_rows", t)?;
        if rows == 0 {
            return Err(Error::shape("mean_rows", "no rows"));
        }
        let scale = T::one() / T::of(rows as f64);
        let mut out = vec![T::zero(); cols];
        for r in 0..rows {
            for (o, &x) in out.iter_mut().zip(t.row(r)) {
                *o = *o + x;
            }
        }
        out.iter_mut().for_each(|o| *o = *o * scale);
        let value = Tensor::matrix(1, cols, out)?;
        self.push("mean_rows", value, Op::MeanRows(a), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("concat_rows", "no inputs"))?;
        let cols = require_matrix("concat_rows", self.value(*first))?.1;
        let mut rows = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (r, c) = require_matrix("concat_rows", self.value(p))?;
            if c != cols {
                return Err(Error::shape("concat_rows", format!("{c} columns, expected {cols}")));
            }
            rows += r;
            data.extend_from_slice(self.value(p).data());
        }
        let value = Tensor::matrix(rows, cols, data)?;
        self.push("concat_rows", value, Op::ConcatRows(parts.to_vec()), parts)
    }

    /// Row `s` of the output is the sum of the input rows `r` with `segments[r] == s`.
    pub fn segment_sum(&mut self, a: Var, segments: Arc<[usize]>, num_segments: usize) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = require_matrix("segment_sum", t)?;
        if segments.len() != rows {
            return Err(Error::shape(
                "segment_sum",
                format!("{} segment ids for {rows} rows", segments.len()),
            ));
        }
        let mut out = vec![T::zero(); num_segments * cols];
        for (r, &s) in segments.iter().enumerate() {
            if s >= num_segments {
                return Err(Error::shape("segment_sum", format!("segment {s} >= {num_segments}")));
            }
            for (o, &x) in out[s * cols..(s + 1) * cols].iter_mut().zip(t.row(r)) {
                *o = *o + x;
            }
        }
        let value = Tensor::matrix(num_segments, cols, out)?;
        self.push("segment_sum", value, Op::SegmentSum(a, segments), &[a])
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = require_matrix("gather_rows", t)?;
        let mut data = Vec::with_capacity(index.len() * cols);
        for &i in index.iter() {
            if i >= rows {
                return Err(Error::shape("gather_rows", format!("row {i} >= {rows}")));
            }
            data.extend_from_slice(t.row(i));
        }
        let value = Tensor::matrix(index.len(), cols, data)?;
        self.push("gather_rows", value, Op::GatherRows(a, index), &[a])
    }

    /// Multiplies row `r` by the constant `coefficients[r]`.
    pub fn scale_rows(&mut self, a: Var, coefficients: Arc<[T]>) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = require_matrix("scale_rows", t)?;
        if coefficients.len() != rows {
            return Err(Error::shape(
                "scale_rows",
                format!("{} coefficients for {rows} rows", coefficients.len()),
            ));
        }
        let mut data = t.data().to_vec();
        for (r, &c) in coefficients.iter().enumerate() {
            data[r * cols..(r + 1) * cols].iter_mut().for_each(|x| *x = *x * c);
        }
        let value = Tensor::matrix(rows, cols, data)?;
        self.push("scale_rows", value, Op::ScaleRows(a, coefficients), &[a])
    }

    /// Row-wise `log Σ_c exp(a[r, c])`, shape `[r, 1]`, evaluated with the max
    /// shift. With `exclude_diagonal` the entry `a[r, r]` is left out.
    pub fn log_sum_exp_rows(&mut self, a: Var, exclude_diagonal: bool) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = require_matrix("log_sum_exp_rows", t)?;
        let mut out = Vec::with_capacity(rows);
        for r in 0..rows {
            let included = |c: &usize| !(exclude_diagonal && *c == r);
            let row = t.row(r);
            let max = (0..cols)
                .filter(included)
                .map(|c| row[c])
                .fold(T::neg_infinity(), T::max);
            if max == T::neg_infinity() {
                return Err(Error::shape("log_sum_exp_rows", format!("row {r} has no entries")));
            }
            let s: T = (0..cols).filter(included).map(|c| (row[c] - max).exp()).sum();
            out.push(max + s.ln());
        }
        let value = Tensor::matrix(rows, 1, out)?;
        self.push("log_sum_exp_rows", value, Op::LogSumExpRows(a, exclude_diagonal), &[a])
    }

    /// Main diagonal of a square matrix, shape `[n, 1]`.
    pub fn diagonal(&mut self, a: Var) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = require_matrix("diagonal", t)?;
        if rows != cols {
            return Err(Error::shape("diagonal", format!("{rows}×{cols} is not square")));
        }
        let value = Tensor::matrix(rows, 1, (0..rows).map(|i| t.get(i, i)).collect())?;
        self.push("diagonal", value, Op::Diagonal(a), &[a])
    }

    /// Entry `a[r, index[r]]` of every row, shape `[r, 1]`.
    pub fn pick_per_row(&mut self, a: Var, index: Arc<[usize]>) -> Result<Var> {
        let t = self.value(a);
        let (rows, cols) = require_matrix("pick_per_row", t)?;
        if index.len() != rows || index.iter().any(|&c| c >= cols) {
            return Err(Error::shape("pick_per_row", "index does not match the matrix"));
        }
        let value = Tensor::matrix(rows, 1, (0..rows).map(|r| t.get(r, index[r])).collect())?;
        self.push("pick_per_row", value, Op::PickPerRow(a, index), &[a])
    }

    /// Reverse-mode sweep from a one-element `loss`. Consumes the tape.
    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        if self.nodes[loss.0].value.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}, expected a scalar", self.nodes[loss.0].value.shape()),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let seed = self.nodes[loss.0].value.map(|_| T::one());
        grads[loss.0] = Some(seed);

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads)?;
        }

        let leaf_grads = self
            .nodes
            .iter()
            .zip(grads)
            .map(|(node, g)| match node.op {
                Op::Leaf if node.requires_grad => {
                    Some(g.unwrap_or_else(|| Tensor::zeros(node.value.shape())))
                }
                _ => None,
            })
            .collect();
        Ok(Gradients { grads: leaf_grads })
    }

    fn accumulate(&self, grads: &mut [Option<Tensor<T>>], v: Var, delta: Tensor<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => existing.add_scaled(&delta, T::one()),
            slot => *slot = Some(delta),
        }
    }

    fn propagate(&self, node: &Node<T>, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let y = &node.value;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, matmul(g, &transpose(tb)?)?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, matmul(&transpose(ta)?, g)?);
                }
            }
            Op::Transpose(a) => self.accumulate(grads, *a, transpose(g)?),
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.requires_grad(*b) {
                    let tb = self.value(*b);
                    let delta = if tb.shape() == g.shape() {
                        g.clone()
                    } else {
                        let cols = tb.cols();
                        let mut out = vec![T::zero(); cols];
                        for (i, &x) in g.data().iter().enumerate() {
                            out[i % cols] = out[i % cols] + x;
                        }
                        Tensor::new(tb.shape().to_vec(), out)?
                    };
                    self.accumulate(grads, *b, delta);
                }
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|x| -x));
            }
            Op::Mul(a, b) => {
                let (ta, tb) = (self.value(*a), self.value(*b));
                let times = |t: &Tensor<T>| -> Result<Tensor<T>> {
                    let data = t.data().iter().zip(g.data()).map(|(&x, &gi)| x * gi).collect();
                    Tensor::new(t.shape().to_vec(), data)
                };
                if self.requires_grad(*a) {
                    self.accumulate(grads, *a, times(tb)?);
                }
                if self.requires_grad(*b) {
                    self.accumulate(grads, *b, times(ta)?);
                }
            }
            Op::MulScalar(a, c) => self.accumulate(grads, *a, g.map(|x| x * *c)),
            Op::Relu(a) => {
                let x = self.value(*a);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&xi, &gi)| if xi > T::zero() { gi } else { T::zero() })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::Exp(a) => {
                let data = y.data().iter().zip(g.data()).map(|(&yi, &gi)| yi * gi).collect();
                self.accumulate(grads, *a, Tensor::new(y.shape().to_vec(), data)?);
            }
            Op::Log(a) => {
                let x = self.value(*a);
                let data = x.data().iter().zip(g.data()).map(|(&xi, &gi)| gi / xi).collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::RowL2Normalize(a) => {
                let x = self.value(*a);
                let (rows, cols) = (x.rows(), x.cols());
                let mut out = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    let norm = x.row(r).iter().map(|&v| v * v).sum::<T>().sqrt();
                    if norm == T::zero() {
                        continue;
                    }
                    let (yr, gr) = (y.row(r), g.row(r));
                    let dot: T = yr.iter().zip(gr).map(|(&p, &q)| p * q).sum();
                    for c in 0..cols {
                        out[r * cols + c] = (gr[c] - yr[c] * dot) / norm;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), out)?);
            }
            Op::Sum(a, axis) => {
                let x = self.value(*a);
                let cols = x.cols();
                let data = (0..x.len())
                    .map(|i| match axis {
                        None => g.data()[0],
                        Some(0) => g.data()[i % cols],
                        _ => g.data()[i / cols],
                    })
                    .collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::MeanRows(a) => {
                let x = self.value(*a);
                let (rows, cols) = (x.rows(), x.cols());
                let scale = T::one() / T::of(rows as f64);
                let data = (0..rows * cols).map(|i| g.data()[i % cols] * scale).collect();
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut start = 0;
                for p in parts {
                    let shape = self.value(*p).shape().to_vec();
                    let n = shape[0] * cols;
                    let slice = g.data()[start * cols..start * cols + n].to_vec();
                    start += shape[0];
                    self.accumulate(grads, *p, Tensor::new(shape, slice)?);
                }
            }
            Op::SegmentSum(a, segments) => {
                let x = self.value(*a);
                let mut data = Vec::with_capacity(x.len());
                for &s in segments.iter() {
                    data.extend_from_slice(g.row(s));
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::GatherRows(a, index) => {
                let x = self.value(*a);
                let cols = x.cols();
                let mut data = vec![T::zero(); x.len()];
                for (i, &r) in index.iter().enumerate() {
                    for (d, &v) in data[r * cols..(r + 1) * cols].iter_mut().zip(g.row(i)) {
                        *d = *d + v;
                    }
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::ScaleRows(a, coefficients) => {
                let cols = g.cols();
                let data = g
                    .data()
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * coefficients[i / cols])
                    .collect();
                self.accumulate(grads, *a, Tensor::new(g.shape().to_vec(), data)?);
            }
            Op::LogSumExpRows(a, exclude_diagonal) => {
                let x = self.value(*a);
                let (rows, cols) = (x.rows(), x.cols());
                let mut data = vec![T::zero(); rows * cols];
                for r in 0..rows {
                    let lse = y.data()[r];
                    for c in 0..cols {
                        if *exclude_diagonal && r == c {
                            continue;
                        }
                        data[r * cols + c] = g.data()[r] * (x.get(r, c) - lse).exp();
                    }
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::Diagonal(a) => {
                let x = self.value(*a);
                let n = x.rows();
                let mut data = vec![T::zero(); n * n];
                for i in 0..n {
                    data[i * n + i] = g.data()[i];
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
            Op::PickPerRow(a, index) => {
                let x = self.value(*a);
                let cols = x.cols();
                let mut data = vec![T::zero(); x.len()];
                for (r, &c) in index.iter().enumerate() {
                    data[r * cols + c] = g.data()[r];
                }
                self.accumulate(grads, *a, Tensor::new(x.shape().to_vec(), data)?);
            }
        }
        Ok(())
    }
}

/// Plain matrix product, no tape.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = require_matrix("matmul", a)?;
    let (k2, n) = require_matrix("matmul", b)?;
    if k != k2 {
        return Err(Error::shape("matmul", format!("{m}×{k} times {k2}×{n}")));
    }
    let mut out = vec![T::zero(); m * n];
    let (ad, bd) = (a.data(), b.data());
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == T::zero() {
                continue;
            }
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o = *o + aip * bv;
            }
        }
    }
    Tensor::matrix(m, n, out)
}

pub fn transpose<T: Scalar>(a: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, n) = require_matrix("transpose", a)?;
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        for j in 0..n {
            out[j * m + i] = a.data()[i * n + j];
        }
    }
    Tensor::matrix(n, m, out)
}
