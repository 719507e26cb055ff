//! Define-by-run reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a 1x1 result walks the record in reverse creation
//! order and returns the vector-Jacobian product for every node that
//! depends on a leaf. The graph is meant to be rebuilt for each training
//! step; nothing is cached between tapes.

use std::cell::{Ref, RefCell};

use crate::error::{Error, Result};
use crate::numeric::linalg::{cholesky_logdet, JitterPolicy};
use crate::numeric::Matrix;
use crate::scalar::Scalar;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    AddRow(usize, usize),
    Scale(usize, T),
    Offset(usize),
    Transpose(usize),
    Tanh(usize),
    Abs(usize),
    SoftmaxRows(usize, T),
    LogSoftmaxRows(usize),
    L2NormalizeRows { input: usize, norms: Vec<T>, eps: T },
    Gather(usize, Vec<usize>),
    SelectRows(usize, Vec<usize>),
    Sum(usize),
    Mean(usize),
    LogDet { input: usize, inverse: Matrix<T> },
}

#[derive(Debug)]
struct Node<T> {
    value: Matrix<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Operation record for one forward pass.
#[derive(Debug, Default)]
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug)]
pub struct Var<'t, T> {
    tape: &'t Tape<T>,
    id: usize,
}

/// Gradients produced by [`Tape::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Matrix<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient of the loss with respect to `var`, if the loss depends on it.
    pub fn get(&self, var: Var<'_, T>) -> Option<&Matrix<T>> {
        self.grads.get(var.id).and_then(Option::as_ref)
    }

    /// Like [`get`](Self::get) but materializes zeros for unreachable leaves.
    pub fn get_or_zeros(&self, var: Var<'_, T>) -> Matrix<T> {
        match self.get(var) {
            Some(g) => g.clone(),
            None => {
                let (r, c) = var.tape.nodes.borrow()[var.id].value.shape();
                Matrix::zeros(r, c)
            }
        }
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: RefCell::new(Vec::new()),
        }
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A differentiable input.
    pub fn leaf(&self, value: Matrix<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, true)
    }

    /// An input that receives no gradient.
    pub fn constant(&self, value: Matrix<T>) -> Var<'_, T> {
        self.push(value, Op::Leaf, false)
    }

    pub fn value(&self, var: Var<'_, T>) -> Ref<'_, Matrix<T>> {
        Ref::map(self.nodes.borrow(), |n| &n[var.id].value)
    }

    fn push(&self, value: Matrix<T>, op: Op<T>, requires_grad: bool) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    fn requires(&self, ids: &[usize]) -> bool {
        let nodes = self.nodes.borrow();
        ids.iter().any(|&i| nodes[i].requires_grad)
    }

    fn record(&self, value: Matrix<T>, op: Op<T>, parents: &[usize], name: &'static str) -> Result<Var<'_, T>> {
        if !value.is_finite() {
            return Err(Error::NonFinite(name));
        }
        let rg = self.requires(parents);
        Ok(self.push(value, op, rg))
    }

    /// Reverse pass from a 1x1 `loss`. Accumulation order is the reverse of
    /// node creation order, so identical graphs give identical gradients.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let (r, c) = nodes[loss.id].value.shape();
        if (r, c) != (1, 1) {
            return Err(Error::NonScalarLoss(r, c));
        }
        let mut grads: Vec<Option<Matrix<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.id] = Some(Matrix::filled(1, 1, T::one()));

        for id in (0..=loss.id).rev() {
            let node = &nodes[id];
            if !node.requires_grad {
                continue;
            }
            let Some(upstream) = grads[id].take() else {
                continue;
            };
            let value_of = |i: usize| &nodes[i].value;
            let mut out: Vec<(usize, Matrix<T>)> = Vec::with_capacity(2);
            let mut send = |target: usize, g: Matrix<T>| {
                if nodes[target].requires_grad {
                    out.push((target, g));
                }
            };
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(upstream);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let (a, b) = (*a, *b);
                    if nodes[a].requires_grad {
                        send(a, upstream.matmul(&value_of(b).transpose())?);
                    }
                    if nodes[b].requires_grad {
                        send(b, value_of(a).transpose().matmul(&upstream)?);
                    }
                }
                Op::Add(a, b) => {
                    send(*a, upstream.clone());
                    send(*b, upstream);
                }
                Op::Sub(a, b) => {
                    send(*a, upstream.clone());
                    send(*b, upstream.scale(-T::one()));
                }
                Op::Mul(a, b) => {
                    let ga = upstream.zip_map(value_of(*b), "mul", |g, v| g * v)?;
                    let gb = upstream.zip_map(value_of(*a), "mul", |g, v| g * v)?;
                    send(*a, ga);
                    send(*b, gb);
                }
                Op::AddRow(a, bias) => {
                    let cols = upstream.cols();
                    let mut gb = vec![T::zero(); cols];
                    for row in upstream.iter_rows() {
                        for (acc, &g) in gb.iter_mut().zip(row) {
                            *acc += g;
                        }
                    }
                    send(*a, upstream);
                    send(*bias, Matrix::from_raw(1, cols, gb));
                }
                Op::Scale(a, c) => send(*a, upstream.scale(*c)),
                Op::Offset(a) => send(*a, upstream),
                Op::Transpose(a) => send(*a, upstream.transpose()),
                Op::Tanh(a) => {
                    let g = upstream.zip_map(&node.value, "tanh", |g, y| g * (T::one() - y * y))?;
                    send(*a, g);
                }
                Op::Abs(a) => {
                    let g = upstream.zip_map(value_of(*a), "abs", |g, x| {
                        if x > T::zero() {
                            g
                        } else if x < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })?;
                    send(*a, g);
                }
                Op::SoftmaxRows(a, temp) => {
                    let y = &node.value;
                    let mut g = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let (yr, ur) = (y.row(i), upstream.row(i));
                        let dot: T = yr.iter().zip(ur).map(|(&p, &u)| p * u).sum();
                        for (j, out) in g.row_mut(i).iter_mut().enumerate() {
                            *out = yr[j] * (ur[j] - dot) / *temp;
                        }
                    }
                    send(*a, g);
                }
                Op::LogSoftmaxRows(a) => {
                    let y = &node.value;
                    let mut g = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let ur = upstream.row(i);
                        let total: T = ur.iter().copied().sum();
                        for (j, out) in g.row_mut(i).iter_mut().enumerate() {
                            *out = ur[j] - y.get(i, j).exp() * total;
                        }
                    }
                    send(*a, g);
                }
                Op::L2NormalizeRows { input, norms, eps } => {
                    let y = &node.value;
                    let mut g = Matrix::zeros(y.rows(), y.cols());
                    for i in 0..y.rows() {
                        let ur = upstream.row(i);
                        let out = g.row_mut(i);
                        if norms[i] > *eps {
                            let u = y.row(i);
                            let dot: T = u.iter().zip(ur).map(|(&a, &b)| a * b).sum();
                            for j in 0..out.len() {
                                out[j] = (ur[j] - u[j] * dot) / norms[i];
                            }
                        } else {
                            for j in 0..out.len() {
                                out[j] = ur[j] / *eps;
                            }
                        }
                    }
                    send(*input, g);
                }
                Op::Gather(a, idx) => {
                    let (r, c) = value_of(*a).shape();
                    let mut g = Matrix::zeros(r, c);
                    for (i, &j) in idx.iter().enumerate() {
                        g.set(i, j, upstream.get(i, 0));
                    }
                    send(*a, g);
                }
                Op::SelectRows(a, idx) => {
                    let (r, c) = value_of(*a).shape();
                    let mut g = Matrix::zeros(r, c);
                    for (k, &i) in idx.iter().enumerate() {
                        for (dst, &src) in g.row_mut(i).iter_mut().zip(upstream.row(k)) {
                            *dst += src;
                        }
                    }
                    send(*a, g);
                }
                Op::Sum(a) => {
                    let (r, c) = value_of(*a).shape();
                    send(*a, Matrix::filled(r, c, upstream.get(0, 0)));
                }
                Op::Mean(a) => {
                    let (r, c) = value_of(*a).shape();
                    let n = T::of((r * c) as f64);
                    send(*a, Matrix::filled(r, c, upstream.get(0, 0) / n));
                }
                Op::LogDet { input, inverse } => send(*input, inverse.scale(upstream.get(0, 0))),
            }
            for (target, g) in out {
                match &mut grads[target] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Gradients { grads })
    }
}

impl<'t, T: Scalar> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    /// Copy of the node's value.
    pub fn value(&self) -> Matrix<T> {
        self.tape.value(*self).clone()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.tape.value(*self).shape()
    }

    /// The value of a 1x1 node.
    pub fn item(&self) -> T {
        self.tape.value(*self).get(0, 0)
    }

    fn same_tape(&self, other: &Self) {
        assert!(
            std::ptr::eq(self.tape, other.tape),
            "vars from different tapes combined"
        );
    }

    pub fn matmul(self, other: Self) -> Result<Self> {
        self.same_tape(&other);
        let v = self.tape.value(self).matmul(&self.tape.value(other))?;
        self.tape.record(v, Op::MatMul(self.id, other.id), &[self.id, other.id], "matmul")
    }

    #[allow(clippy::should_implement_trait)]
    pub fn add(self, other: Self) -> Result<Self> {
        self.same_tape(&other);
        let v = self.tape.value(self).add(&self.tape.value(other))?;
        self.tape.record(v, Op::Add(self.id, other.id), &[self.id, other.id], "add")
    }

    #[allow(clippy::should_implement_trait)]
    pub fn sub(self, other: Self) -> Result<Self> {
        self.same_tape(&other);
        let v = self.tape.value(self).sub(&self.tape.value(other))?;
        self.tape.record(v, Op::Sub(self.id, other.id), &[self.id, other.id], "sub")
    }

    /// Elementwise product.
    #[allow(clippy::should_implement_trait)]
    pub fn mul(self, other: Self) -> Result<Self> {
        self.same_tape(&other);
        let v = self
            .tape
            .value(self)
            .zip_map(&self.tape.value(other), "mul", |a, b| a * b)?;
        self.tape.record(v, Op::Mul(self.id, other.id), &[self.id, other.id], "mul")
    }

    /// Adds a 1 x n row to every row.
    pub fn add_row(self, bias: Self) -> Result<Self> {
        self.same_tape(&bias);
        let v = {
            let (a, b) = (self.tape.value(self), self.tape.value(bias));
            if b.rows() != 1 || b.cols() != a.cols() {
                return Err(Error::ShapeMismatch {
                    op: "add_row",
                    lhs: a.shape(),
                    rhs: b.shape(),
                });
            }
            let mut out = a.clone();
            for i in 0..out.rows() {
                for (o, &bj) in out.row_mut(i).iter_mut().zip(b.row(0)) {
                    *o += bj;
                }
            }
            out
        };
        self.tape.record(v, Op::AddRow(self.id, bias.id), &[self.id, bias.id], "add_row")
    }

    pub fn scale(self, c: T) -> Result<Self> {
        let v = self.tape.value(self).scale(c);
        self.tape.record(v, Op::Scale(self.id, c), &[self.id], "scale")
    }

    /// Adds a constant to every entry.
    pub fn offset(self, c: T) -> Result<Self> {
        let v = self.tape.value(self).map(|x| x + c);
        self.tape.record(v, Op::Offset(self.id), &[self.id], "offset")
    }

    pub fn transpose(self) -> Result<Self> {
        let v = self.tape.value(self).transpose();
        self.tape.record(v, Op::Transpose(self.id), &[self.id], "transpose")
    }

    pub fn tanh(self) -> Result<Self> {
        let v = self.tape.value(self).map(|x| x.tanh());
        self.tape.record(v, Op::Tanh(self.id), &[self.id], "tanh")
    }

    /// Elementwise |x|; the subgradient at 0 is 0.
    pub fn abs(self) -> Result<Self> {
        let v = self.tape.value(self).map(|x| x.abs());
        self.tape.record(v, Op::Abs(self.id), &[self.id], "abs")
    }

    /// Row-wise `softmax(x / temperature)` with max subtraction.
    pub fn softmax_rows(self, temperature: T) -> Result<Self> {
        let v = softmax_rows(&self.tape.value(self), temperature)?;
        self.tape
            .record(v, Op::SoftmaxRows(self.id, temperature), &[self.id], "softmax_rows")
    }

    /// Row-wise log-softmax in log-sum-exp form.
    pub fn log_softmax_rows(self) -> Result<Self> {
        let v = log_softmax_rows(&self.tape.value(self));
        self.tape
            .record(v, Op::LogSoftmaxRows(self.id), &[self.id], "log_softmax_rows")
    }

    /// Each row divided by `max(‖row‖₂, eps)`.
    pub fn l2_normalize_rows(self, eps: T) -> Result<Self> {
        let (v, norms) = l2_normalize_rows(&self.tape.value(self), eps);
        self.tape.record(
            v,
            Op::L2NormalizeRows {
                input: self.id,
                norms,
                eps,
            },
            &[self.id],
            "l2_normalize_rows",
        )
    }

    /// Picks `x[i, cols[i]]` for every row, giving an n x 1 column.
    pub fn gather(self, cols: &[usize]) -> Result<Self> {
        let v = {
            let x = self.tape.value(self);
            if cols.len() != x.rows() {
                return Err(Error::LengthMismatch(cols.len(), x.rows()));
            }
            if let Some(&bad) = cols.iter().find(|&&c| c >= x.cols()) {
                return Err(Error::LabelOutOfRange {
                    label: bad,
                    classes: x.cols(),
                });
            }
            Matrix::from_raw(
                cols.len(),
                1,
                cols.iter().enumerate().map(|(i, &j)| x.get(i, j)).collect(),
            )
        };
        self.tape
            .record(v, Op::Gather(self.id, cols.to_vec()), &[self.id], "gather")
    }

    pub fn select_rows(self, rows: &[usize]) -> Result<Self> {
        let v = {
            let x = self.tape.value(self);
            if let Some(&bad) = rows.iter().find(|&&r| r >= x.rows()) {
                return Err(Error::ShapeMismatch {
                    op: "select_rows",
                    lhs: x.shape(),
                    rhs: (bad, 0),
                });
            }
            x.select_rows(rows)
        };
        self.tape
            .record(v, Op::SelectRows(self.id, rows.to_vec()), &[self.id], "select_rows")
    }

    pub fn sum(self) -> Result<Self> {
        let v = Matrix::from_raw(1, 1, vec![self.tape.value(self).sum()]);
        self.tape.record(v, Op::Sum(self.id), &[self.id], "sum")
    }

    pub fn mean(self) -> Result<Self> {
        let v = {
            let x = self.tape.value(self);
            if x.is_empty() {
                return Err(Error::ShapeMismatch {
                    op: "mean",
                    lhs: x.shape(),
                    rhs: (1, 1),
                });
            }
            Matrix::from_raw(1, 1, vec![x.sum() / T::of(x.len() as f64)])
        };
        self.tape.record(v, Op::Mean(self.id), &[self.id], "mean")
    }

    /// `log det(x + jitter·I)` through Cholesky; gradient `(x + jitter·I)⁻¹`.
    pub fn logdet(self, policy: &JitterPolicy) -> Result<Self> {
        let r = cholesky_logdet(&self.tape.value(self), policy)?;
        let v = Matrix::from_raw(1, 1, vec![r.value]);
        self.tape.record(
            v,
            Op::LogDet {
                input: self.id,
                inverse: r.inverse,
            },
            &[self.id],
            "logdet",
        )
    }
}

/// Row-wise `softmax(x / temperature)`.
pub fn softmax_rows<T: Scalar>(x: &Matrix<T>, temperature: T) -> Result<Matrix<T>> {
    if !(temperature > T::zero()) {
        return Err(Error::NonPositiveTemperature(temperature.to_f64_lossy()));
    }
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = ((*v - max) / temperature).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(out)
}

pub fn log_softmax_rows<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let mut out = x.clone();
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let (arg, max) = row
            .iter()
            .enumerate()
            .fold((0, T::neg_infinity()), |(a, m), (j, &v)| if v > m { (j, v) } else { (a, m) });
        // the max term contributes exactly 1; ln_1p keeps tiny tails accurate
        let rest: T = row
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != arg)
            .map(|(_, &v)| (v - max).exp())
            .sum();
        let tail = rest.ln_1p();
        for v in row.iter_mut() {
            *v = (*v - max) - tail;
        }
    }
    out
}

/// Row-normalized copy plus the original row norms.
pub fn l2_normalize_rows<T: Scalar>(x: &Matrix<T>, eps: T) -> (Matrix<T>, Vec<T>) {
    let mut out = x.clone();
    let mut norms = Vec::with_capacity(x.rows());
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        let d = n.max(eps);
        for v in row.iter_mut() {
            *v /= d;
        }
        norms.push(n);
    }
    (out, norms)
}
