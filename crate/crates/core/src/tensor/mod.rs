//! Dense 2-D tensors with tape-based reverse-mode differentiation.
//!
//! Every value is an `f64` matrix; vectors are `1 x n` rows and scalars are
//! `1 x 1`. There is no implicit broadcasting: callers expand shapes
//! explicitly with [`Tape::repeat_rows`] or a matmul against a constant.
//!
//! A [`Tape`] records each operation in execution order together with the
//! activations its backward rule needs. [`Tape::backward`] walks the record
//! in reverse and accumulates gradients for every node that requires one.
//!
//! ```
//! use nfarec::tensor::{Tape, Matrix};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Matrix::from_shape_vec((1, 2), vec![3.0, 4.0]).unwrap());
//! let sq = tape.mul(x, x).unwrap();
//! let loss = tape.sum(sq);
//! tape.backward(loss).unwrap();
//! assert_eq!(tape.grad(x).as_slice().unwrap(), &[6.0, 8.0]);
//! ```

mod gradcheck;

pub use gradcheck::{grad_check, GradCheckReport};

use std::rc::Rc;

use ndarray::{s, Array2, Axis, Zip};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;
pub type Mask = Array2<bool>;

/// Above this magnitude of `x / beta` softplus switches to its asymptotes.
pub const SOFTPLUS_SWITCH: f64 = 30.0;
/// Row-norm floor used by [`Tape::l2_normalize_rows`].
pub const L2_EPS: f64 = 1e-12;
const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node in a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
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
    Scale(Var, f64),
    Elu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Ln(Var),
    SoftplusBeta { x: Var, beta: Var },
    Sum(Var),
    Mean(Var),
    SumRows(Var),
    L2NormalizeRows(Var),
    LayerNormRows(Var),
    MaskedSoftmax(Var),
    GatherRows { table: Var, indices: Rc<Vec<usize>> },
    ConcatRows(Vec<Var>),
    RepeatRows(Var),
    Faulty(Var),
}

#[derive(Debug)]
struct Node {
    value: Matrix,
    op: Op,
    requires_grad: bool,
}

/// Ordered record of executed operations (the computation record).
///
/// A tape is confined to one thread. Build a fresh tape per training step;
/// parameter values live outside it and are bound with [`Tape::param`].
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Matrix>>,
    backward_done: bool,
}

fn shape_of(m: &Matrix) -> Vec<usize> {
    m.shape().to_vec()
}

fn same_shape(op: &'static str, a: &Matrix, b: &Matrix) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::Dimension {
            op,
            left: shape_of(a),
            right: shape_of(b),
        });
    }
    Ok(())
}

#[inline]
fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `beta * ln(1 + exp(x / beta))`, switching to the asymptotes for
/// `|x / beta| > SOFTPLUS_SWITCH`. Never returns exactly zero.
pub fn softplus_beta_scalar(x: f64, beta: f64) -> f64 {
    let z = x / beta;
    let v = if z > SOFTPLUS_SWITCH {
        x
    } else if z < -SOFTPLUS_SWITCH {
        beta * z.exp()
    } else {
        beta * z.exp().ln_1p()
    };
    v.max(f64::MIN_POSITIVE)
}

/// `d/dbeta` of [`softplus_beta_scalar`]: `ln(1 + e^z) - z * sigmoid(z)`.
fn softplus_beta_dbeta(x: f64, beta: f64) -> f64 {
    let z = x / beta;
    if z > SOFTPLUS_SWITCH {
        0.0
    } else if z < -SOFTPLUS_SWITCH {
        z.exp() * (1.0 - z)
    } else {
        z.exp().ln_1p() - z * sigmoid(z)
    }
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

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
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

    /// Trainable leaf.
    pub fn param(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn scalar(&mut self, value: f64) -> Var {
        self.constant(Matrix::from_elem((1, 1), value))
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// The value of a 1x1 node.
    pub fn item(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// Gradient of the last backward pass, zero for nodes off the loss path.
    pub fn grad(&self, v: Var) -> Matrix {
        match self.grads.get(v.0) {
            Some(Some(g)) => g.clone(),
            _ => Matrix::zeros(self.nodes[v.0].value.dim()),
        }
    }

    /// Clears accumulated gradients so `backward` may run again.
    pub fn reset_grads(&mut self) {
        self.grads.clear();
        self.backward_done = false;
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        if va.ncols() != vb.nrows() {
            return Err(Error::Dimension {
                op: "matmul",
                left: shape_of(va),
                right: shape_of(vb),
            });
        }
        let out = va.dot(vb);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let out = self.value(a).t().to_owned();
        let rg = self.rg(a);
        self.push(out, Op::Transpose(a), rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let out = self.value(a) + self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("sub", self.value(a), self.value(b))?;
        let out = self.value(a) - self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("mul", self.value(a), self.value(b))?;
        let out = self.value(a) * self.value(b);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = self.value(a) * k;
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, k), rg)
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(elu);
        let rg = self.rg(a);
        self.push(out, Op::Elu(a), rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::exp);
        let rg = self.rg(a);
        self.push(out, Op::Exp(a), rg)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Ln(a), rg)
    }

    /// Softplus with a per-column softness `beta` (a `1 x cols` node).
    /// Differentiable in both `x` and `beta`.
    pub fn softplus_beta(&mut self, x: Var, beta: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(beta));
        if vb.nrows() != 1 || vb.ncols() != vx.ncols() {
            return Err(Error::Dimension {
                op: "softplus_beta",
                left: shape_of(vx),
                right: shape_of(vb),
            });
        }
        if let Some(bad) = vb.iter().find(|b| !(**b > 0.0)) {
            return Err(Error::ParamDomain {
                op: "softplus_beta",
                detail: format!("beta must be > 0, got {bad}"),
            });
        }
        let mut out = vx.clone();
        for mut row in out.rows_mut() {
            for (v, b) in row.iter_mut().zip(vb.row(0)) {
                *v = softplus_beta_scalar(*v, *b);
            }
        }
        let rg = self.rg(x) || self.rg(beta);
        Ok(self.push(out, Op::SoftplusBeta { x, beta }, rg))
    }

    /// Softplus with a fixed scalar softness.
    pub fn softplus_beta_const(&mut self, x: Var, beta: f64) -> Result<Var> {
        if !(beta > 0.0) {
            return Err(Error::ParamDomain {
                op: "softplus_beta",
                detail: format!("beta must be > 0, got {beta}"),
            });
        }
        let cols = self.value(x).ncols();
        let b = self.constant(Matrix::from_elem((1, cols), beta));
        self.softplus_beta(x, b)
    }

    /// Sum of all entries, as a 1x1 node.
    pub fn sum(&mut self, a: Var) -> Var {
        let out = Matrix::from_elem((1, 1), self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::Sum(a), rg)
    }

    /// Mean of all entries, as a 1x1 node.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let n = v.len().max(1) as f64;
        let out = Matrix::from_elem((1, 1), v.sum() / n);
        let rg = self.rg(a);
        self.push(out, Op::Mean(a), rg)
    }

    /// Column sums: `n x c -> 1 x c`.
    pub fn sum_rows(&mut self, a: Var) -> Var {
        let out = self.value(a).sum_axis(Axis(0)).insert_axis(Axis(0));
        let rg = self.rg(a);
        self.push(out, Op::SumRows(a), rg)
    }

    /// Maps each row `v` to `v / max(|v|_2, L2_EPS)`.
    pub fn l2_normalize_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let n = row.dot(&row).sqrt().max(L2_EPS);
            row /= n;
        }
        let rg = self.rg(a);
        self.push(out, Op::L2NormalizeRows(a), rg)
    }

    /// Per-row standardization without an affine transform.
    pub fn layer_norm_rows(&mut self, a: Var) -> Var {
        let mut out = self.value(a).clone();
        for mut row in out.rows_mut() {
            let n = row.len() as f64;
            let mu = row.sum() / n;
            let var = row.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / n;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|x| (x - mu) * inv);
        }
        let rg = self.rg(a);
        self.push(out, Op::LayerNormRows(a), rg)
    }

    /// Row-wise softmax over entries where `mask` is true. Disallowed entries
    /// are exactly zero.
    pub fn masked_softmax(&mut self, scores: Var, mask: &Mask) -> Result<Var> {
        let v = self.value(scores);
        if v.dim() != mask.dim() {
            return Err(Error::Dimension {
                op: "masked_softmax",
                left: shape_of(v),
                right: mask.shape().to_vec(),
            });
        }
        let mut out = Matrix::zeros(v.dim());
        for (r, ((mut orow, vrow), mrow)) in out
            .rows_mut()
            .into_iter()
            .zip(v.rows())
            .zip(mask.rows())
            .enumerate()
        {
            let max = vrow
                .iter()
                .zip(mrow)
                .filter(|(_, m)| **m)
                .map(|(x, _)| *x)
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                return Err(Error::DegenerateRow { row: r });
            }
            let mut total = 0.0;
            for ((o, x), m) in orow.iter_mut().zip(vrow).zip(mrow) {
                if *m {
                    *o = (x - max).exp();
                    total += *o;
                }
            }
            orow /= total;
        }
        let rg = self.rg(scores);
        Ok(self.push(out, Op::MaskedSoftmax(scores), rg))
    }

    /// Row gather; gradients scatter-add back into the table.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let mut out = Matrix::zeros((indices.len(), t.ncols()));
        for (r, &i) in indices.iter().enumerate() {
            if i >= t.nrows() {
                return Err(Error::Index {
                    index: i,
                    len: t.nrows(),
                });
            }
            out.row_mut(r).assign(&t.row(i));
        }
        let rg = self.rg(table);
        Ok(self.push(
            out,
            Op::GatherRows {
                table,
                indices: Rc::new(indices.to_vec()),
            },
            rg,
        ))
    }

    /// Vertical concatenation; all parts must share a column count.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let Some(first) = parts.first() else {
            return Err(Error::Empty("concat_rows of zero parts".into()));
        };
        let cols = self.value(*first).ncols();
        let mut rows = 0;
        for p in parts {
            let v = self.value(*p);
            if v.ncols() != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: shape_of(self.value(*first)),
                    right: shape_of(v),
                });
            }
            rows += v.nrows();
        }
        let mut out = Matrix::zeros((rows, cols));
        let mut at = 0;
        for p in parts {
            let v = self.value(*p);
            out.slice_mut(s![at..at + v.nrows(), ..]).assign(v);
            at += v.nrows();
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        Ok(self.push(out, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Stacks a `1 x c` row `n` times.
    pub fn repeat_rows(&mut self, row: Var, n: usize) -> Result<Var> {
        let v = self.value(row);
        if v.nrows() != 1 {
            return Err(Error::Dimension {
                op: "repeat_rows",
                left: shape_of(v),
                right: vec![1, v.ncols()],
            });
        }
        let out = v
            .broadcast((n, v.ncols()))
            .expect("1 x c broadcasts to n x c")
            .to_owned();
        let rg = self.rg(row);
        Ok(self.push(out, Op::RepeatRows(row), rg))
    }

    /// Identity whose backward rule doubles the incoming gradient. Only
    /// useful as a negative control for [`grad_check`].
    #[doc(hidden)]
    pub fn faulty_identity(&mut self, a: Var) -> Var {
        let out = self.value(a).clone();
        let rg = self.rg(a);
        self.push(out, Op::Faulty(a), rg)
    }

    /// Reverse pass from a 1x1 node.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        if self.backward_done {
            return Err(Error::BackwardTwice);
        }
        let shape = self.value(loss).dim();
        if shape != (1, 1) {
            return Err(Error::NonScalarLoss {
                shape: vec![shape.0, shape.1],
            });
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Matrix::ones((1, 1)));

        for id in (0..=loss.0).rev() {
            if !self.nodes[id].requires_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    fn propagate(&self, id: usize, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let node = &self.nodes[id];
        let out = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, d: Matrix| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => *existing += &d,
                slot @ None => *slot = Some(d),
            }
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g.dot(&val(*b).t()));
                }
                if self.rg(*b) {
                    acc(*b, val(*a).t().dot(g));
                }
            }
            Op::Transpose(a) => acc(*a, g.t().to_owned()),
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, -g);
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    acc(*a, g * val(*b));
                }
                if self.rg(*b) {
                    acc(*b, g * val(*a));
                }
            }
            Op::Scale(a, k) => acc(*a, g * *k),
            Op::Elu(a) => {
                let mut d = g.clone();
                Zip::from(&mut d)
                    .and(val(*a))
                    .for_each(|d, &x| *d *= if x > 0.0 { 1.0 } else { x.exp() });
                acc(*a, d);
            }
            Op::Tanh(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &y| *d *= 1.0 - y * y);
                acc(*a, d);
            }
            Op::Sigmoid(a) => {
                let mut d = g.clone();
                Zip::from(&mut d).and(out).for_each(|d, &y| *d *= y * (1.0 - y));
                acc(*a, d);
            }
            Op::Exp(a) => acc(*a, g * out),
            Op::Ln(a) => acc(*a, g / val(*a)),
            Op::SoftplusBeta { x, beta } => {
                let (vx, vb) = (val(*x), val(*beta));
                if self.rg(*x) {
                    let mut d = g.clone();
                    for (mut drow, xrow) in d.rows_mut().into_iter().zip(vx.rows()) {
                        for ((d, xv), b) in drow.iter_mut().zip(xrow).zip(vb.row(0)) {
                            *d *= sigmoid(xv / b);
                        }
                    }
                    acc(*x, d);
                }
                if self.rg(*beta) {
                    let mut d = Matrix::zeros(vb.dim());
                    for (grow, xrow) in g.rows().into_iter().zip(vx.rows()) {
                        for (c, (gv, xv)) in grow.iter().zip(xrow).enumerate() {
                            d[[0, c]] += gv * softplus_beta_dbeta(*xv, vb[[0, c]]);
                        }
                    }
                    acc(*beta, d);
                }
            }
            Op::Sum(a) => acc(*a, Matrix::from_elem(val(*a).dim(), g[[0, 0]])),
            Op::Mean(a) => {
                let n = val(*a).len().max(1) as f64;
                acc(*a, Matrix::from_elem(val(*a).dim(), g[[0, 0]] / n));
            }
            Op::SumRows(a) => {
                let d = g
                    .broadcast(val(*a).dim())
                    .expect("1 x c broadcasts to n x c")
                    .to_owned();
                acc(*a, d);
            }
            Op::L2NormalizeRows(a) => {
                let x = val(*a);
                let mut d = g.clone();
                for ((mut drow, xrow), yrow) in d.rows_mut().into_iter().zip(x.rows()).zip(out.rows()) {
                    let norm = xrow.dot(&xrow).sqrt();
                    if norm > L2_EPS {
                        let proj = yrow.dot(&drow);
                        Zip::from(&mut drow)
                            .and(&yrow)
                            .for_each(|d, &y| *d = (*d - y * proj) / norm);
                    } else {
                        drow /= L2_EPS;
                    }
                }
                acc(*a, d);
            }
            Op::LayerNormRows(a) => {
                let x = val(*a);
                let mut d = g.clone();
                for ((mut drow, xrow), yrow) in d.rows_mut().into_iter().zip(x.rows()).zip(out.rows()) {
                    let n = xrow.len() as f64;
                    let mu = xrow.sum() / n;
                    let var = xrow.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
                    let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                    let gmean = drow.sum() / n;
                    let gy = drow.dot(&yrow) / n;
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|d, &y| *d = inv * (*d - gmean - y * gy));
                }
                acc(*a, d);
            }
            Op::MaskedSoftmax(a) => {
                let mut d = g.clone();
                for (mut drow, yrow) in d.rows_mut().into_iter().zip(out.rows()) {
                    let dot = drow.dot(&yrow);
                    Zip::from(&mut drow)
                        .and(&yrow)
                        .for_each(|d, &y| *d = y * (*d - dot));
                }
                acc(*a, d);
            }
            Op::GatherRows { table, indices } => {
                let mut d = Matrix::zeros(val(*table).dim());
                for (r, &i) in indices.iter().enumerate() {
                    let mut row = d.row_mut(i);
                    row += &g.row(r);
                }
                acc(*table, d);
            }
            Op::ConcatRows(parts) => {
                let mut at = 0;
                for p in parts {
                    let rows = val(*p).nrows();
                    acc(*p, g.slice(s![at..at + rows, ..]).to_owned());
                    at += rows;
                }
            }
            Op::RepeatRows(a) => acc(*a, g.sum_axis(Axis(0)).insert_axis(Axis(0))),
            Op::Faulty(a) => acc(*a, g * 2.0),
        }
    }
}
