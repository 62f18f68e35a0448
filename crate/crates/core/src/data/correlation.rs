//! Item-item structures built from the training view: the co-interaction
//! adjacency, its symmetric normalization, and the multi-order feedback
//! correlation matrices.

use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::graph::FeedbackGraph;

/// 0/1 item adjacency: `a_ij = 1` iff some user interacted with both `i`
/// and `j`. Active items get `a_ii = 1` unless `self_loops` is off.
pub fn build_item_adjacency(train: &FeedbackGraph, self_loops: bool) -> Matrix {
    let n = train.n_items();
    let mut a = Matrix::zeros((n, n));
    for u in 0..train.n_users() {
        let items = train.hyperedge(u);
        for &i in &items {
            for &j in &items {
                a[[i, j]] = 1.0;
            }
        }
    }
    if !self_loops {
        for i in 0..n {
            a[[i, i]] = 0.0;
        }
    }
    a
}

/// `D^{-1/2} A D^{-1/2}` with `D` the count of nonzeros per row; rows and
/// columns of zero-degree items stay zero.
pub fn normalize_adjacency(a: &Matrix) -> Matrix {
    let degree: Vec<usize> = a
        .rows()
        .into_iter()
        .map(|r| r.iter().filter(|v| **v != 0.0).count())
        .collect();
    let mut out = a.clone();
    for ((i, j), v) in out.indexed_iter_mut() {
        let d = degree[i] * degree[j];
        *v = if d == 0 { 0.0 } else { *v / (d as f64).sqrt() };
    }
    out
}

/// Multi-order feedback correlations derived from the signed feedback
/// matrix `Z` (`|U| x |I|`).
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackCorrelation {
    /// `X^(0) .. X^(L-1)`.
    pub orders: Vec<Matrix>,
    /// Sum of all orders.
    pub x_hat: Matrix,
    /// `x_hat` with negative entries set to zero.
    pub x_masked: Matrix,
}

impl FeedbackCorrelation {
    pub fn order_count(&self) -> usize {
        self.orders.len()
    }
}

/// `X^(0) = Z^T Z / |U|`, `X^(l+1) = X^(l) X^(l) / |I|`.
pub fn build_feedback_correlation(zeta: &Matrix, orders: usize) -> Result<FeedbackCorrelation> {
    if orders < 1 {
        return Err(Error::Config(format!("correlation order must be >= 1, got {orders}")));
    }
    let (n_users, n_items) = zeta.dim();
    if n_users == 0 || n_items == 0 {
        return Err(Error::Empty("feedback matrix has no users or items".into()));
    }
    let mut xs = Vec::with_capacity(orders);
    xs.push(zeta.t().dot(zeta) / n_users as f64);
    for l in 1..orders {
        let prev = &xs[l - 1];
        let next = prev.dot(prev) / n_items as f64;
        xs.push(next);
    }
    let mut x_hat = Matrix::zeros((n_items, n_items));
    for x in &xs {
        x_hat += x;
    }
    let x_masked = x_hat.mapv(|v| v.max(0.0));
    Ok(FeedbackCorrelation {
        orders: xs,
        x_hat,
        x_masked,
    })
}

/// Every static item-item structure the model consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct CorrelationSet {
    pub adjacency: Matrix,
    pub adjacency_norm: Matrix,
    pub feedback: FeedbackCorrelation,
}

impl CorrelationSet {
    pub fn build(train: &FeedbackGraph, orders: usize, self_loops: bool) -> Result<Self> {
        if train.n_interactions() == 0 {
            return Err(Error::Empty("training view has no interactions".into()));
        }
        let adjacency = build_item_adjacency(train, self_loops);
        let adjacency_norm = normalize_adjacency(&adjacency);
        let feedback = build_feedback_correlation(&train.zeta_matrix(), orders)?;
        Ok(CorrelationSet {
            adjacency,
            adjacency_norm,
            feedback,
        })
    }

    pub fn order_count(&self) -> usize {
        self.feedback.order_count()
    }
}
