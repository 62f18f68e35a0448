//! Two-phase hypergraph convolution over the shared item table.
//!
//! Phase one diffuses item embeddings along the normalized item-item
//! operator and mean-pools them over each user's hyperedge. Phase two relays
//! the same item representations through the masked feedback correlation
//! matrix before pooling, so only items with nonnegative correlation to the
//! user's items contribute.

use crate::error::{Error, Result};
use crate::tensor::{Matrix, Tape, Var};

#[derive(Clone, Debug, PartialEq)]
pub struct HgcParams<T> {
    /// `d x d` transform shared by every layer.
    pub w1: T,
}

impl<T> HgcParams<T> {
    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> HgcParams<U> {
        HgcParams { w1: f(&self.w1) }
    }
}

fn check_square(a: &Matrix, n_items: usize, op: &'static str) -> Result<()> {
    if a.nrows() != n_items || a.ncols() != n_items {
        return Err(Error::Dimension {
            op,
            left: a.shape().to_vec(),
            right: vec![n_items, n_items],
        });
    }
    Ok(())
}

/// `Lambda^(l+1) = A_hat ELU(Lambda^(l) W1)`, starting from the item table.
pub fn hgc_forward(
    tape: &mut Tape,
    a_hat: Var,
    table: Var,
    params: &HgcParams<Var>,
    layers: usize,
) -> Result<Var> {
    let n = tape.shape(table).0;
    let (ar, ac) = tape.shape(a_hat);
    if ar != n || ac != n {
        return Err(Error::Dimension {
            op: "hgc_forward",
            left: vec![ar, ac],
            right: vec![n, n],
        });
    }
    let mut x = table;
    for _ in 0..layers {
        let z = tape.matmul(x, params.w1)?;
        let z = tape.elu(z);
        x = tape.matmul(a_hat, z)?;
    }
    Ok(x)
}

fn nonempty(hyperedge: &[usize]) -> Result<()> {
    if hyperedge.is_empty() {
        return Err(Error::Empty("user hyperedge has no items".into()));
    }
    Ok(())
}

/// Mean of the item rows inside the hyperedge (`1 x d`).
pub fn user_structural_rep(tape: &mut Tape, lambda: Var, hyperedge: &[usize]) -> Result<Var> {
    nonempty(hyperedge)?;
    let rows = tape.gather_rows(lambda, hyperedge)?;
    let sum = tape.sum_rows(rows);
    Ok(tape.scale(sum, 1.0 / hyperedge.len() as f64))
}

/// `(1 / |h_u|) h_u^T X_masked Lambda` (`1 x d`).
pub fn feedback_aware_rep(
    tape: &mut Tape,
    lambda: Var,
    hyperedge: &[usize],
    x_masked: &Matrix,
) -> Result<Var> {
    nonempty(hyperedge)?;
    let n = tape.shape(lambda).0;
    check_square(x_masked, n, "feedback_aware_rep")?;
    let weights = relay_weights(hyperedge, x_masked);
    let w = tape.constant(weights.insert_axis(ndarray::Axis(0)));
    tape.matmul(w, lambda)
}

fn relay_weights(hyperedge: &[usize], x_masked: &Matrix) -> ndarray::Array1<f64> {
    let mut w = ndarray::Array1::zeros(x_masked.ncols());
    for &i in hyperedge {
        w += &x_masked.row(i);
    }
    w / hyperedge.len() as f64
}

/// Row-stacked pooling weights for many users: row `b` of the first matrix
/// averages over user `b`'s hyperedge, row `b` of the second relays through
/// `x_masked` first. Users with an empty hyperedge get zero rows.
pub fn pooling_matrices(hyperedges: &[Vec<usize>], x_masked: &Matrix) -> (Matrix, Matrix) {
    let n = x_masked.ncols();
    let mut p1 = Matrix::zeros((hyperedges.len(), n));
    let mut p2 = Matrix::zeros((hyperedges.len(), n));
    for (b, h) in hyperedges.iter().enumerate() {
        if h.is_empty() {
            continue;
        }
        for &i in h {
            p1[[b, i]] = 1.0 / h.len() as f64;
        }
        p2.row_mut(b).assign(&relay_weights(h, x_masked));
    }
    (p1, p2)
}

/// Literal per-user reading: the user's operator collapses to the scalar
/// `s_u = h_u A_hat h_u^T` and each layer is `s_u ELU(Lambda W1)`. Because
/// that map is row-local, only the rows the two poolings touch are computed.
/// Returns `(e_H1, e_H2)`.
pub fn strict_user_reps(
    tape: &mut Tape,
    table: Var,
    a_hat: &Matrix,
    params: &HgcParams<Var>,
    layers: usize,
    hyperedge: &[usize],
    x_masked: &Matrix,
) -> Result<(Var, Var)> {
    nonempty(hyperedge)?;
    let n = tape.shape(table).0;
    check_square(a_hat, n, "strict_user_reps")?;
    check_square(x_masked, n, "strict_user_reps")?;
    let mut s_u = 0.0;
    for &i in hyperedge {
        for &j in hyperedge {
            s_u += a_hat[[i, j]];
        }
    }
    let relay = relay_weights(hyperedge, x_masked);
    let mut support: Vec<usize> = (0..n)
        .filter(|&i| relay[i] != 0.0 || hyperedge.binary_search(&i).is_ok())
        .collect();
    support.dedup();
    let mut x = tape.gather_rows(table, &support)?;
    for _ in 0..layers {
        let z = tape.matmul(x, params.w1)?;
        let z = tape.elu(z);
        x = tape.scale(z, s_u);
    }
    let k = support.len();
    let mut p1 = Matrix::zeros((1, k));
    let mut p2 = Matrix::zeros((1, k));
    for (pos, &i) in support.iter().enumerate() {
        if hyperedge.binary_search(&i).is_ok() {
            p1[[0, pos]] = 1.0 / hyperedge.len() as f64;
        }
        p2[[0, pos]] = relay[i];
    }
    let p1 = tape.constant(p1);
    let p2 = tape.constant(p2);
    Ok((tape.matmul(p1, x)?, tape.matmul(p2, x)?))
}
