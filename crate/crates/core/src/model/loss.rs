use rand::Rng;

use crate::error::{Error, Result};
use crate::seq_encoder::{intensity_logits, intensity_rows, IntensityHead, SequenceBatch};
use crate::tensor::{Matrix, Tape, Var};

/// Index splitting a training sequence of length `m` into history
/// `[0, b)` and next-item targets `[b, m)`. The target part holds
/// `ceil(fraction * m)` events, capped so at least one history event remains.
pub fn history_target_boundary(m: usize, fraction: f64) -> usize {
    if m == 0 {
        return 0;
    }
    let t = ((fraction * m as f64).ceil() as usize).min(m - 1);
    m - t
}

/// Positive-class weights `c * gamma` and negative-class indicators for the
/// ranking loss. Target weights override history weights on overlap. In
/// strict mode the negative class is dropped.
pub fn loss_weights(
    history: &[Vec<usize>],
    targets: &[Vec<usize>],
    n_items: usize,
    beta1: f64,
    beta2: f64,
    strict: bool,
) -> Result<(Matrix, Matrix)> {
    if history.len() != targets.len() {
        return Err(Error::Dimension {
            op: "loss_weights",
            left: vec![history.len()],
            right: vec![targets.len()],
        });
    }
    if targets.iter().all(Vec::is_empty) {
        return Err(Error::Config("no user has a next-item target".into()));
    }
    let b = history.len();
    let mut pos = Matrix::zeros((b, n_items));
    let mut seen = vec![vec![false; n_items]; b];
    for (u, items) in history.iter().enumerate() {
        for &i in items {
            pos[[u, i]] = beta1;
            seen[u][i] = true;
        }
    }
    for (u, items) in targets.iter().enumerate() {
        for &i in items {
            pos[[u, i]] = beta2;
            seen[u][i] = true;
        }
    }
    let neg = if strict {
        Matrix::zeros((b, n_items))
    } else {
        Matrix::from_shape_fn((b, n_items), |(u, i)| if seen[u][i] { 0.0 } else { 1.0 })
    };
    Ok((pos, neg))
}

/// Weighted binary cross-entropy over `sigmoid(r)`:
/// `sum c (-log sigmoid(r)) + sum [negative] (-log(1 - sigmoid(r)))`.
pub fn loss_main(
    tape: &mut Tape,
    r: Var,
    history: &[Vec<usize>],
    targets: &[Vec<usize>],
    beta1: f64,
    beta2: f64,
    strict: bool,
) -> Result<Var> {
    let n_items = tape.shape(r).1;
    let (pos, neg) = loss_weights(history, targets, n_items, beta1, beta2, strict)?;
    let minus_r = tape.scale(r, -1.0);
    let pos_term = tape.softplus_beta_const(minus_r, 1.0)?;
    let pw = tape.constant(pos);
    let pos_term = tape.mul(pos_term, pw)?;
    let pos_sum = tape.sum(pos_term);
    if strict {
        return Ok(pos_sum);
    }
    let neg_term = tape.softplus_beta_const(r, 1.0)?;
    let nw = tape.constant(neg);
    let neg_term = tape.mul(neg_term, nw)?;
    let neg_sum = tape.sum(neg_term);
    tape.add(pos_sum, neg_sum)
}

/// Uniform sample points for every inter-event gap: `n` pairs
/// `(j, x)` with `x ~ U(t_{j-1}, t_j)` for each `j >= 1`.
pub fn mci_samples<R: Rng>(times: &[f64], n: usize, rng: &mut R) -> Vec<(usize, f64)> {
    let mut out = Vec::with_capacity(times.len().saturating_sub(1) * n);
    for j in 1..times.len() {
        let (a, b) = (times[j - 1], times[j]);
        for _ in 0..n {
            let u: f64 = rng.gen();
            out.push((j, a + u * (b - a)));
        }
    }
    out
}

/// Monte Carlo estimate of the integral of `lambda` over the span of
/// `times`: per gap, `(t_j - t_{j-1}) / n * sum_k lambda(j, x_k)`.
/// `lambda` receives the gap index and the sample point.
pub fn mci_integral<R: Rng>(
    times: &[f64],
    n: usize,
    rng: &mut R,
    mut lambda: impl FnMut(usize, f64) -> f64,
) -> f64 {
    let n = n.max(1);
    mci_samples(times, n, rng)
        .into_iter()
        .map(|(j, x)| (times[j] - times[j - 1]) / n as f64 * lambda(j, x))
        .sum()
}

/// Parts of one sequence's log-likelihood.
#[derive(Clone, Copy, Debug)]
pub struct LogLikelihood {
    /// `events - integral`.
    pub total: Var,
    /// Sum of `log lambda_{z_j}(t_j)` over `j >= 1`.
    pub events: Var,
    /// Monte Carlo estimate of the total intensity integral.
    pub integral: Var,
}

/// Point-process log-likelihood of one sequence given its hidden states.
/// Event `j` is scored with the intensity conditioned on `h(t_{j-1})`;
/// a sequence of length one contributes zero.
pub fn log_likelihood<R: Rng>(
    tape: &mut Tape,
    hidden: Var,
    seq: &SequenceBatch,
    head: &IntensityHead<Var>,
    n_mci: usize,
    rng: &mut R,
) -> Result<LogLikelihood> {
    let n = seq.len();
    if tape.shape(hidden).0 != n {
        return Err(Error::Dimension {
            op: "log_likelihood",
            left: vec![tape.shape(hidden).0],
            right: vec![n],
        });
    }
    if n < 2 {
        let z = tape.scalar(0.0);
        return Ok(LogLikelihood {
            total: z,
            events: z,
            integral: z,
        });
    }
    let t = &seq.times;
    if let Some(bad) = t.iter().position(|x| !(*x > 0.0)) {
        return Err(Error::TimeNormalization(format!(
            "event {bad} has nonpositive time {}",
            t[bad]
        )));
    }
    let logits = intensity_logits(tape, hidden, head)?;

    let prev: Vec<usize> = (0..n - 1).collect();
    let ratios: Vec<f64> = (1..n).map(|j| (t[j] - t[j - 1]) / t[j - 1]).collect();
    let rows = tape.gather_rows(logits, &prev)?;
    let lam = intensity_rows(tape, rows, &ratios, head)?;
    let log_lam = tape.ln(lam);
    let pick = Matrix::from_shape_fn((n - 1, 2), |(r, c)| {
        f64::from(seq.polarities[r + 1].column() == c)
    });
    let pick = tape.constant(pick);
    let chosen = tape.mul(log_lam, pick)?;
    let events = tape.sum(chosen);

    let samples = mci_samples(t, n_mci.max(1), rng);
    let idx: Vec<usize> = samples.iter().map(|(j, _)| j - 1).collect();
    let s_ratios: Vec<f64> = samples
        .iter()
        .map(|(j, x)| (x - t[j - 1]) / t[j - 1])
        .collect();
    let w = Matrix::from_shape_fn((samples.len(), 2), |(r, _)| {
        let j = samples[r].0;
        (t[j] - t[j - 1]) / n_mci.max(1) as f64
    });
    let rows = tape.gather_rows(logits, &idx)?;
    let lam = intensity_rows(tape, rows, &s_ratios, head)?;
    let w = tape.constant(w);
    let weighted = tape.mul(lam, w)?;
    let integral = tape.sum(weighted);
    let total = tape.sub(events, integral)?;
    Ok(LogLikelihood {
        total,
        events,
        integral,
    })
}

/// `main + delta2 * auxi`, where `auxi` is the negative log-likelihood.
pub fn loss_final(tape: &mut Tape, main: Var, auxi: Var, delta2: f64) -> Result<Var> {
    for (name, v) in [("L_main", main), ("L_auxi", auxi)] {
        if let Some(i) = tape.value(v).iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: name.into(),
                index: i,
            });
        }
    }
    if delta2 == 0.0 {
        return Ok(main);
    }
    let a = tape.scale(auxi, delta2);
    tape.add(main, a)
}
