//! Transformer-Hawkes sequential encoder.
//!
//! A user's item sequence is embedded, passed through `L1` causally masked
//! single-head attention blocks, averaged across layers, and L2-normalized
//! row-wise into hidden states `h(t_j)`. Their sum is the user's sequential
//! representation. A small head maps `h(t_j)` to one conditional intensity
//! per feedback polarity.

use crate::data::{Event, Polarity};
use crate::error::{Error, Result};
use crate::tensor::{softplus_beta_scalar, Mask, Matrix, Tape, Var};

/// Per-user encoder input.
#[derive(Clone, Debug, PartialEq)]
pub struct SequenceBatch {
    pub items: Vec<usize>,
    /// Normalized event times in `[1, 2]`, nondecreasing.
    pub times: Vec<f64>,
    pub polarities: Vec<Polarity>,
}

impl SequenceBatch {
    pub fn from_events(events: &[Event]) -> Self {
        SequenceBatch {
            items: events.iter().map(|e| e.item).collect(),
            times: events.iter().map(|e| e.time).collect(),
            polarities: events.iter().map(|e| e.polarity).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

/// `mask[j, k]` allowed iff `k <= j`.
pub fn causal_mask(n: usize) -> Mask {
    Mask::from_shape_fn((n, n), |(j, k)| k <= j)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pooling {
    /// Position-wise mean over the `L1` layer outputs.
    LayerMean,
    /// Causal moving average of the last layer over this many positions.
    Window(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderSettings {
    pub masking: bool,
    pub attention_only: bool,
    pub pooling: Pooling,
    pub time_embedding: bool,
}

impl Default for EncoderSettings {
    fn default() -> Self {
        EncoderSettings {
            masking: true,
            attention_only: false,
            pooling: Pooling::LayerMean,
            time_embedding: false,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeedForward<T> {
    pub w1: T,
    pub b1: T,
    pub w2: T,
    pub b2: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionWeights<T> {
    pub wq: T,
    pub wk: T,
    pub wv: T,
    /// Absent in attention-only mode.
    pub ffn: Option<FeedForward<T>>,
}

/// Maps `h(t_j)` to the two per-polarity pre-activations, then adds the
/// elapsed-time term and applies a softplus with learned softness.
#[derive(Clone, Debug, PartialEq)]
pub struct IntensityHead<T> {
    /// Optional hidden layer `(weight, bias)` with an ELU.
    pub hidden: Option<(T, T)>,
    /// `width x 2`, column 0 positive, column 1 negative.
    pub w: T,
    pub b: T,
    /// `1 x 2` time coefficients.
    pub alpha: T,
    /// `1 x 2` log of the softness, so the softness stays positive.
    pub log_beta: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams<T> {
    pub layers: Vec<AttentionWeights<T>>,
    pub head: IntensityHead<T>,
}

impl<T> EncoderParams<T> {
    pub fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(String, &'a T)) {
        for (k, l) in self.layers.iter().enumerate() {
            f(format!("{prefix}.layer{k}.wq"), &l.wq);
            f(format!("{prefix}.layer{k}.wk"), &l.wk);
            f(format!("{prefix}.layer{k}.wv"), &l.wv);
            if let Some(ffn) = &l.ffn {
                f(format!("{prefix}.layer{k}.ffn.w1"), &ffn.w1);
                f(format!("{prefix}.layer{k}.ffn.b1"), &ffn.b1);
                f(format!("{prefix}.layer{k}.ffn.w2"), &ffn.w2);
                f(format!("{prefix}.layer{k}.ffn.b2"), &ffn.b2);
            }
        }
        let h = &self.head;
        if let Some((w, b)) = &h.hidden {
            f(format!("{prefix}.head.hidden_w"), w);
            f(format!("{prefix}.head.hidden_b"), b);
        }
        f(format!("{prefix}.head.w"), &h.w);
        f(format!("{prefix}.head.b"), &h.b);
        f(format!("{prefix}.head.alpha"), &h.alpha);
        f(format!("{prefix}.head.log_beta"), &h.log_beta);
    }

    pub fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut T)) {
        for (k, l) in self.layers.iter_mut().enumerate() {
            f(format!("{prefix}.layer{k}.wq"), &mut l.wq);
            f(format!("{prefix}.layer{k}.wk"), &mut l.wk);
            f(format!("{prefix}.layer{k}.wv"), &mut l.wv);
            if let Some(ffn) = &mut l.ffn {
                f(format!("{prefix}.layer{k}.ffn.w1"), &mut ffn.w1);
                f(format!("{prefix}.layer{k}.ffn.b1"), &mut ffn.b1);
                f(format!("{prefix}.layer{k}.ffn.w2"), &mut ffn.w2);
                f(format!("{prefix}.layer{k}.ffn.b2"), &mut ffn.b2);
            }
        }
        let h = &mut self.head;
        if let Some((w, b)) = &mut h.hidden {
            f(format!("{prefix}.head.hidden_w"), w);
            f(format!("{prefix}.head.hidden_b"), b);
        }
        f(format!("{prefix}.head.w"), &mut h.w);
        f(format!("{prefix}.head.b"), &mut h.b);
        f(format!("{prefix}.head.alpha"), &mut h.alpha);
        f(format!("{prefix}.head.log_beta"), &mut h.log_beta);
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> EncoderParams<U> {
        EncoderParams {
            layers: self
                .layers
                .iter()
                .map(|l| AttentionWeights {
                    wq: f(&l.wq),
                    wk: f(&l.wk),
                    wv: f(&l.wv),
                    ffn: l.ffn.as_ref().map(|x| FeedForward {
                        w1: f(&x.w1),
                        b1: f(&x.b1),
                        w2: f(&x.w2),
                        b2: f(&x.b2),
                    }),
                })
                .collect(),
            head: IntensityHead {
                hidden: self.head.hidden.as_ref().map(|(w, b)| (f(w), f(b))),
                w: f(&self.head.w),
                b: f(&self.head.b),
                alpha: f(&self.head.alpha),
                log_beta: f(&self.head.log_beta),
            },
        }
    }
}

/// Encoder output for one sequence.
#[derive(Clone, Copy, Debug)]
pub struct EncodedSequence {
    /// `n x d` hidden states, rows L2-normalized.
    pub hidden: Var,
    /// `1 x d` sum of the hidden rows.
    pub pooled: Var,
}

/// Selects embedding rows; gradients flow only into the selected rows.
pub fn embed(tape: &mut Tape, table: Var, items: &[usize]) -> Result<Var> {
    tape.gather_rows(table, items)
}

fn add_bias(tape: &mut Tape, x: Var, bias: Var) -> Result<Var> {
    let n = tape.shape(x).0;
    let b = tape.repeat_rows(bias, n)?;
    tape.add(x, b)
}

/// One attention block. With `attention_only` this is the bare masked
/// attention `softmax(Q K^T / sqrt(d_k)) V`; otherwise it is followed by
/// residual connections, layer normalization and a feed-forward sublayer.
pub fn attention_layer(
    tape: &mut Tape,
    input: Var,
    layer: &AttentionWeights<Var>,
    mask: &Mask,
) -> Result<Var> {
    let q = tape.matmul(input, layer.wq)?;
    let k = tape.matmul(input, layer.wk)?;
    let v = tape.matmul(input, layer.wv)?;
    let d_k = tape.shape(k).1 as f64;
    let kt = tape.transpose(k);
    let raw = tape.matmul(q, kt)?;
    let scores = tape.scale(raw, 1.0 / d_k.sqrt());
    let weights = tape.masked_softmax(scores, mask)?;
    let attended = tape.matmul(weights, v)?;
    let Some(ffn) = &layer.ffn else {
        return Ok(attended);
    };
    let res = tape.add(input, attended)?;
    let x1 = tape.layer_norm_rows(res);
    let h = tape.matmul(x1, ffn.w1)?;
    let h = add_bias(tape, h, ffn.b1)?;
    let h = tape.elu(h);
    let h = tape.matmul(h, ffn.w2)?;
    let h = add_bias(tape, h, ffn.b2)?;
    let res = tape.add(x1, h)?;
    Ok(tape.layer_norm_rows(res))
}

fn time_features(times: &[f64], d: usize) -> Matrix {
    Matrix::from_shape_fn((times.len(), d), |(j, c)| {
        let freq = 1.0 / 10_000f64.powf((2 * (c / 2)) as f64 / d as f64);
        let angle = times[j] * 1000.0 * freq;
        if c % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Runs the stacked attention blocks over one sequence.
pub fn encode(
    tape: &mut Tape,
    table: Var,
    batch: &SequenceBatch,
    params: &EncoderParams<Var>,
    settings: &EncoderSettings,
) -> Result<EncodedSequence> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::Empty("cannot encode an empty sequence".into()));
    }
    if params.layers.is_empty() {
        return Err(Error::Config("encoder needs at least one layer".into()));
    }
    let mut x = embed(tape, table, &batch.items)?;
    if settings.time_embedding {
        let d = tape.shape(x).1;
        let tf = tape.constant(time_features(&batch.times, d));
        x = tape.add(x, tf)?;
    }
    let mask = if settings.masking {
        causal_mask(n)
    } else {
        Mask::from_elem((n, n), true)
    };
    let mut outputs = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        x = attention_layer(tape, x, layer, &mask)?;
        outputs.push(x);
    }
    let pooled_layers = match settings.pooling {
        Pooling::LayerMean => {
            let mut acc = outputs[0];
            for o in &outputs[1..] {
                acc = tape.add(acc, *o)?;
            }
            tape.scale(acc, 1.0 / outputs.len() as f64)
        }
        Pooling::Window(w) => {
            let w = w.max(1);
            let avg = Matrix::from_shape_fn((n, n), |(j, k)| {
                let lo = (j + 1).saturating_sub(w);
                if k >= lo && k <= j {
                    1.0 / (j + 1 - lo) as f64
                } else {
                    0.0
                }
            });
            let avg = tape.constant(avg);
            tape.matmul(avg, *outputs.last().expect("at least one layer"))?
        }
    };
    let hidden = tape.l2_normalize_rows(pooled_layers);
    let pooled = tape.sum_rows(hidden);
    Ok(EncodedSequence { hidden, pooled })
}

/// `MLP(h)` for every row of `hidden`: an `n x 2` node.
pub fn intensity_logits(tape: &mut Tape, hidden: Var, head: &IntensityHead<Var>) -> Result<Var> {
    let mut h = hidden;
    if let Some((w, b)) = &head.hidden {
        let z = tape.matmul(h, *w)?;
        let z = add_bias(tape, z, *b)?;
        h = tape.elu(z);
    }
    let z = tape.matmul(h, head.w)?;
    add_bias(tape, z, head.b)
}

/// `(t - t_j) / t_j`, rejecting nonpositive `t_j` or `t < t_j`.
pub fn elapsed_ratio(t: f64, t_last: f64) -> Result<f64> {
    if !(t_last > 0.0) {
        return Err(Error::TimeNormalization(format!(
            "last event time must be > 0, got {t_last}"
        )));
    }
    if t < t_last {
        return Err(Error::TimeNormalization(format!(
            "query time {t} precedes last event time {t_last}"
        )));
    }
    Ok((t - t_last) / t_last)
}

/// Per-polarity intensities for rows of logits, each paired with an
/// elapsed-time ratio: `softplus_beta(alpha * ratio + logit, beta)`.
pub fn intensity_rows(
    tape: &mut Tape,
    logits: Var,
    ratios: &[f64],
    head: &IntensityHead<Var>,
) -> Result<Var> {
    let n = ratios.len();
    if tape.shape(logits).0 != n {
        return Err(Error::Dimension {
            op: "intensity_rows",
            left: vec![tape.shape(logits).0, 2],
            right: vec![n, 1],
        });
    }
    let col = tape.constant(Matrix::from_shape_vec((n, 1), ratios.to_vec()).expect("n x 1"));
    let time_term = tape.matmul(col, head.alpha)?;
    let u = tape.add(logits, time_term)?;
    let beta = tape.exp(head.log_beta);
    tape.softplus_beta(u, beta)
}

/// Conditional intensities evaluated directly on plain values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Intensity {
    pub positive: f64,
    pub negative: f64,
    pub total: f64,
}

impl Intensity {
    pub fn of(self, p: Polarity) -> f64 {
        match p {
            Polarity::Positive => self.positive,
            Polarity::Negative => self.negative,
        }
    }
}

fn row_times(h: &[f64], m: &Matrix) -> Vec<f64> {
    (0..m.ncols())
        .map(|c| h.iter().zip(m.column(c)).map(|(a, b)| a * b).sum())
        .collect()
}

/// `lambda_z(t) = softplus_beta(alpha_z (t - t_j) / t_j + MLP(h(t_j)), beta_z)`.
pub fn intensity(h_prev: &[f64], t: f64, t_last: f64, head: &IntensityHead<Matrix>) -> Result<Intensity> {
    let ratio = elapsed_ratio(t, t_last)?;
    let mut h = h_prev.to_vec();
    if let Some((w, b)) = &head.hidden {
        h = row_times(&h, w)
            .into_iter()
            .zip(b.row(0))
            .map(|(z, bb)| {
                let z = z + bb;
                if z > 0.0 {
                    z
                } else {
                    z.exp_m1()
                }
            })
            .collect();
    }
    if h.len() != head.w.nrows() {
        return Err(Error::Dimension {
            op: "intensity",
            left: vec![1, h.len()],
            right: head.w.shape().to_vec(),
        });
    }
    let logits = row_times(&h, &head.w);
    let lam: Vec<f64> = (0..2)
        .map(|z| {
            let u = head.alpha[[0, z]] * ratio + logits[z] + head.b[[0, z]];
            softplus_beta_scalar(u, head.log_beta[[0, z]].exp())
        })
        .collect();
    Ok(Intensity {
        positive: lam[0],
        negative: lam[1],
        total: lam[0] + lam[1],
    })
}

/// `argmax_z lambda_z / lambda`; exact ties go to positive.
pub fn polarity_from_intensity(lam: Intensity) -> Polarity {
    if lam.positive / lam.total >= lam.negative / lam.total {
        Polarity::Positive
    } else {
        Polarity::Negative
    }
}

pub fn predict_next_polarity(
    h_prev: &[f64],
    t_next: f64,
    t_last: f64,
    head: &IntensityHead<Matrix>,
) -> Result<Polarity> {
    Ok(polarity_from_intensity(intensity(h_prev, t_next, t_last, head)?))
}
