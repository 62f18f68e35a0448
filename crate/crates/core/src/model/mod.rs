//! Joint decoder, losses, training loop and checkpoints.
//!
//! A forward pass produces three user vectors: the pooled sequential state
//! `e_S`, the mean structural representation `e_H1` and the feedback-aware
//! representation `e_H2`. Item scores are
//! `tanh((e_S + e_H1) V^T + delta (e_H2 W + b))`, with any of the three
//! terms removable for ablations.

mod checkpoint;
mod loss;
mod train;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use loss::{
    history_target_boundary, log_likelihood, loss_final, loss_main, loss_weights, mci_integral,
    mci_samples, LogLikelihood,
};
pub use train::{fit, fit_prepared, Adam, EpochRecord, FitOutcome};

use crate::config::ModelConfig;
use crate::data::{CorrelationSet, FeedbackGraph};
use crate::error::{Error, Result};
use crate::graph_encoder::{hgc_forward, pooling_matrices, strict_user_reps, HgcParams};
use crate::seq_encoder::{
    encode, AttentionWeights, EncoderParams, FeedForward, IntensityHead, SequenceBatch,
};
use crate::tensor::{Matrix, Tape, Var};

/// Linear map from `e_H2` to one score per item.
#[derive(Clone, Debug, PartialEq)]
pub struct DecoderParams<T> {
    /// `d x |I|`.
    pub w: T,
    /// `1 x |I|`.
    pub b: T,
}

/// Every trainable tensor. `item_embedding` is the single table shared by
/// the sequential encoder, the hypergraph convolution and the decoder.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub item_embedding: T,
    pub encoder: EncoderParams<T>,
    pub hgc: HgcParams<T>,
    pub decoder: DecoderParams<T>,
}

impl<T> ModelParams<T> {
    /// Visits every tensor with its stable name, in a fixed order.
    pub fn visit<'a>(&'a self, f: &mut dyn FnMut(String, &'a T)) {
        f("item_embedding".into(), &self.item_embedding);
        self.encoder.visit("encoder", f);
        f("hgc.w1".into(), &self.hgc.w1);
        f("decoder.w".into(), &self.decoder.w);
        f("decoder.b".into(), &self.decoder.b);
    }

    pub fn visit_mut(&mut self, f: &mut dyn FnMut(String, &mut T)) {
        f("item_embedding".into(), &mut self.item_embedding);
        self.encoder.visit_mut("encoder", f);
        f("hgc.w1".into(), &mut self.hgc.w1);
        f("decoder.w".into(), &mut self.decoder.w);
        f("decoder.b".into(), &mut self.decoder.b);
    }

    pub fn map<U>(&self, f: &mut dyn FnMut(&T) -> U) -> ModelParams<U> {
        ModelParams {
            item_embedding: f(&self.item_embedding),
            encoder: self.encoder.map(f),
            hgc: self.hgc.map(f),
            decoder: DecoderParams {
                w: f(&self.decoder.w),
                b: f(&self.decoder.b),
            },
        }
    }

    pub fn names(&self) -> Vec<String> {
        let mut out = Vec::new();
        self.visit(&mut |n, _| out.push(n));
        out
    }
}

fn xavier<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_shape_fn((rows, cols), |_| rng.gen_range(-a..a))
}

impl ModelParams<Matrix> {
    /// Random initialization; biases, time coefficients and log-softness
    /// start at zero.
    pub fn init<R: Rng>(cfg: &ModelConfig, n_items: usize, rng: &mut R) -> Self {
        let d = cfg.d_model;
        let s = cfg.init_scale;
        let item_embedding = Matrix::from_shape_fn((n_items, d), |_| rng.gen_range(-s..s));
        let layers = (0..cfg.seq_layers)
            .map(|_| AttentionWeights {
                wq: xavier(rng, d, d),
                wk: xavier(rng, d, d),
                wv: xavier(rng, d, d),
                ffn: (!cfg.encoder.attention_only).then(|| FeedForward {
                    w1: xavier(rng, d, d),
                    b1: Matrix::zeros((1, d)),
                    w2: xavier(rng, d, d),
                    b2: Matrix::zeros((1, d)),
                }),
            })
            .collect();
        let h = cfg.intensity_hidden;
        let hidden = (h > 0).then(|| (xavier(rng, d, h), Matrix::zeros((1, h))));
        let width = if h > 0 { h } else { d };
        let head = IntensityHead {
            hidden,
            w: xavier(rng, width, 2),
            b: Matrix::zeros((1, 2)),
            alpha: Matrix::zeros((1, 2)),
            log_beta: Matrix::zeros((1, 2)),
        };
        ModelParams {
            item_embedding,
            encoder: EncoderParams { layers, head },
            hgc: HgcParams {
                w1: xavier(rng, d, d),
            },
            decoder: DecoderParams {
                w: xavier(rng, d, n_items),
                b: Matrix::zeros((1, n_items)),
            },
        }
    }

    /// Same layout as [`ModelParams::init`] with every entry zero.
    pub fn zeros(cfg: &ModelConfig, n_items: usize) -> Self {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut p = Self::init(cfg, n_items, &mut rng);
        p.visit_mut(&mut |_, m| m.fill(0.0));
        p
    }

    pub fn n_items(&self) -> usize {
        self.item_embedding.nrows()
    }

    pub fn d_model(&self) -> usize {
        self.item_embedding.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        let mut n = 0;
        self.visit(&mut |_, m| n += m.len());
        n
    }

    /// Puts every tensor on the tape, as trainable leaves or as constants.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> ModelParams<Var> {
        self.map(&mut |m| {
            if trainable {
                tape.param(m.clone())
            } else {
                tape.constant(m.clone())
            }
        })
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(&mut |_, m| ok &= m.iter().all(|v| v.is_finite()));
        ok
    }
}

/// Sequences and hyperedges of a group of users, taken from one history view.
#[derive(Clone, Debug, PartialEq)]
pub struct UserBatch {
    pub users: Vec<usize>,
    pub sequences: Vec<SequenceBatch>,
    pub hyperedges: Vec<Vec<usize>>,
}

impl UserBatch {
    pub fn from_graph(history: &FeedbackGraph, users: &[usize]) -> Self {
        UserBatch {
            users: users.to_vec(),
            sequences: users
                .iter()
                .map(|&u| SequenceBatch::from_events(&history.sequences[u]))
                .collect(),
            hyperedges: users.iter().map(|&u| history.hyperedge(u)).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.users.len()
    }

    pub fn is_empty(&self) -> bool {
        self.users.is_empty()
    }
}

/// Tape nodes produced by one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    /// `B x |I|` scores in `(-1, 1)`.
    pub scores: Var,
    /// Scores before the `tanh`.
    pub pre_activation: Var,
    pub e_s: Var,
    pub e_h1: Var,
    pub e_h2: Var,
    /// Per-user hidden states; `None` for empty sequences.
    pub hidden: Vec<Option<Var>>,
}

/// Encodes every sequence and stacks the pooled vectors (`B x d`); users
/// with an empty sequence get a zero row.
pub fn sequential_reps(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    batch: &UserBatch,
) -> Result<(Var, Vec<Option<Var>>)> {
    let d = tape.shape(params.item_embedding).1;
    let mut rows = Vec::with_capacity(batch.len());
    let mut hidden = Vec::with_capacity(batch.len());
    for seq in &batch.sequences {
        if seq.is_empty() {
            rows.push(tape.constant(Matrix::zeros((1, d))));
            hidden.push(None);
            continue;
        }
        let enc = encode(tape, params.item_embedding, seq, &params.encoder, &cfg.encoder)?;
        rows.push(enc.pooled);
        hidden.push(Some(enc.hidden));
    }
    if rows.is_empty() {
        return Ok((tape.constant(Matrix::zeros((0, d))), hidden));
    }
    Ok((tape.concat_rows(&rows)?, hidden))
}

/// Item representations after the interactive convolution (`|I| x d`).
pub fn item_lambda(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    corr: &CorrelationSet,
) -> Result<Var> {
    let a = tape.constant(corr.adjacency_norm.clone());
    hgc_forward(tape, a, params.item_embedding, &params.hgc, cfg.hgc_layers)
}

/// `(e_H1, e_H2)` for every user of the batch. `lambda` is the shared
/// convolution output; it is ignored in strict mode.
pub fn structural_reps(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    corr: &CorrelationSet,
    batch: &UserBatch,
    lambda: Option<Var>,
) -> Result<(Var, Var)> {
    let d = tape.shape(params.item_embedding).1;
    if cfg.strict_hgc {
        let mut h1 = Vec::with_capacity(batch.len());
        let mut h2 = Vec::with_capacity(batch.len());
        for edge in &batch.hyperedges {
            if edge.is_empty() {
                h1.push(tape.constant(Matrix::zeros((1, d))));
                h2.push(tape.constant(Matrix::zeros((1, d))));
                continue;
            }
            let (a, b) = strict_user_reps(
                tape,
                params.item_embedding,
                &corr.adjacency_norm,
                &params.hgc,
                cfg.hgc_layers,
                edge,
                &corr.feedback.x_masked,
            )?;
            h1.push(a);
            h2.push(b);
        }
        if h1.is_empty() {
            let z = tape.constant(Matrix::zeros((0, d)));
            return Ok((z, z));
        }
        return Ok((tape.concat_rows(&h1)?, tape.concat_rows(&h2)?));
    }
    let lambda = match lambda {
        Some(l) => l,
        None => item_lambda(tape, params, cfg, corr)?,
    };
    let (p1, p2) = pooling_matrices(&batch.hyperedges, &corr.feedback.x_masked);
    let p1 = tape.constant(p1);
    let p2 = tape.constant(p2);
    Ok((tape.matmul(p1, lambda)?, tape.matmul(p2, lambda)?))
}

/// Pre-activation and `tanh` scores. `None` terms are left out.
pub fn score_users(
    tape: &mut Tape,
    e_s: Option<Var>,
    e_h1: Option<Var>,
    e_h2: Option<Var>,
    table: Var,
    decoder: &DecoderParams<Var>,
    delta: f64,
) -> Result<(Var, Var)> {
    let user = match (e_s, e_h1) {
        (Some(a), Some(b)) => Some(tape.add(a, b)?),
        (a, b) => a.or(b),
    };
    let mut pre = match user {
        Some(u) => {
            let vt = tape.transpose(table);
            Some(tape.matmul(u, vt)?)
        }
        None => None,
    };
    if let Some(e) = e_h2 {
        let z = tape.matmul(e, decoder.w)?;
        let n = tape.shape(z).0;
        let b = tape.repeat_rows(decoder.b, n)?;
        let z = tape.add(z, b)?;
        let z = tape.scale(z, delta);
        pre = Some(match pre {
            Some(p) => tape.add(p, z)?,
            None => z,
        });
    }
    let pre = pre.ok_or_else(|| Error::Config("every decoder term is disabled".into()))?;
    let r = tape.tanh(pre);
    Ok((pre, r))
}

/// Full forward pass for training.
pub fn forward(
    tape: &mut Tape,
    params: &ModelParams<Var>,
    cfg: &ModelConfig,
    corr: &CorrelationSet,
    batch: &UserBatch,
) -> Result<Forward> {
    let (e_s, hidden) = sequential_reps(tape, params, cfg, batch)?;
    let a = cfg.ablation;
    let (e_h1, e_h2) = structural_reps(tape, params, cfg, corr, batch, None)?;
    let (pre, r) = score_users(
        tape,
        (!a.no_seq).then_some(e_s),
        (!a.no_gra1).then_some(e_h1),
        (!a.no_gra2).then_some(e_h2),
        params.item_embedding,
        &params.decoder,
        cfg.delta,
    )?;
    Ok(Forward {
        scores: r,
        pre_activation: pre,
        e_s,
        e_h1,
        e_h2,
        hidden,
    })
}

/// Plain-valued user representations, one row per user.
#[derive(Clone, Debug, PartialEq)]
pub struct UserReps {
    pub users: Vec<usize>,
    pub e_s: Matrix,
    pub e_h1: Matrix,
    pub e_h2: Matrix,
}

/// Users scored together on one tape during inference.
const INFERENCE_CHUNK: usize = 64;

/// A trained model ready for inference.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ModelParams<Matrix>,
}

impl Model {
    pub fn new(config: ModelConfig, params: ModelParams<Matrix>) -> Self {
        Model { config, params }
    }

    pub fn n_items(&self) -> usize {
        self.params.n_items()
    }

    /// Item representations after the convolution.
    pub fn item_representations(&self, corr: &CorrelationSet) -> Result<Matrix> {
        let mut tape = Tape::new();
        let p = self.params.bind(&mut tape, false);
        let l = item_lambda(&mut tape, &p, &self.config, corr)?;
        Ok(tape.value(l).clone())
    }

    /// Hidden states of one sequence (`n x d`).
    pub fn hidden_states(&self, seq: &SequenceBatch) -> Result<Matrix> {
        let mut tape = Tape::new();
        let table = tape.constant(self.params.item_embedding.clone());
        let enc_params = self.params.encoder.map(&mut |m| tape.constant(m.clone()));
        let enc = encode(&mut tape, table, seq, &enc_params, &self.config.encoder)?;
        Ok(tape.value(enc.hidden).clone())
    }

    /// `e_S`, `e_H1`, `e_H2` computed from `history`; chunks of users run
    /// in parallel and are reassembled in input order.
    pub fn user_representations(
        &self,
        corr: &CorrelationSet,
        history: &FeedbackGraph,
        users: &[usize],
    ) -> Result<UserReps> {
        let lambda = if self.config.strict_hgc {
            None
        } else {
            Some(self.item_representations(corr)?)
        };
        let chunks: Vec<&[usize]> = users.chunks(INFERENCE_CHUNK).collect();
        let parts: Vec<Result<(Matrix, Matrix, Matrix)>> = chunks
            .par_iter()
            .map(|chunk| {
                let batch = UserBatch::from_graph(history, chunk);
                let mut tape = Tape::new();
                let p = self.params.bind(&mut tape, false);
                let (e_s, _) = sequential_reps(&mut tape, &p, &self.config, &batch)?;
                let l = lambda.as_ref().map(|m| tape.constant(m.clone()));
                let (h1, h2) = structural_reps(&mut tape, &p, &self.config, corr, &batch, l)?;
                Ok((
                    tape.value(e_s).clone(),
                    tape.value(h1).clone(),
                    tape.value(h2).clone(),
                ))
            })
            .collect();
        let d = self.params.d_model();
        let mut e_s = Matrix::zeros((users.len(), d));
        let mut e_h1 = Matrix::zeros((users.len(), d));
        let mut e_h2 = Matrix::zeros((users.len(), d));
        let mut at = 0;
        for part in parts {
            let (a, b, c) = part?;
            let n = a.nrows();
            e_s.slice_mut(ndarray::s![at..at + n, ..]).assign(&a);
            e_h1.slice_mut(ndarray::s![at..at + n, ..]).assign(&b);
            e_h2.slice_mut(ndarray::s![at..at + n, ..]).assign(&c);
            at += n;
        }
        Ok(UserReps {
            users: users.to_vec(),
            e_s,
            e_h1,
            e_h2,
        })
    }

    /// Pre-activation scores (`B x |I|`) for precomputed representations.
    /// The `tanh` is monotone, so rankings can use these directly.
    pub fn pre_activation(&self, reps: &UserReps) -> Result<Matrix> {
        let n = reps.users.len();
        let starts: Vec<usize> = (0..n).step_by(INFERENCE_CHUNK).collect();
        let parts: Vec<Result<Matrix>> = starts
            .par_iter()
            .map(|&s| {
                let e = (s + INFERENCE_CHUNK).min(n);
                let rows = ndarray::s![s..e, ..];
                let mut tape = Tape::new();
                let table = tape.constant(self.params.item_embedding.clone());
                let dec = DecoderParams {
                    w: tape.constant(self.params.decoder.w.clone()),
                    b: tape.constant(self.params.decoder.b.clone()),
                };
                let a = self.config.ablation;
                let es = (!a.no_seq).then(|| tape.constant(reps.e_s.slice(rows).to_owned()));
                let h1 = (!a.no_gra1).then(|| tape.constant(reps.e_h1.slice(rows).to_owned()));
                let h2 = (!a.no_gra2).then(|| tape.constant(reps.e_h2.slice(rows).to_owned()));
                let (pre, _) = score_users(&mut tape, es, h1, h2, table, &dec, self.config.delta)?;
                Ok(tape.value(pre).clone())
            })
            .collect();
        let mut out = Matrix::zeros((n, self.n_items()));
        for (s, part) in starts.into_iter().zip(parts) {
            let m = part?;
            out.slice_mut(ndarray::s![s..s + m.nrows(), ..]).assign(&m);
        }
        Ok(out)
    }

    /// Scores in `(-1, 1)` for the given users.
    pub fn score(&self, corr: &CorrelationSet, history: &FeedbackGraph, users: &[usize]) -> Result<Matrix> {
        let reps = self.user_representations(corr, history, users)?;
        Ok(self.pre_activation(&reps)?.mapv(f64::tanh))
    }
}
