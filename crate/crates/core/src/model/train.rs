use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{RunConfig, TrainConfig};
use crate::data::{CorrelationSet, PreparedDataset, Split};
use crate::error::{Error, Result};
use crate::eval::evaluate_model;
use crate::seq_encoder::SequenceBatch;
use crate::tensor::{Matrix, Tape};

use super::checkpoint::Checkpoint;
use super::loss::{history_target_boundary, log_likelihood, loss_final, loss_main};
use super::{forward, Model, ModelParams, UserBatch};

/// Adaptive-moment optimizer state, one slot per parameter tensor in
/// [`ModelParams::visit`] order.
#[derive(Clone, Debug)]
pub struct Adam {
    lr: f64,
    b1: f64,
    b2: f64,
    eps: f64,
    t: i32,
    m: Vec<Matrix>,
    v: Vec<Matrix>,
}

impl Adam {
    pub fn new(cfg: &TrainConfig, params: &ModelParams<Matrix>) -> Self {
        let mut m = Vec::new();
        params.visit(&mut |_, p| m.push(Matrix::zeros(p.dim())));
        Adam {
            lr: cfg.lr,
            b1: cfg.adam_beta1,
            b2: cfg.adam_beta2,
            eps: cfg.adam_eps,
            t: 0,
            v: m.clone(),
            m,
        }
    }

    pub fn step(&mut self, params: &mut ModelParams<Matrix>, grads: &[Matrix]) {
        self.t += 1;
        let c1 = 1.0 - self.b1.powi(self.t);
        let c2 = 1.0 - self.b2.powi(self.t);
        let (b1, b2, eps, lr) = (self.b1, self.b2, self.eps, self.lr);
        let mut k = 0;
        let (ms, vs) = (&mut self.m, &mut self.v);
        params.visit_mut(&mut |_, p| {
            let g = &grads[k];
            let m = &mut ms[k];
            let v = &mut vs[k];
            ndarray::Zip::from(p)
                .and(m)
                .and(v)
                .and(g)
                .for_each(|p, m, v, &g| {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                });
            k += 1;
        });
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_main: f64,
    pub l_auxi: f64,
    pub val_recall20: Option<f64>,
    pub val_ndcg20: Option<f64>,
}

impl EpochRecord {
    /// `epoch  L_main  L_auxi  val_R@20  val_N@20`, tab separated; missing
    /// validation values print as `nan`.
    pub fn tsv_line(&self) -> String {
        let opt = |v: Option<f64>| v.map_or_else(|| "nan".to_string(), |x| format!("{x:.6}"));
        format!(
            "{}\t{:.6}\t{:.6}\t{}\t{}",
            self.epoch,
            self.l_main,
            self.l_auxi,
            opt(self.val_recall20),
            opt(self.val_ndcg20)
        )
    }

    pub fn header() -> &'static str {
        "epoch\tL_main\tL_auxi\tval_R@20\tval_N@20"
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    /// Best validation NDCG@20, or the last good epoch without validation.
    pub checkpoint: Checkpoint,
    /// Parameters after the last completed epoch.
    pub last: ModelParams<Matrix>,
    pub log: Vec<EpochRecord>,
    /// Epoch at which the loss or parameters became non-finite.
    pub diverged: Option<usize>,
}

impl FitOutcome {
    pub fn log_text(&self) -> String {
        let mut s = String::from(EpochRecord::header());
        s.push('\n');
        for r in &self.log {
            s.push_str(&r.tsv_line());
            s.push('\n');
        }
        s
    }
}

/// Per-user history/target view of the training split.
struct TrainingView {
    users: Vec<usize>,
    sequences: Vec<SequenceBatch>,
    hyperedges: Vec<Vec<usize>>,
    history_items: Vec<Vec<usize>>,
    target_items: Vec<Vec<usize>>,
}

impl TrainingView {
    fn build(ds: &PreparedDataset, fraction: f64) -> Self {
        let train = &ds.split.train;
        let mut v = TrainingView {
            users: Vec::new(),
            sequences: Vec::new(),
            hyperedges: Vec::new(),
            history_items: Vec::new(),
            target_items: Vec::new(),
        };
        for (u, seq) in train.sequences.iter().enumerate() {
            if seq.is_empty() {
                continue;
            }
            let b = history_target_boundary(seq.len(), fraction);
            let (hist, tgt) = seq.split_at(b);
            let mut edge: Vec<usize> = hist.iter().map(|e| e.item).collect();
            edge.sort_unstable();
            edge.dedup();
            let mut targets: Vec<usize> = tgt.iter().map(|e| e.item).collect();
            targets.sort_unstable();
            targets.dedup();
            v.users.push(u);
            v.sequences.push(SequenceBatch::from_events(hist));
            v.history_items.push(edge.clone());
            v.hyperedges.push(edge);
            v.target_items.push(targets);
        }
        v
    }

    fn batch(&self, rows: &[usize]) -> (UserBatch, Vec<Vec<usize>>, Vec<Vec<usize>>) {
        let batch = UserBatch {
            users: rows.iter().map(|&r| self.users[r]).collect(),
            sequences: rows.iter().map(|&r| self.sequences[r].clone()).collect(),
            hyperedges: rows.iter().map(|&r| self.hyperedges[r].clone()).collect(),
        };
        let hist = rows.iter().map(|&r| self.history_items[r].clone()).collect();
        let tgt = rows.iter().map(|&r| self.target_items[r].clone()).collect();
        (batch, hist, tgt)
    }
}

enum StepResult {
    Ok { l_main: f64, l_auxi: f64 },
    Skipped,
    Diverged,
}

fn step(
    params: &mut ModelParams<Matrix>,
    adam: &mut Adam,
    cfg: &RunConfig,
    corr: &CorrelationSet,
    view: &TrainingView,
    rows: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<StepResult> {
    let (batch, hist, tgt) = view.batch(rows);
    if tgt.iter().all(Vec::is_empty) {
        return Ok(StepResult::Skipped);
    }
    let m = &cfg.model;
    let mut tape = Tape::new();
    let p = params.bind(&mut tape, true);
    let fwd = forward(&mut tape, &p, m, corr, &batch)?;
    let main = loss_main(&mut tape, fwd.scores, &hist, &tgt, m.beta1, m.beta2, m.strict_paper_loss)?;
    let mut ll = tape.scalar(0.0);
    for (h, seq) in fwd.hidden.iter().zip(&batch.sequences) {
        if let Some(h) = h {
            let part = log_likelihood(&mut tape, *h, seq, &p.encoder.head, m.n_mci, rng)?;
            ll = tape.add(ll, part.total)?;
        }
    }
    let auxi = tape.scale(ll, -1.0);
    let total = match loss_final(&mut tape, main, auxi, m.delta2) {
        Ok(t) => t,
        Err(Error::NonFinite { .. }) => return Ok(StepResult::Diverged),
        Err(e) => return Err(e),
    };
    let (l_main, l_auxi) = (tape.item(main), tape.item(auxi));
    tape.backward(total)?;
    let mut grads = Vec::new();
    p.visit(&mut |_, v| grads.push(tape.grad(*v)));
    if grads.iter().any(|g| g.iter().any(|x| !x.is_finite())) {
        return Ok(StepResult::Diverged);
    }
    adam.step(params, &grads);
    if !params.all_finite() {
        return Ok(StepResult::Diverged);
    }
    Ok(StepResult::Ok { l_main, l_auxi })
}

/// Numeric breakdowns inside a step (a row that cannot be normalized, a
/// non-finite intermediate) mean the parameters have blown up.
fn numeric_failure_as_divergence(r: Result<StepResult>) -> Result<StepResult> {
    match r {
        Err(Error::DegenerateRow { .. } | Error::NonFinite { .. }) => Ok(StepResult::Diverged),
        r => r,
    }
}

/// Builds the item structures from the training split and trains.
pub fn fit(ds: &PreparedDataset, cfg: &RunConfig) -> Result<FitOutcome> {
    let corr = CorrelationSet::build(&ds.split.train, cfg.model.order, cfg.model.self_loops)?;
    fit_prepared(ds, &corr, cfg, &mut |_| {})
}

/// Trains from a seeded initialization. Each epoch is one full-batch step,
/// or one step per shuffled user chunk when `batch_users > 0`. `observer`
/// sees every log record as it is produced.
pub fn fit_prepared(
    ds: &PreparedDataset,
    corr: &CorrelationSet,
    cfg: &RunConfig,
    observer: &mut (dyn FnMut(&EpochRecord) + Send),
) -> Result<FitOutcome> {
    cfg.validate()?;
    let threads = cfg.train.threads;
    if threads > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {threads} threads: {e}")))?;
        return pool.install(|| fit_inner(ds, corr, cfg, observer));
    }
    fit_inner(ds, corr, cfg, observer)
}

fn fit_inner(
    ds: &PreparedDataset,
    corr: &CorrelationSet,
    cfg: &RunConfig,
    observer: &mut (dyn FnMut(&EpochRecord) + Send),
) -> Result<FitOutcome> {
    let n_items = ds.split.full.n_items();
    let view = TrainingView::build(ds, cfg.model.target_fraction);
    if view.target_items.iter().all(Vec::is_empty) {
        return Err(Error::Config(
            "no training sequence is long enough to hold a next-item target".into(),
        ));
    }
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
    let mut params = ModelParams::init(&cfg.model, n_items, &mut init_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut adam = Adam::new(&cfg.train, &params);
    let snapshot = |params: &ModelParams<Matrix>, epoch| Checkpoint {
        config: cfg.clone(),
        fingerprint: ds.fingerprint.clone(),
        epoch,
        params: params.clone(),
    };
    let validate = cfg.train.eval_every > 0
        && ds.split.validation.sequences.iter().any(|s| !s.is_empty());
    let mut best = snapshot(&params, 0);
    let mut best_score = f64::NEG_INFINITY;
    let mut log = Vec::new();
    let mut diverged = None;
    let mut order: Vec<usize> = (0..view.users.len()).collect();

    'epochs: for epoch in 1..=cfg.train.epochs {
        let chunks: Vec<Vec<usize>> = if cfg.train.batch_users == 0 {
            vec![order.clone()]
        } else {
            order.shuffle(&mut rng);
            order.chunks(cfg.train.batch_users).map(<[usize]>::to_vec).collect()
        };
        let (mut l_main, mut l_auxi) = (0.0, 0.0);
        for rows in &chunks {
            match numeric_failure_as_divergence(step(&mut params, &mut adam, cfg, corr, &view, rows, &mut rng))? {
                StepResult::Ok { l_main: a, l_auxi: b } => {
                    l_main += a;
                    l_auxi += b;
                }
                StepResult::Skipped => {}
                StepResult::Diverged => {
                    diverged = Some(epoch);
                    break 'epochs;
                }
            }
        }
        let mut record = EpochRecord {
            epoch,
            l_main,
            l_auxi,
            val_recall20: None,
            val_ndcg20: None,
        };
        let due = validate && (epoch % cfg.train.eval_every == 0 || epoch == cfg.train.epochs);
        if due {
            let model = Model::new(cfg.model.clone(), params.clone());
            let rep = match evaluate_model(&model, ds, corr, Split::Validation, cfg.eval) {
                Err(Error::DegenerateRow { .. } | Error::NonFinite { .. }) => {
                    diverged = Some(epoch);
                    break;
                }
                r => r?,
            };
            let (r, n) = (rep.recall_at(20), rep.ndcg_at(20));
            if n.is_some_and(f64::is_nan) {
                diverged = Some(epoch);
                break;
            }
            record.val_recall20 = r;
            record.val_ndcg20 = n;
            if let Some(n) = n {
                if n > best_score {
                    best_score = n;
                    best = snapshot(&params, epoch);
                }
            }
        } else if !validate {
            best = snapshot(&params, epoch);
        }
        observer(&record);
        log.push(record);
    }
    Ok(FitOutcome {
        checkpoint: best,
        last: params,
        log,
        diverged,
    })
}
