//! Evaluation: ranking metrics over a held-out split, next-polarity
//! accuracy, ablation tables and representation export.

mod ablation;
mod export;
mod metrics;

use std::collections::HashSet;
use std::fmt::Write as _;

use rayon::prelude::*;

pub use ablation::{ablation_suite, AblationRow, AblationTable};
pub use export::{export_representations, ExportPaths};
pub use metrics::{ndcg_at_k, recall_at_k, top_k, KS};

use crate::config::EvalPolicy;
use crate::data::{CorrelationSet, Event, FeedbackGraph, Polarity, PreparedDataset, Split};
use crate::error::Result;
use crate::model::{Checkpoint, Model};
use crate::seq_encoder::{predict_next_polarity, SequenceBatch};

/// Averages over the users that had at least one relevant item.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub split: Split,
    /// Recall@K for each K in [`KS`].
    pub recall: [f64; 3],
    /// NDCG@K for each K in [`KS`].
    pub ndcg: [f64; 3],
    /// Share of split events whose polarity was predicted correctly.
    pub polarity_accuracy: Option<f64>,
    pub polarity_events: usize,
    pub users: usize,
    /// Users with no relevant item in the split.
    pub skipped_users: usize,
    pub policy: EvalPolicy,
}

fn k_index(k: usize) -> Option<usize> {
    KS.iter().position(|x| *x == k)
}

impl MetricReport {
    pub fn recall_at(&self, k: usize) -> Option<f64> {
        k_index(k).map(|i| self.recall[i])
    }

    pub fn ndcg_at(&self, k: usize) -> Option<f64> {
        k_index(k).map(|i| self.ndcg[i])
    }

    /// Human-readable table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let split = match self.split {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        };
        let _ = writeln!(s, "split: {split}  users: {}  skipped: {}", self.users, self.skipped_users);
        let _ = writeln!(s, "K\tRecall@K\tNDCG@K");
        for (i, k) in KS.iter().enumerate() {
            let _ = writeln!(s, "{k}\t{:.4}\t{:.4}", self.recall[i], self.ndcg[i]);
        }
        match self.polarity_accuracy {
            Some(a) => {
                let _ = writeln!(s, "polarity accuracy: {a:.4} over {} events", self.polarity_events);
            }
            None => {
                let _ = writeln!(s, "polarity accuracy: n/a");
            }
        }
        s
    }

    /// `key<TAB>value` lines.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for (i, k) in KS.iter().enumerate() {
            let _ = writeln!(s, "recall@{k}\t{:.6}", self.recall[i]);
        }
        for (i, k) in KS.iter().enumerate() {
            let _ = writeln!(s, "ndcg@{k}\t{:.6}", self.ndcg[i]);
        }
        match self.polarity_accuracy {
            Some(a) => {
                let _ = writeln!(s, "polarity_accuracy\t{a:.6}");
            }
            None => {
                let _ = writeln!(s, "polarity_accuracy\tnan");
            }
        }
        let _ = writeln!(s, "polarity_events\t{}", self.polarity_events);
        let _ = writeln!(s, "users\t{}", self.users);
        let _ = writeln!(s, "skipped_users\t{}", self.skipped_users);
        let _ = writeln!(s, "exclude_history\t{}", self.policy.exclude_history);
        let _ = writeln!(s, "positive_only\t{}", self.policy.positive_only);
        s
    }
}

/// Relevant items of one user: the split's items (optionally only the
/// positive ones), minus excluded history items.
pub fn relevant_items(split_events: &[Event], excluded: &HashSet<usize>, policy: EvalPolicy) -> HashSet<usize> {
    split_events
        .iter()
        .filter(|e| !policy.positive_only || e.polarity == Polarity::Positive)
        .map(|e| e.item)
        .filter(|i| !excluded.contains(i))
        .collect()
}

/// `(correct, total)` next-polarity predictions over the split events of
/// every user, each conditioned on all earlier events.
pub fn polarity_counts(model: &Model, history: &FeedbackGraph, part: &FeedbackGraph) -> Result<(usize, usize)> {
    let per_user: Vec<Result<(usize, usize)>> = (0..part.n_users())
        .into_par_iter()
        .map(|u| {
            let tail = &part.sequences[u];
            if tail.is_empty() {
                return Ok((0, 0));
            }
            let full: Vec<Event> = history.sequences[u].iter().chain(tail).cloned().collect();
            let start = history.sequences[u].len().max(1);
            if full.len() < 2 {
                return Ok((0, 0));
            }
            let seq = SequenceBatch::from_events(&full);
            let h = model.hidden_states(&seq)?;
            let head = &model.params.encoder.head;
            let mut correct = 0;
            let mut total = 0;
            for j in start..full.len() {
                let row = h.row(j - 1).to_vec();
                let guess = predict_next_polarity(&row, seq.times[j], seq.times[j - 1], head)?;
                correct += usize::from(guess == seq.polarities[j]);
                total += 1;
            }
            Ok((correct, total))
        })
        .collect();
    let mut correct = 0;
    let mut total = 0;
    for r in per_user {
        let (c, t) = r?;
        correct += c;
        total += t;
    }
    Ok((correct, total))
}

/// Ranks every item for every user with split events and averages the
/// metrics. The history view is train for validation and train plus
/// validation for test.
pub fn evaluate_model(
    model: &Model,
    ds: &PreparedDataset,
    corr: &CorrelationSet,
    split: Split,
    policy: EvalPolicy,
) -> Result<MetricReport> {
    let history = ds.split.history_for(split);
    let part = ds.split.part(split);
    let users: Vec<usize> = (0..part.n_users())
        .filter(|&u| !part.sequences[u].is_empty())
        .collect();
    let scores = if users.is_empty() {
        None
    } else {
        let reps = model.user_representations(corr, &history, &users)?;
        Some(model.pre_activation(&reps)?)
    };
    let kmax = *KS.iter().max().expect("nonempty");
    let per_user: Vec<Option<([f64; 3], [f64; 3])>> = users
        .par_iter()
        .enumerate()
        .map(|(row, &u)| {
            let excluded: HashSet<usize> = if policy.exclude_history {
                history.sequences[u].iter().map(|e| e.item).collect()
            } else {
                HashSet::new()
            };
            let relevant = relevant_items(&part.sequences[u], &excluded, policy);
            if relevant.is_empty() {
                return None;
            }
            let s = scores.as_ref().expect("users nonempty");
            let row = s.row(row);
            let ranked = top_k(row.as_slice().expect("row-major"), &excluded, kmax);
            let mut r = [0.0; 3];
            let mut n = [0.0; 3];
            for (i, k) in KS.iter().enumerate() {
                r[i] = recall_at_k(&ranked, &relevant, *k).expect("nonempty");
                n[i] = ndcg_at_k(&ranked, &relevant, *k).expect("nonempty");
            }
            Some((r, n))
        })
        .collect();
    let mut recall = [0.0; 3];
    let mut ndcg = [0.0; 3];
    let mut counted = 0;
    for (r, n) in per_user.iter().flatten() {
        for i in 0..3 {
            recall[i] += r[i];
            ndcg[i] += n[i];
        }
        counted += 1;
    }
    if counted > 0 {
        for i in 0..3 {
            recall[i] /= counted as f64;
            ndcg[i] /= counted as f64;
        }
    }
    let (correct, total) = polarity_counts(model, &history, part)?;
    Ok(MetricReport {
        split,
        recall,
        ndcg,
        polarity_accuracy: (total > 0).then(|| correct as f64 / total as f64),
        polarity_events: total,
        users: counted,
        skipped_users: users.len() - counted,
        policy,
    })
}

/// Verifies provenance, rebuilds the item structures the checkpoint was
/// trained with, and evaluates.
pub fn evaluate(checkpoint: &Checkpoint, ds: &PreparedDataset, split: Split, policy: EvalPolicy) -> Result<MetricReport> {
    checkpoint.verify(ds)?;
    let m = &checkpoint.config.model;
    let corr = CorrelationSet::build(&ds.split.train, m.order, m.self_loops)?;
    evaluate_model(&checkpoint.model(), ds, &corr, split, policy)
}

#[cfg(test)]
mod tests;
