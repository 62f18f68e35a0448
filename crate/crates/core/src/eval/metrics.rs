//! Binary-relevance ranking metrics and top-K selection.

use std::cmp::Ordering;
use std::collections::HashSet;

use crate::error::{Error, Result};

/// Cutoffs reported by every evaluation.
pub const KS: [usize; 3] = [5, 10, 20];

fn check_relevant(relevant: &HashSet<usize>) -> Result<()> {
    if relevant.is_empty() {
        return Err(Error::Empty("relevant set is empty".into()));
    }
    Ok(())
}

/// `|top-k ∩ relevant| / |relevant|`.
pub fn recall_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<f64> {
    check_relevant(relevant)?;
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    Ok(hits as f64 / relevant.len() as f64)
}

/// DCG of the hits in the top `k` (1-based position `p` earns
/// `1 / log2(p + 1)`), divided by the DCG of `min(|relevant|, k)` hits at
/// the top.
pub fn ndcg_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Result<f64> {
    check_relevant(relevant)?;
    let gain = |p: usize| 1.0 / ((p + 1) as f64).log2();
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(p, _)| gain(p + 1))
        .sum();
    let ideal: f64 = (1..=relevant.len().min(k)).map(gain).sum();
    if ideal == 0.0 {
        return Ok(0.0);
    }
    Ok(dcg / ideal)
}

/// Descending by score, ascending item index on ties; NaN sorts last.
fn by_score(scores: &[f64]) -> impl Fn(&usize, &usize) -> Ordering + '_ {
    move |a, b| {
        let (sa, sb) = (scores[*a], scores[*b]);
        match (sa.is_nan(), sb.is_nan()) {
            (true, false) => Ordering::Greater,
            (false, true) => Ordering::Less,
            _ => sb.partial_cmp(&sa).unwrap_or(Ordering::Equal).then(a.cmp(b)),
        }
    }
}

/// The `k` best items by score, skipping `excluded`.
pub fn top_k(scores: &[f64], excluded: &HashSet<usize>, k: usize) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len()).filter(|i| !excluded.contains(i)).collect();
    let cmp = by_score(scores);
    if k < cand.len() {
        cand.select_nth_unstable_by(k, &cmp);
        cand.truncate(k);
    }
    cand.sort_by(&cmp);
    cand
}
