use std::collections::HashMap;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::records::{polarity_of, InteractionRecord, Polarity};

/// Dense id <-> index maps, shared by every view of one dataset.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct IndexMaps {
    pub user_ids: Vec<String>,
    pub item_ids: Vec<String>,
    user_index: HashMap<String, usize>,
    item_index: HashMap<String, usize>,
}

impl IndexMaps {
    pub fn new(user_ids: Vec<String>, item_ids: Vec<String>) -> Self {
        let user_index = user_ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let item_index = item_ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        IndexMaps {
            user_ids,
            item_ids,
            user_index,
            item_index,
        }
    }

    pub fn user(&self, id: &str) -> Option<usize> {
        self.user_index.get(id).copied()
    }

    pub fn item(&self, id: &str) -> Option<usize> {
        self.item_index.get(id).copied()
    }
}

/// One interaction inside a user's chronological sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Event {
    pub item: usize,
    pub timestamp: i64,
    /// Timestamp rescaled per user to `[1, 2]` over the user's full history.
    pub time: f64,
    pub rating: f64,
    pub polarity: Polarity,
}

/// Signed user-item graph with per-user chronological sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackGraph {
    pub maps: Arc<IndexMaps>,
    pub sequences: Vec<Vec<Event>>,
}

impl FeedbackGraph {
    /// Indexes users and items in order of first appearance and sorts each
    /// user's events by timestamp (stable, so ties keep input order).
    pub fn from_records(records: &[InteractionRecord], threshold: f64) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::Empty("no interaction records".into()));
        }
        let mut user_ids = Vec::new();
        let mut item_ids = Vec::new();
        let mut users: HashMap<&str, usize> = HashMap::new();
        let mut items: HashMap<&str, usize> = HashMap::new();
        let mut sequences: Vec<Vec<Event>> = Vec::new();
        for r in records {
            let u = *users.entry(&r.user_id).or_insert_with(|| {
                user_ids.push(r.user_id.clone());
                sequences.push(Vec::new());
                user_ids.len() - 1
            });
            let i = *items.entry(&r.item_id).or_insert_with(|| {
                item_ids.push(r.item_id.clone());
                item_ids.len() - 1
            });
            sequences[u].push(Event {
                item: i,
                timestamp: r.timestamp,
                time: 1.0,
                rating: r.rating,
                polarity: polarity_of(r.rating, threshold),
            });
        }
        for seq in &mut sequences {
            seq.sort_by_key(|e| e.timestamp);
            normalize_times(seq);
        }
        Ok(FeedbackGraph {
            maps: Arc::new(IndexMaps::new(user_ids, item_ids)),
            sequences,
        })
    }

    pub fn n_users(&self) -> usize {
        self.maps.user_ids.len()
    }

    pub fn n_items(&self) -> usize {
        self.maps.item_ids.len()
    }

    pub fn n_interactions(&self) -> usize {
        self.sequences.iter().map(Vec::len).sum()
    }

    /// A view with the same index maps and different sequences.
    pub fn with_sequences(&self, sequences: Vec<Vec<Event>>) -> Self {
        FeedbackGraph {
            maps: Arc::clone(&self.maps),
            sequences,
        }
    }

    /// Sign of the user's latest feedback on the item, or 0.
    pub fn zeta(&self, user: usize, item: usize) -> i8 {
        self.sequences[user]
            .iter()
            .rev()
            .find(|e| e.item == item)
            .map_or(0, |e| e.polarity.sign())
    }

    /// Dense `|U| x |I|` signed feedback matrix.
    pub fn zeta_matrix(&self) -> Matrix {
        let mut z = Matrix::zeros((self.n_users(), self.n_items()));
        for (u, seq) in self.sequences.iter().enumerate() {
            for e in seq {
                z[[u, e.item]] = f64::from(e.polarity.sign());
            }
        }
        z
    }

    /// Nonzero entries of the signed feedback matrix, sorted by (user, item).
    pub fn zeta_triplets(&self) -> Vec<(usize, usize, i8)> {
        let z = self.zeta_matrix();
        let mut out = Vec::new();
        for ((u, i), v) in z.indexed_iter() {
            if *v != 0.0 {
                out.push((u, i, *v as i8));
            }
        }
        out
    }

    /// Distinct items of a user's sequence, ascending.
    pub fn hyperedge(&self, user: usize) -> Vec<usize> {
        let mut items: Vec<usize> = self.sequences[user].iter().map(|e| e.item).collect();
        items.sort_unstable();
        items.dedup();
        items
    }

    pub fn positive_share(&self) -> f64 {
        let total = self.n_interactions();
        if total == 0 {
            return 0.0;
        }
        let pos = self
            .sequences
            .iter()
            .flatten()
            .filter(|e| e.polarity == Polarity::Positive)
            .count();
        pos as f64 / total as f64
    }
}

/// Shifts and rescales one user's timestamps to `[1, 2]`; a sequence with a
/// single distinct timestamp maps everything to 1.
pub fn normalize_times(seq: &mut [Event]) {
    let (Some(first), Some(last)) = (seq.first(), seq.last()) else {
        return;
    };
    let (lo, hi) = (first.timestamp, last.timestamp);
    let span = (hi - lo) as f64;
    for e in seq {
        e.time = if span > 0.0 {
            1.0 + (e.timestamp - lo) as f64 / span
        } else {
            1.0
        };
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(u: &str, i: &str, rating: f64, t: i64) -> InteractionRecord {
        InteractionRecord {
            user_id: u.into(),
            item_id: i.into(),
            rating,
            timestamp: t,
        }
    }

    #[test]
    fn sequences_are_chronological_with_stable_ties() {
        let g = FeedbackGraph::from_records(
            &[
                rec("u", "a", 5.0, 30),
                rec("u", "b", 2.0, 10),
                rec("u", "c", 4.0, 10),
                rec("v", "a", 1.0, 7),
            ],
            4.0,
        )
        .unwrap();
        let items: Vec<usize> = g.sequences[0].iter().map(|e| e.item).collect();
        assert_eq!(items, vec![1, 2, 0]);
        let times: Vec<f64> = g.sequences[0].iter().map(|e| e.time).collect();
        assert_eq!(times, vec![1.0, 1.0, 2.0]);
        assert_eq!(g.sequences[1][0].time, 1.0);
        assert_eq!(g.zeta(0, 1), -1);
        assert_eq!(g.zeta(0, 2), 1);
        assert_eq!(g.zeta(1, 1), 0);
    }

    #[test]
    fn zeta_nonzero_iff_item_in_sequence() {
        let g = FeedbackGraph::from_records(
            &[rec("u", "a", 5.0, 1), rec("v", "b", 3.0, 2), rec("v", "a", 4.0, 3)],
            4.0,
        )
        .unwrap();
        let z = g.zeta_matrix();
        for u in 0..g.n_users() {
            for i in 0..g.n_items() {
                let present = g.sequences[u].iter().any(|e| e.item == i);
                assert_eq!(z[[u, i]] != 0.0, present);
            }
        }
        assert_eq!(g.zeta_triplets(), vec![(0, 0, 1), (1, 0, 1), (1, 1, -1)]);
    }
}
