//! Seeded generators for planted interaction datasets.
//!
//! Every generator is deterministic in its seed and returns raw records,
//! so the output goes through the same ingestion path as a real file.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};

use crate::data::InteractionRecord;

fn record(u: usize, i: usize, rating: f64, t: i64) -> InteractionRecord {
    InteractionRecord {
        user_id: format!("u{u}"),
        item_id: format!("i{i}"),
        rating,
        timestamp: t,
    }
}

/// Comma-separated `user,item,rating,timestamp` lines.
pub fn to_csv(records: &[InteractionRecord]) -> String {
    let mut s = String::new();
    for r in records {
        s.push_str(&format!("{},{},{},{}\n", r.user_id, r.item_id, r.rating, r.timestamp));
    }
    s
}

/// 50 users in 5 groups of 10; each group owns 8 of the 40 items and every
/// member interacts with all 8 in its own random order. After excluding a
/// user's earlier items, the held-out items are exactly the group's
/// remaining items, so a model that learns group membership ranks them
/// first.
pub fn memorizable(seed: u64) -> Vec<InteractionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for u in 0..50 {
        let group = u / 10;
        let mut items: Vec<usize> = (group * 8..group * 8 + 8).collect();
        items.shuffle(&mut rng);
        for (j, i) in items.into_iter().enumerate() {
            let rating = rng.gen_range(1..=5) as f64;
            out.push(record(u, i, rating, 1_000 + 100 * j as i64));
        }
    }
    out
}

/// Users alternate between a "liked" item pool (rated 5) and a "disliked"
/// pool (rated 1), starting from a random side. The polarity of the next
/// event is the opposite of the current one, which is visible through the
/// current item.
pub fn alternating_polarity(seed: u64, users: usize, len: usize, items_per_side: usize) -> Vec<InteractionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for u in 0..users {
        let start: bool = rng.gen();
        let mut t = 10_000i64;
        for j in 0..len {
            let good = start ^ (j % 2 == 1);
            let offset = if good { 0 } else { items_per_side };
            let i = offset + rng.gen_range(0..items_per_side);
            let rating = if good { 5.0 } else { 1.0 };
            out.push(record(u, i, rating, t));
            t += rng.gen_range(50..150);
        }
    }
    out
}

/// Settings for [`polarity_clustered`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClusterSpec {
    pub clusters: usize,
    pub items_per_cluster: usize,
    pub users_per_cluster: usize,
    /// Positive interactions with the user's own cluster.
    pub own: usize,
    /// Negative interactions with the next cluster.
    pub conflicting: usize,
}

impl Default for ClusterSpec {
    fn default() -> Self {
        ClusterSpec {
            clusters: 6,
            items_per_cluster: 15,
            users_per_cluster: 20,
            own: 12,
            conflicting: 5,
        }
    }
}

/// Items form clusters. Each user likes items of its own cluster (ratings
/// 4-5) and dislikes items of the following cluster (ratings 1-2), so
/// feedback agrees inside a cluster and conflicts across neighbouring
/// clusters. Events are interleaved in random order.
pub fn polarity_clustered(seed: u64, spec: ClusterSpec) -> Vec<InteractionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let k = spec.clusters;
    let n = spec.items_per_cluster;
    for c in 0..k {
        for m in 0..spec.users_per_cluster {
            let u = c * spec.users_per_cluster + m;
            let mut own: Vec<usize> = (c * n..c * n + n).collect();
            own.shuffle(&mut rng);
            let next = (c + 1) % k;
            let mut other: Vec<usize> = (next * n..next * n + n).collect();
            other.shuffle(&mut rng);
            let mut events: Vec<(usize, f64)> = Vec::new();
            for i in own.into_iter().take(spec.own) {
                events.push((i, rng.gen_range(4..=5) as f64));
            }
            for i in other.into_iter().take(spec.conflicting) {
                events.push((i, rng.gen_range(1..=2) as f64));
            }
            events.shuffle(&mut rng);
            let mut t = 50_000i64;
            for (i, r) in events {
                out.push(record(u, i, r, t));
                t += rng.gen_range(10..100);
            }
        }
    }
    out
}

/// Settings for [`movielens_like`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MovieLensSpec {
    pub users: usize,
    pub items: usize,
    pub genres: usize,
    pub min_len: usize,
    /// Mean of the exponential extra length added to `min_len`.
    pub mean_extra_len: f64,
    pub max_len: usize,
}

impl Default for MovieLensSpec {
    /// Roughly the shape of MovieLens-100K: 943 users, 1682 items and
    /// about 100K ratings with at least 20 per user.
    fn default() -> Self {
        MovieLensSpec {
            users: 943,
            items: 1682,
            genres: 19,
            min_len: 20,
            mean_extra_len: 86.0,
            max_len: 700,
        }
    }
}

fn ring_distance(a: f64, b: f64, n: f64) -> f64 {
    let d = (a - b).rem_euclid(n);
    d.min(n - d)
}

/// Ratings with the gross statistics of a movie-rating log: Zipf-like item
/// popularity, genres on a ring, user tastes that drift along the ring
/// over time, and ratings that rise with closeness to the user's current
/// taste, with user and item biases.
pub fn movielens_like(seed: u64, spec: MovieLensSpec) -> Vec<InteractionRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let g = spec.genres;
    let genre: Vec<usize> = (0..spec.items).map(|_| rng.gen_range(0..g)).collect();
    let mut rank: Vec<usize> = (0..spec.items).collect();
    rank.shuffle(&mut rng);
    let popularity: Vec<f64> = (0..spec.items)
        .map(|i| 1.0 / ((rank[i] + 1) as f64).powf(0.9))
        .collect();
    let quality = Normal::new(0.0, 0.6).expect("valid");
    let item_q: Vec<f64> = (0..spec.items).map(|_| quality.sample(&mut rng)).collect();
    let by_genre: Vec<Vec<usize>> = (0..g)
        .map(|k| (0..spec.items).filter(|&i| genre[i] == k).collect())
        .collect();
    let samplers: Vec<Option<WeightedIndex<f64>>> = by_genre
        .iter()
        .map(|items| WeightedIndex::new(items.iter().map(|&i| popularity[i])).ok())
        .collect();
    let extra = Exp::new(1.0 / spec.mean_extra_len).expect("valid");
    let step = Normal::new(0.0, 1.0).expect("valid");
    let bias = Normal::new(0.0, 0.4).expect("valid");
    let noise = Normal::new(0.0, 0.7).expect("valid");
    let gap = Exp::new(1.0 / 200_000.0).expect("valid");

    let mut out = Vec::new();
    for u in 0..spec.users {
        let len = (spec.min_len + extra.sample(&mut rng) as usize).min(spec.max_len);
        let start = rng.gen_range(0.0..g as f64);
        let drift = rng.gen_range(-4.0..4.0);
        let b_u = bias.sample(&mut rng);
        let mut seen = vec![false; spec.items];
        let mut t = 880_000_000i64 + rng.gen_range(0..20_000_000);
        let mut placed = 0;
        let mut attempts = 0;
        while placed < len && attempts < len * 50 {
            attempts += 1;
            let center = start + drift * placed as f64 / len as f64;
            let k = (center + step.sample(&mut rng)).round().rem_euclid(g as f64) as usize;
            let Some(sampler) = &samplers[k] else { continue };
            let i = by_genre[k][sampler.sample(&mut rng)];
            if seen[i] {
                continue;
            }
            seen[i] = true;
            let closeness = 1.0 - ring_distance(genre[i] as f64, center, g as f64) / 2.0;
            let score = 3.5 + b_u + item_q[i] + 0.6 * closeness + noise.sample(&mut rng);
            let rating = score.round().clamp(1.0, 5.0);
            out.push(record(u, i, rating, t));
            t += 1 + gap.sample(&mut rng) as i64;
            placed += 1;
        }
    }
    out
}
