//! Dataset preparation and the on-disk dataset bundle.
//!
//! A bundle directory holds:
//!
//! | file | content |
//! |------|---------|
//! | `manifest.txt` | `key = value` data settings and the fingerprint |
//! | `users.txt`, `items.txt` | `index<TAB>id` |
//! | `interactions.txt` | `user<TAB>item<TAB>rating<TAB>timestamp<TAB>split` |
//! | `zeta.txt` | training signed feedback, `user item sign` triplets |
//! | `adjacency.txt` | training item adjacency, `i j 1` triplets |
//! | `x_hat.bin`, `x_masked.bin` | `NFARECX1`, rows and cols as u64 LE, row-major f64 LE |
//! | `split_report.txt`, `stats.txt` | human-readable reports |

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

use super::correlation::CorrelationSet;
use super::graph::{normalize_times, Event, FeedbackGraph, IndexMaps};
use super::records::{filter_min_interactions, polarity_of, InteractionRecord, Schema, DEFAULT_THRESHOLD};
use super::split::{chronological_split, SplitDataset, SplitRatios, SplitReport};

pub const MATRIX_MAGIC: &[u8; 8] = b"NFARECX1";
const BUNDLE_VERSION: u32 = 1;

/// Settings that determine a prepared dataset.
#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub schema: Schema,
    pub threshold: f64,
    pub min_interactions: usize,
    pub ratios: SplitRatios,
    pub lenient: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            schema: Schema::default(),
            threshold: DEFAULT_THRESHOLD,
            min_interactions: 1,
            ratios: SplitRatios::default(),
            lenient: false,
        }
    }
}

/// Headline dataset statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct DatasetStats {
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub positive_pct: f64,
    pub negative_pct: f64,
    pub avg_interactions: f64,
}

impl DatasetStats {
    pub fn of(graph: &FeedbackGraph) -> Self {
        let interactions = graph.n_interactions();
        let pos = graph.positive_share() * 100.0;
        DatasetStats {
            users: graph.n_users(),
            items: graph.n_items(),
            interactions,
            positive_pct: pos,
            negative_pct: 100.0 - pos,
            avg_interactions: interactions as f64 / graph.n_users().max(1) as f64,
        }
    }
}

impl fmt::Display for DatasetStats {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "#Users\t#Items\t#Interactions\tPerc.(#Pos/#Neg)\t#Avg.")?;
        writeln!(
            f,
            "{}\t{}\t{}\t{:.1}%/{:.1}%\t{:.1}",
            self.users,
            self.items,
            self.interactions,
            self.positive_pct,
            self.negative_pct,
            self.avg_interactions
        )
    }
}

/// A split dataset plus the fingerprint that ties checkpoints to it.
#[derive(Clone, Debug, PartialEq)]
pub struct PreparedDataset {
    pub split: SplitDataset,
    pub threshold: f64,
    pub min_interactions: usize,
    pub fingerprint: String,
    pub stats: DatasetStats,
    pub skipped_rows: usize,
    pub removed_users: usize,
    pub removed_items: usize,
}

/// Filters, indexes and splits raw records.
pub fn prepare(records: Vec<InteractionRecord>, cfg: &DataConfig) -> Result<PreparedDataset> {
    let filtered = filter_min_interactions(records, cfg.min_interactions)?;
    let graph = FeedbackGraph::from_records(&filtered.records, cfg.threshold)?;
    let split = chronological_split(&graph, cfg.ratios)?;
    let stats = DatasetStats::of(&graph);
    let mut ds = PreparedDataset {
        split,
        threshold: cfg.threshold,
        min_interactions: cfg.min_interactions,
        fingerprint: String::new(),
        stats,
        skipped_rows: 0,
        removed_users: filtered.removed_users,
        removed_items: filtered.removed_items,
    };
    ds.fingerprint = fingerprint(&ds);
    Ok(ds)
}

fn interactions_text(ds: &PreparedDataset) -> String {
    let mut out = String::new();
    let parts = [
        ("train", &ds.split.train),
        ("validation", &ds.split.validation),
        ("test", &ds.split.test),
    ];
    for u in 0..ds.split.full.n_users() {
        for (name, g) in parts {
            for e in &g.sequences[u] {
                out.push_str(&format!(
                    "{u}\t{}\t{}\t{}\t{name}\n",
                    e.item, e.rating, e.timestamp
                ));
            }
        }
    }
    out
}

fn data_settings(ds: &PreparedDataset) -> String {
    let r = ds.split.ratios;
    format!(
        "threshold = {}\nmin_interactions = {}\nsplit = {},{},{}\n",
        ds.threshold, ds.min_interactions, r.train, r.validation, r.test
    )
}

/// SHA-256 over the indexed interactions, the id maps and the data settings.
pub fn fingerprint(ds: &PreparedDataset) -> String {
    let mut h = Sha256::new();
    h.update(interactions_text(ds).as_bytes());
    for id in &ds.split.full.maps.user_ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    h.update(b"--\n");
    for id in &ds.split.full.maps.item_ids {
        h.update(id.as_bytes());
        h.update(b"\n");
    }
    h.update(data_settings(ds).as_bytes());
    format!("{:x}", h.finalize())
}

fn write_file(path: &Path, content: &[u8]) -> Result<()> {
    fs::write(path, content).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_matrix_bin(path: &Path, m: &Matrix) -> Result<()> {
    let mut buf = Vec::with_capacity(24 + 8 * m.len());
    buf.extend_from_slice(MATRIX_MAGIC);
    buf.extend_from_slice(&(m.nrows() as u64).to_le_bytes());
    buf.extend_from_slice(&(m.ncols() as u64).to_le_bytes());
    for v in m.iter() {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    write_file(path, &buf)
}

pub fn read_matrix_bin(path: &Path) -> Result<Matrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 24 || &bytes[..8] != MATRIX_MAGIC {
        return Err(Error::format(path, "missing NFARECX1 header"));
    }
    let rows = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[16..24].try_into().expect("8 bytes")) as usize;
    let body = &bytes[24..];
    if body.len() != rows * cols * 8 {
        return Err(Error::format(
            path,
            format!("expected {} values, found {} bytes", rows * cols, body.len()),
        ));
    }
    let values = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    Matrix::from_shape_vec((rows, cols), values).map_err(|e| Error::format(path, e.to_string()))
}

fn triplets(m: &Matrix) -> String {
    let mut out = String::new();
    for ((i, j), v) in m.indexed_iter() {
        if *v != 0.0 {
            out.push_str(&format!("{i} {j} {v}\n"));
        }
    }
    out
}

fn split_report_text(ds: &PreparedDataset) -> String {
    let r: &SplitReport = &ds.split.report;
    let mut out = format!(
        "ratios\t{},{},{}\ntrain_events\t{}\nvalidation_events\t{}\ntest_events\t{}\ntrain_only_users\t{}\n",
        ds.split.ratios.train,
        ds.split.ratios.validation,
        ds.split.ratios.test,
        r.train_events,
        r.validation_events,
        r.test_events,
        r.train_only_users.len()
    );
    for u in &r.train_only_users {
        out.push_str(&format!("flagged\t{}\n", ds.split.full.maps.user_ids[*u]));
    }
    out
}

/// Writes a bundle directory (created if missing).
pub fn write_bundle(dir: &Path, ds: &PreparedDataset, corr: &CorrelationSet) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let maps = &ds.split.full.maps;
    let index_file = |ids: &[String]| -> String {
        ids.iter().enumerate().map(|(i, id)| format!("{i}\t{id}\n")).collect()
    };
    write_file(&dir.join("users.txt"), index_file(&maps.user_ids).as_bytes())?;
    write_file(&dir.join("items.txt"), index_file(&maps.item_ids).as_bytes())?;
    write_file(&dir.join("interactions.txt"), interactions_text(ds).as_bytes())?;
    let zeta: String = ds
        .split
        .train
        .zeta_triplets()
        .iter()
        .map(|(u, i, s)| format!("{u} {i} {s}\n"))
        .collect();
    write_file(&dir.join("zeta.txt"), zeta.as_bytes())?;
    write_file(&dir.join("adjacency.txt"), triplets(&corr.adjacency).as_bytes())?;
    write_matrix_bin(&dir.join("x_hat.bin"), &corr.feedback.x_hat)?;
    write_matrix_bin(&dir.join("x_masked.bin"), &corr.feedback.x_masked)?;
    write_file(&dir.join("split_report.txt"), split_report_text(ds).as_bytes())?;
    write_file(&dir.join("stats.txt"), ds.stats.to_string().as_bytes())?;

    let mut manifest = Vec::new();
    writeln!(manifest, "version = {BUNDLE_VERSION}").expect("vec write");
    manifest.extend_from_slice(data_settings(ds).as_bytes());
    writeln!(manifest, "correlation_orders = {}", corr.order_count()).expect("vec write");
    writeln!(manifest, "skipped_rows = {}", ds.skipped_rows).expect("vec write");
    writeln!(manifest, "removed_users = {}", ds.removed_users).expect("vec write");
    writeln!(manifest, "removed_items = {}", ds.removed_items).expect("vec write");
    writeln!(manifest, "fingerprint = {}", ds.fingerprint).expect("vec write");
    write_file(&dir.join("manifest.txt"), &manifest)
}

fn parse_kv(path: &Path, text: &str) -> Result<Vec<(String, String)>> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|l| {
            l.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::format(path, format!("expected `key = value`: {l}")))
        })
        .collect()
}

fn read_index(path: &Path) -> Result<Vec<String>> {
    let text = read_file(path)?;
    text.lines()
        .enumerate()
        .map(|(n, l)| {
            let (idx, id) = l
                .split_once('\t')
                .ok_or_else(|| Error::format(path, format!("line {}: expected index<TAB>id", n + 1)))?;
            if idx.parse::<usize>().ok() != Some(n) {
                return Err(Error::format(path, format!("line {}: index out of order", n + 1)));
            }
            Ok(id.to_string())
        })
        .collect()
}

/// Reads a bundle back and verifies its fingerprint.
pub fn read_bundle(dir: &Path) -> Result<PreparedDataset> {
    let manifest_path = dir.join("manifest.txt");
    let manifest = parse_kv(&manifest_path, &read_file(&manifest_path)?)?;
    let get = |key: &str| -> Result<&str> {
        manifest
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| Error::format(&manifest_path, format!("missing key `{key}`")))
    };
    let bad = |key: &str| Error::format(&manifest_path, format!("bad value for `{key}`"));
    let threshold: f64 = get("threshold")?.parse().map_err(|_| bad("threshold"))?;
    let min_interactions: usize = get("min_interactions")?
        .parse()
        .map_err(|_| bad("min_interactions"))?;
    let ratios: Vec<f64> = get("split")?
        .split(',')
        .map(|s| s.trim().parse().map_err(|_| bad("split")))
        .collect::<Result<_>>()?;
    if ratios.len() != 3 {
        return Err(bad("split"));
    }
    let ratios = SplitRatios {
        train: ratios[0],
        validation: ratios[1],
        test: ratios[2],
    };
    let stored_fp = get("fingerprint")?.to_string();

    let users = read_index(&dir.join("users.txt"))?;
    let items = read_index(&dir.join("items.txt"))?;
    let maps = IndexMaps::new(users, items);
    let n_users = maps.user_ids.len();
    let n_items = maps.item_ids.len();

    let ipath = dir.join("interactions.txt");
    let text = read_file(&ipath)?;
    let mut parts: [Vec<Vec<Event>>; 3] = [vec![Vec::new(); n_users], vec![Vec::new(); n_users], vec![Vec::new(); n_users]];
    for (n, line) in text.lines().enumerate() {
        let f: Vec<&str> = line.split('\t').collect();
        let err = || Error::format(&ipath, format!("line {}: malformed interaction", n + 1));
        if f.len() != 5 {
            return Err(err());
        }
        let u: usize = f[0].parse().map_err(|_| err())?;
        let i: usize = f[1].parse().map_err(|_| err())?;
        let rating: f64 = f[2].parse().map_err(|_| err())?;
        let timestamp: i64 = f[3].parse().map_err(|_| err())?;
        let which = match f[4] {
            "train" => 0,
            "validation" => 1,
            "test" => 2,
            _ => return Err(err()),
        };
        if u >= n_users || i >= n_items {
            return Err(err());
        }
        parts[which][u].push(Event {
            item: i,
            timestamp,
            time: 1.0,
            rating,
            polarity: polarity_of(rating, threshold),
        });
    }
    // rescale times over each user's full sequence, then share them
    let mut full = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let mut seq: Vec<Event> = parts.iter().flat_map(|p| p[u].iter().cloned()).collect();
        normalize_times(&mut seq);
        let (a, b) = (parts[0][u].len(), parts[1][u].len());
        for (k, e) in seq.iter().enumerate() {
            let (which, at) = if k < a {
                (0, k)
            } else if k < a + b {
                (1, k - a)
            } else {
                (2, k - a - b)
            };
            parts[which][u][at].time = e.time;
        }
        full.push(seq);
    }
    let full = FeedbackGraph {
        maps: std::sync::Arc::new(maps),
        sequences: full,
    };
    let [train, validation, test] = parts;
    let mut report = SplitReport::default();
    for (u, seq) in full.sequences.iter().enumerate() {
        if seq.len() < 3 {
            report.train_only_users.push(u);
        }
    }
    report.train_events = train.iter().map(Vec::len).sum();
    report.validation_events = validation.iter().map(Vec::len).sum();
    report.test_events = test.iter().map(Vec::len).sum();
    let split = SplitDataset {
        train: full.with_sequences(train),
        validation: full.with_sequences(validation),
        test: full.with_sequences(test),
        full,
        ratios,
        report,
    };
    let stats = DatasetStats::of(&split.full);
    let count = |key: &str| get(key).ok().and_then(|v| v.parse().ok()).unwrap_or(0);
    let ds = PreparedDataset {
        split,
        threshold,
        min_interactions,
        fingerprint: stored_fp.clone(),
        stats,
        skipped_rows: count("skipped_rows"),
        removed_users: count("removed_users"),
        removed_items: count("removed_items"),
    };
    let actual = fingerprint(&ds);
    if actual != stored_fp {
        return Err(Error::Provenance(format!(
            "bundle {} content fingerprint {actual} does not match manifest {stored_fp}",
            dir.display()
        )));
    }
    Ok(ds)
}
