//! The `nfarec` command line: thin wrappers over the library, driven by a
//! run configuration.
//!
//! Exit codes: 0 success, 1 usage or input error, 2 training diverged,
//! 3 provenance mismatch between a bundle and a config or checkpoint.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand};

use crate::config::{parse_entries, Preset, RunConfig};
use crate::data::{
    load_interactions, prepare, read_bundle, write_bundle, CorrelationSet, PreparedDataset, Split,
};
use crate::error::{Error, Result};
use crate::eval::{ablation_suite, evaluate, export_representations, top_k};
use crate::model::{fit_prepared, Checkpoint};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DIVERGED: i32 = 2;
pub const EXIT_PROVENANCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "nfarec", version, about = "Negative-feedback-aware recommender")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. They override the config file.
#[derive(Debug, Default, Args)]
pub struct GlobalArgs {
    /// `key = value` run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// yelp2023, movielens, recipes, books or beauty.
    #[arg(long, global = true)]
    pub preset: Option<String>,
    /// Drop the negative-class term from the ranking loss.
    #[arg(long, global = true)]
    pub strict_paper_loss: bool,
    /// Encoder layers without the feed-forward sublayer.
    #[arg(long, global = true)]
    pub attention_only: bool,
    #[arg(long, global = true)]
    pub no_seq: bool,
    #[arg(long, global = true)]
    pub no_gra1: bool,
    #[arg(long, global = true)]
    pub no_gra2: bool,
    /// Let attention see future events.
    #[arg(long, global = true)]
    pub no_masking: bool,
    #[arg(long, global = true)]
    pub no_self_loops: bool,
    /// Highest feedback-correlation order.
    #[arg(long, global = true)]
    pub order: Option<usize>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[arg(long, global = true)]
    pub epochs: Option<usize>,
    /// Any config key, as `key=value`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load raw interactions, filter, split, and write a dataset bundle.
    Prepare {
        /// Raw interaction file (default: `input` from the config).
        #[arg(long)]
        input: Option<PathBuf>,
        /// Bundle directory (default: `bundle` from the config).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train on a bundle and write the best checkpoint plus a TSV log.
    Train {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value = "model.ckpt")]
        out: PathBuf,
        /// Training log (default: checkpoint path with `.log.tsv`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Ranking metrics and polarity accuracy of a checkpoint.
    Evaluate {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
        /// Directory for `metrics.tsv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train the decoder ablations and the correlation-order sweep.
    Ablate {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: String,
        /// Directory for `ablation.tsv` and `ablation.txt`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Top-K items for named users.
    Predict {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated user ids.
        #[arg(long, value_delimiter = ',', required = true)]
        users: Vec<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Also write the output to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write user and item representations as TSV.
    Export {
        #[arg(long)]
        bundle: Option<PathBuf>,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Resolves the run configuration: defaults, preset, file, then flags.
pub fn resolve_config(g: &GlobalArgs) -> Result<RunConfig> {
    let preset = g.preset.as_deref().map(Preset::from_str).transpose()?;
    let entries = match &g.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_entries(&text)?
        }
        None => Vec::new(),
    };
    let mut cfg = RunConfig::from_entries(&entries, preset)?;
    for o in &g.overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("--set expects KEY=VALUE, got `{o}`")))?;
        cfg.set(k.trim(), v.trim())?;
    }
    let m = &mut cfg.model;
    if let Some(s) = g.seed {
        cfg.train.seed = s;
    }
    m.strict_paper_loss |= g.strict_paper_loss;
    m.encoder.attention_only |= g.attention_only;
    m.ablation.no_seq |= g.no_seq;
    m.ablation.no_gra1 |= g.no_gra1;
    m.ablation.no_gra2 |= g.no_gra2;
    if g.no_masking {
        m.encoder.masking = false;
    }
    if g.no_self_loops {
        m.self_loops = false;
    }
    if let Some(l) = g.order {
        m.order = l;
    }
    if let Some(t) = g.threads {
        cfg.train.threads = t;
    }
    if let Some(e) = g.epochs {
        cfg.train.epochs = e;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn need(path: Option<&PathBuf>, fallback: Option<&PathBuf>, what: &str) -> Result<PathBuf> {
    path.or(fallback)
        .cloned()
        .ok_or_else(|| Error::Config(format!("no {what} given (flag or config key `{what}`)")))
}

/// The bundle must have been prepared with the configured data settings.
fn check_bundle_matches(cfg: &RunConfig, ds: &PreparedDataset) -> Result<()> {
    let d = &cfg.data;
    if d.threshold != ds.threshold || d.min_interactions != ds.min_interactions || d.ratios != ds.split.ratios {
        return Err(Error::Provenance(format!(
            "bundle {} was prepared with threshold {}, min_interactions {}, split {:?}; the config asks for threshold {}, min_interactions {}, split {:?}",
            ds.fingerprint, ds.threshold, ds.min_interactions, ds.split.ratios, d.threshold, d.min_interactions, d.ratios
        )));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Top-K lines for named users plus the ids that were not found.
pub fn predict_text(ckpt: &Checkpoint, ds: &PreparedDataset, users: &[String], k: usize) -> Result<String> {
    ckpt.verify(ds)?;
    let model = ckpt.model();
    let corr = CorrelationSet::build(&ds.split.train, model.config.order, model.config.self_loops)?;
    let history = &ds.split.full;
    let maps = &history.maps;
    let mut known = Vec::new();
    let mut unknown = Vec::new();
    for id in users {
        match maps.user(id) {
            Some(u) => known.push((id, u)),
            None => unknown.push(id.as_str()),
        }
    }
    let idx: Vec<usize> = known.iter().map(|(_, u)| *u).collect();
    let mut s = String::from("user\trank\titem\tscore\n");
    if !idx.is_empty() {
        let scores = model.score(&corr, history, &idx)?;
        for (row, (id, u)) in known.iter().enumerate() {
            let excluded: HashSet<usize> = if ckpt.config.eval.exclude_history {
                history.sequences[*u].iter().map(|e| e.item).collect()
            } else {
                HashSet::new()
            };
            let r = scores.row(row);
            for (rank, i) in top_k(r.as_slice().expect("row-major"), &excluded, k).into_iter().enumerate() {
                let _ = writeln!(s, "{id}\t{}\t{}\t{:.6}", rank + 1, maps.item_ids[i], r[i]);
            }
        }
    }
    let _ = writeln!(s, "unknown_users\t{}", unknown.join(","));
    Ok(s)
}

fn execute(cli: &Cli, out: &mut dyn Write) -> Result<i32> {
    let cfg = resolve_config(&cli.global)?;
    let io = |e: std::io::Error| Error::io(Path::new("<stdout>"), e);
    match &cli.command {
        Command::Prepare { input, out: dir } => {
            let input = need(input.as_ref(), cfg.input.as_ref(), "input")?;
            let dir = need(dir.as_ref(), cfg.bundle.as_ref(), "bundle")?;
            let loaded = load_interactions(&input, &cfg.data.schema, cfg.data.lenient)?;
            let skipped = loaded.skipped.len();
            let mut ds = prepare(loaded.records, &cfg.data)?;
            ds.skipped_rows = skipped;
            let corr = CorrelationSet::build(&ds.split.train, cfg.model.order, cfg.model.self_loops)?;
            write_bundle(&dir, &ds, &corr)?;
            write!(out, "{}", ds.stats).map_err(io)?;
            writeln!(
                out,
                "skipped rows: {skipped}  removed users: {}  removed items: {}",
                ds.removed_users, ds.removed_items
            )
            .map_err(io)?;
            writeln!(out, "bundle: {}  fingerprint: {}", dir.display(), ds.fingerprint).map_err(io)?;
            Ok(EXIT_OK)
        }
        Command::Train { bundle, out: ckpt_path, log } => {
            let dir = need(bundle.as_ref(), cfg.bundle.as_ref(), "bundle")?;
            let ds = read_bundle(&dir)?;
            check_bundle_matches(&cfg, &ds)?;
            let corr = CorrelationSet::build(&ds.split.train, cfg.model.order, cfg.model.self_loops)?;
            let outcome = fit_prepared(&ds, &corr, &cfg, &mut |r| eprintln!("{}", r.tsv_line()))?;
            outcome.checkpoint.save(ckpt_path)?;
            let log_path = log.clone().unwrap_or_else(|| {
                let mut p = ckpt_path.clone().into_os_string();
                p.push(".log.tsv");
                PathBuf::from(p)
            });
            write_text(&log_path, &outcome.log_text())?;
            write!(out, "{}", outcome.log_text()).map_err(io)?;
            writeln!(
                out,
                "checkpoint: {} (epoch {})",
                ckpt_path.display(),
                outcome.checkpoint.epoch
            )
            .map_err(io)?;
            if let Some(e) = outcome.diverged {
                writeln!(out, "diverged at epoch {e}; kept epoch {}", outcome.checkpoint.epoch).map_err(io)?;
                return Ok(EXIT_DIVERGED);
            }
            Ok(EXIT_OK)
        }
        Command::Evaluate {
            bundle,
            checkpoint,
            split,
            out: dir,
        } => {
            let ds = read_bundle(&need(bundle.as_ref(), cfg.bundle.as_ref(), "bundle")?)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            let report = evaluate(&ckpt, &ds, Split::from_str(split)?, cfg.eval)?;
            write!(out, "{}", report.to_text()).map_err(io)?;
            if let Some(d) = dir {
                write_text(&d.join("metrics.tsv"), &report.to_tsv())?;
            }
            Ok(EXIT_OK)
        }
        Command::Ablate { bundle, split, out: dir } => {
            let ds = read_bundle(&need(bundle.as_ref(), cfg.bundle.as_ref(), "bundle")?)?;
            check_bundle_matches(&cfg, &ds)?;
            let table = ablation_suite(&ds, &cfg, Split::from_str(split)?)?;
            write!(out, "{}", table.to_text()).map_err(io)?;
            if let Some(d) = dir {
                write_text(&d.join("ablation.tsv"), &table.to_tsv())?;
                write_text(&d.join("ablation.txt"), &table.to_text())?;
            }
            Ok(EXIT_OK)
        }
        Command::Predict {
            bundle,
            checkpoint,
            users,
            k,
            out: file,
        } => {
            let ds = read_bundle(&need(bundle.as_ref(), cfg.bundle.as_ref(), "bundle")?)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            let text = predict_text(&ckpt, &ds, users, *k)?;
            write!(out, "{text}").map_err(io)?;
            if let Some(f) = file {
                write_text(f, &text)?;
            }
            Ok(EXIT_OK)
        }
        Command::Export {
            bundle,
            checkpoint,
            out: dir,
        } => {
            let ds = read_bundle(&need(bundle.as_ref(), cfg.bundle.as_ref(), "bundle")?)?;
            let ckpt = Checkpoint::load(checkpoint)?;
            ckpt.verify(&ds)?;
            let model = ckpt.model();
            let corr = CorrelationSet::build(&ds.split.train, model.config.order, model.config.self_loops)?;
            let paths = export_representations(&model, &ds, &corr, dir)?;
            for p in [&paths.user_sequential, &paths.user_structural, &paths.items] {
                writeln!(out, "{}", p.display()).map_err(io)?;
            }
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (including the program name) and runs the command,
/// writing results to `out` and diagnostics to stderr. Returns the exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match execute(&cli, out) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Provenance(_) => EXIT_PROVENANCE,
                _ => EXIT_USAGE,
            }
        }
    }
}
