//! Train on a planted dataset and save the best checkpoint.
//!
//! cargo run --release --example train_model -- [checkpoint-path]

use std::path::PathBuf;

use nfarec::config::RunConfig;
use nfarec::data::{prepare, CorrelationSet, DataConfig};
use nfarec::model::{fit_prepared, EpochRecord};
use nfarec::synthetic;

fn main() -> nfarec::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("nfarec-memorizable.ckpt"));
    let ds = prepare(synthetic::memorizable(0), &DataConfig::default())?;

    let mut cfg = RunConfig::from_text("d_model = 32\nlr = 0.01\nepochs = 40\neval_every = 5\nseed = 7\n")?;
    cfg.model.n_mci = 10;
    let corr = CorrelationSet::build(&ds.split.train, cfg.model.order, cfg.model.self_loops)?;

    println!("{}", EpochRecord::header());
    let outcome = fit_prepared(&ds, &corr, &cfg, &mut |r| {
        if r.val_ndcg20.is_some() {
            println!("{}", r.tsv_line());
        }
    })?;
    outcome.checkpoint.save(&out)?;
    println!(
        "best epoch {} saved to {} ({} parameters)",
        outcome.checkpoint.epoch,
        out.display(),
        outcome.checkpoint.params.parameter_count()
    );
    Ok(())
}
