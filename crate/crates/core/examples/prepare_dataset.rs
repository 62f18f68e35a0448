//! Load a raw interaction file, label polarities, split chronologically and
//! write a dataset bundle.
//!
//! cargo run --example prepare_dataset -- [ratings.csv] [bundle-dir]

use std::path::PathBuf;

use nfarec::data::{load_interactions, prepare, write_bundle, CorrelationSet, DataConfig};
use nfarec::synthetic;

fn main() -> nfarec::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let tmp = std::env::temp_dir().join("nfarec-prepare");
    let input = match args.first() {
        Some(p) => PathBuf::from(p),
        None => {
            // no file given: write a planted one
            std::fs::create_dir_all(&tmp).expect("temp dir");
            let p = tmp.join("ratings.csv");
            let records = synthetic::polarity_clustered(0, Default::default());
            std::fs::write(&p, synthetic::to_csv(&records)).expect("write csv");
            p
        }
    };
    let out = args.get(1).map(PathBuf::from).unwrap_or_else(|| tmp.join("bundle"));

    let cfg = DataConfig::default();
    let loaded = load_interactions(&input, &cfg.schema, cfg.lenient)?;
    let ds = prepare(loaded.records, &cfg)?;
    let corr = CorrelationSet::build(&ds.split.train, 2, true)?;
    write_bundle(&out, &ds, &corr)?;

    print!("{}", ds.stats);
    let r = &ds.split.report;
    println!(
        "train/validation/test events: {}/{}/{}",
        r.train_events, r.validation_events, r.test_events
    );
    println!("bundle written to {} (fingerprint {})", out.display(), &ds.fingerprint[..12]);
    Ok(())
}
