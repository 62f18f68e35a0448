//! Write the learned user and item representations as TSV files.

use nfarec::config::RunConfig;
use nfarec::data::{prepare, CorrelationSet, DataConfig};
use nfarec::eval::export_representations;
use nfarec::model::fit;
use nfarec::synthetic;

fn main() -> nfarec::Result<()> {
    let ds = prepare(synthetic::memorizable(0), &DataConfig::default())?;
    let cfg = RunConfig::from_text("d_model = 8\nlr = 0.01\nepochs = 10\n")?;
    let model = fit(&ds, &cfg)?.checkpoint.model();
    let corr = CorrelationSet::build(&ds.split.train, cfg.model.order, cfg.model.self_loops)?;
    let dir = std::env::temp_dir().join("nfarec-export");
    let paths = export_representations(&model, &ds, &corr, &dir)?;
    for p in [&paths.user_sequential, &paths.user_structural, &paths.items] {
        let text = std::fs::read_to_string(p).expect("just written");
        let first = text.lines().next().unwrap_or("");
        println!("{}: {} rows, first: {}", p.display(), text.lines().count(), &first[..first.len().min(60)]);
    }
    Ok(())
}
