//! Remove one decoder term at a time and sweep the feedback-correlation
//! order on data where feedback agrees inside item clusters and conflicts
//! across them.

use nfarec::config::RunConfig;
use nfarec::data::{prepare, DataConfig, Split};
use nfarec::eval::ablation_suite;
use nfarec::synthetic::{self, ClusterSpec};

fn main() -> nfarec::Result<()> {
    let ds = prepare(synthetic::polarity_clustered(0, ClusterSpec::default()), &DataConfig::default())?;
    let cfg = RunConfig::from_text("d_model = 32\nlr = 0.01\nepochs = 30\neval_every = 5\n")?;
    let table = ablation_suite(&ds, &cfg, Split::Test)?;
    print!("{}", table.to_text());
    Ok(())
}
