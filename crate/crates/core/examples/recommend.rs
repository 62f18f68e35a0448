//! Top-K recommendations for named users, the way `nfarec predict` prints
//! them.

use nfarec::cli::predict_text;
use nfarec::config::RunConfig;
use nfarec::data::{prepare, DataConfig};
use nfarec::model::fit;
use nfarec::synthetic;

fn main() -> nfarec::Result<()> {
    let ds = prepare(synthetic::polarity_clustered(3, Default::default()), &DataConfig::default())?;
    let cfg = RunConfig::from_text("d_model = 32\nlr = 0.01\nepochs = 20\neval_every = 5\n")?;
    let ckpt = fit(&ds, &cfg)?.checkpoint;
    let users = ["u0".to_string(), "u45".to_string(), "nobody".to_string()];
    print!("{}", predict_text(&ckpt, &ds, &users, 5)?);
    Ok(())
}
