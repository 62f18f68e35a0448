//! Rank every item for every test user and report Recall/NDCG at 5, 10
//! and 20 plus next-polarity accuracy.

use nfarec::config::{EvalPolicy, RunConfig};
use nfarec::data::{prepare, DataConfig, Split};
use nfarec::eval::evaluate;
use nfarec::model::fit;
use nfarec::synthetic;

fn main() -> nfarec::Result<()> {
    let ds = prepare(synthetic::memorizable(1), &DataConfig::default())?;
    let cfg = RunConfig::from_text("d_model = 32\nlr = 0.01\nepochs = 20\neval_every = 5\n")?;
    let ckpt = fit(&ds, &cfg)?.checkpoint;

    let report = evaluate(&ckpt, &ds, Split::Test, EvalPolicy::default())?;
    print!("{}", report.to_text());

    // Keeping already-seen items in the ranking changes the numbers.
    let keep = EvalPolicy {
        exclude_history: false,
        ..EvalPolicy::default()
    };
    let r = evaluate(&ckpt, &ds, Split::Test, keep)?;
    println!("with history items ranked: Recall@5 {:.4}", r.recall_at(5).unwrap_or(f64::NAN));

    // A checkpoint only evaluates against the dataset it was trained on.
    let other = prepare(synthetic::memorizable(2), &DataConfig::default())?;
    match evaluate(&ckpt, &other, Split::Test, EvalPolicy::default()) {
        Err(e) => println!("other dataset rejected: {e}"),
        Ok(_) => println!("unexpected: other dataset accepted"),
    }
    Ok(())
}
