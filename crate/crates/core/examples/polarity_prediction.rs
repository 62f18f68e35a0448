//! Predict whether a user's next interaction will be positive or negative
//! from the per-polarity conditional intensities.

use nfarec::config::RunConfig;
use nfarec::data::{prepare, DataConfig, Split};
use nfarec::eval::polarity_counts;
use nfarec::model::fit;
use nfarec::seq_encoder::{intensity, SequenceBatch};
use nfarec::synthetic;

fn main() -> nfarec::Result<()> {
    // Users alternate between liked and disliked items.
    let ds = prepare(synthetic::alternating_polarity(0, 40, 16, 8), &DataConfig::default())?;
    let mut cfg = RunConfig::from_text("d_model = 32\nlr = 0.01\nepochs = 40\neval_every = 0\n")?;
    cfg.model.delta2 = 1.0; // weight the point-process term heavily
    let model = fit(&ds, &cfg)?.checkpoint.model();

    let history = ds.split.history_for(Split::Test);
    let (correct, total) = polarity_counts(&model, &history, &ds.split.test)?;
    println!("held-out accuracy: {correct}/{total} = {:.3}", correct as f64 / total as f64);

    let events = &history.sequences[0];
    let seq = SequenceBatch::from_events(events);
    let h = model.hidden_states(&seq)?;
    let last = events.last().expect("nonempty history");
    let row = h.row(h.nrows() - 1).to_vec();
    for dt in [0.0, 0.05, 0.2] {
        let lam = intensity(&row, last.time + dt, last.time, &model.params.encoder.head)?;
        println!(
            "t_last + {dt:.2}: lambda+ {:.4}  lambda- {:.4}  (last event {:?})",
            lam.positive, lam.negative, last.polarity
        );
    }
    Ok(())
}
