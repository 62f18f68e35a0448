//! Multi-order feedback correlations: which item pairs users agree on and
//! which ones they split on.

use ndarray::array;
use nfarec::data::build_feedback_correlation;

fn main() -> nfarec::Result<()> {
    // rows are users, columns items; +1 liked, -1 disliked, 0 unseen
    let zeta = array![
        [1.0, 1.0, -1.0, 0.0],
        [1.0, 1.0, -1.0, 1.0],
        [1.0, -1.0, 0.0, 1.0],
    ];
    let fc = build_feedback_correlation(&zeta, 3)?;
    for (l, x) in fc.orders.iter().enumerate() {
        println!("order {l}:\n{x:.4}");
    }
    println!("sum of orders:\n{:.4}", fc.x_hat);
    println!("negative correlations masked out:\n{:.4}", fc.x_masked);

    let flipped = build_feedback_correlation(&zeta.mapv(|v| -v), 3)?;
    println!("unchanged when every polarity flips: {}", flipped == fc);
    Ok(())
}
