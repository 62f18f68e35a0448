//! Run configurations: presets, a config file, and overrides, with
//! unknown keys rejected.

use nfarec::config::{parse_entries, Preset, RunConfig};

fn main() -> nfarec::Result<()> {
    let text = "\
# weights from the books preset, then local changes
preset = books
d_model = 32
delta2 = 0.01
";
    let cfg = RunConfig::from_text(text)?;
    let m = &cfg.model;
    println!("beta1 {} beta2 {} delta {} delta2 {}", m.beta1, m.beta2, m.delta, m.delta2);
    println!("min interactions per user/item: {}", cfg.data.min_interactions);

    // A preset given on the command line replaces the file's preset, but
    // explicit file values still win over it.
    let cfg = RunConfig::from_entries(&parse_entries(text)?, Some(Preset::Yelp2023))?;
    println!("with --preset yelp2023: beta1 {} delta2 {}", cfg.model.beta1, cfg.model.delta2);

    // Serialized configs parse back to the same value.
    assert_eq!(RunConfig::from_text(&cfg.to_text())?, cfg);

    match RunConfig::from_text("d_modle = 32\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => println!("unexpected: typo accepted"),
    }
    Ok(())
}
