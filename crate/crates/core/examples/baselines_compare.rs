//! Scores one corpus with SQSD and every baseline and compares how each
//! ranking tracks plant intensity.

use driftrisk::harness::{
    baseline_scores, danger_sensitivity, intensity_rho, sqsd_records, ScoringConfig,
};
use driftrisk::sqsd::Variant;
use driftrisk::toy::world::{sub_seed, ToyWorld, WorldConfig};

fn main() -> driftrisk::Result<()> {
    let world = ToyWorld::build(WorldConfig::seeded(7))?;
    let (_, ranked) = danger_sensitivity(&world, &ScoringConfig::default())?;
    let alpha = ranked[0].position;
    let corpus = world.planted_corpus(300, sub_seed(7, 300))?;
    let sqsd: Vec<f64> = sqsd_records(&world, &corpus, alpha, 1e-3, Variant::Full)?
        .iter()
        .map(|r| r.score)
        .collect();
    println!("{:<16} {:+.3}", "sqsd", intensity_rho(&corpus, &sqsd)?);
    for (b, scores) in baseline_scores(&world, &corpus, sub_seed(7, 301))? {
        println!(
            "{:<16} {:+.3}",
            b.as_str(),
            intensity_rho(&corpus, &scores)?
        );
    }
    Ok(())
}
