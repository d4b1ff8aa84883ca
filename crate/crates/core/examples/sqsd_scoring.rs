//! Scores a planted corpus with every SQSD variant and shows how the scores
//! track plant intensity.

use driftrisk::harness::{danger_sensitivity, intensity_rho, sqsd_records, ScoringConfig};
use driftrisk::sqsd::Variant;
use driftrisk::toy::world::{sub_seed, ToyWorld, WorldConfig};

fn main() -> driftrisk::Result<()> {
    let world = ToyWorld::build(WorldConfig::seeded(7))?;
    let (_, ranked) = danger_sensitivity(&world, &ScoringConfig::default())?;
    let alpha = ranked[0].position;
    let corpus = world.planted_corpus(200, sub_seed(7, 300))?;
    let records = sqsd_records(&world, &corpus, alpha, 1e-3, Variant::Full)?;

    for v in [
        Variant::Full,
        Variant::NoNorm,
        Variant::DangerOnly,
        Variant::SafetyOnly,
    ] {
        let scores: Vec<f64> = records.iter().map(|r| r.variant_scores[&v]).collect();
        println!(
            "{:<12} spearman(score, intensity) = {:+.3}",
            v.as_str(),
            intensity_rho(&corpus, &scores)?
        );
    }

    let mut top: Vec<_> = records.iter().zip(&corpus).collect();
    top.sort_by(|a, b| b.0.score.total_cmp(&a.0.score));
    for (r, s) in top.iter().take(5) {
        println!(
            "{:<10} score {:+.3e} intensity {:?}",
            r.sample_id, r.score, s.plant_intensity
        );
    }
    Ok(())
}
