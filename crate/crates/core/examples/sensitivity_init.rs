//! Computes the linear-path sensitivity profile and picks the scorer
//! initialization.

use driftrisk::harness::{danger_sensitivity, ScoringConfig};
use driftrisk::toy::world::{ToyWorld, WorldConfig};

fn main() -> driftrisk::Result<()> {
    let world = ToyWorld::build(WorldConfig::seeded(7))?;
    let (profile, ranked) = danger_sensitivity(&world, &ScoringConfig::default())?;
    println!("{:>6} {:>10}", "alpha", "ds");
    for p in &profile.points {
        println!("{:>6.2} {:>+10.4}", p.position, p.ds);
    }
    for r in ranked.iter().take(3) {
        println!("rank {} alpha {:.2} ds {:+.4}", r.rank, r.position, r.ds);
    }
    Ok(())
}
