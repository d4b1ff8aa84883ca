//! The full ranking experiment: sensitivity-selected SQSD, every baseline,
//! and fine-tuning on each score quintile.

use driftrisk::eval::render_table;
use driftrisk::harness::{ranking_run, RankingConfig};
use driftrisk::toy::world::{ToyWorld, WorldConfig};

fn main() -> driftrisk::Result<()> {
    let world = ToyWorld::build(WorldConfig::seeded(7))?;
    let out = ranking_run(&world, &RankingConfig::seeded(7))?;
    println!("scorer alpha {:.2}", out.ranked[0].position);
    for (m, rho) in &out.rho {
        println!("{m:<16} rho {rho:+.3}");
    }
    print!("{}", render_table(&out.reports));
    Ok(())
}
