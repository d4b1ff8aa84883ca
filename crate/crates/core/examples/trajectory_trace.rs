//! Fine-tunes LoRA adapters on a planted corpus and traces how the drift
//! projects onto each direction.

use driftrisk::harness::{drift_run, DriftRunConfig};
use driftrisk::toy::world::{ToyWorld, WorldConfig};
use driftrisk::trajectory::write_trajectory_csv;

fn main() -> driftrisk::Result<()> {
    let world = ToyWorld::build(WorldConfig::seeded(7))?;
    let mut cfg = DriftRunConfig::seeded(7);
    cfg.judge_stride = 4;
    let points = drift_run(&world, &cfg)?;
    write_trajectory_csv(&points, std::io::stdout().lock())?;
    Ok(())
}
