//! Compares the loss change toward a steered state with its one-step
//! first-order prediction, sample by sample.

use driftrisk::direction::steer;
use driftrisk::stats::spearman;
use driftrisk::toy::model::{FinetuneMode, ToyModel};
use driftrisk::toy::probe::taylor_gap;
use driftrisk::toy::world::{sub_seed, ToyWorld, WorldConfig};

fn main() -> driftrisk::Result<()> {
    let world = ToyWorld::build(WorldConfig::seeded(7))?;
    let corpus = world.planted_corpus(200, sub_seed(7, 300))?;
    let cfg = world.config.model.clone().with_mode(FinetuneMode::Full);
    let target_state = steer(&world.base_state, world.primary_danger(), 0.01)?;
    let base = ToyModel::from_states(cfg.clone(), &world.base_state, None)?;
    let target = ToyModel::from_states(cfg, &target_state, None)?;
    let eta = 1e-3;

    let (mut lhs, mut rhs) = (Vec::new(), Vec::new());
    for s in &corpus {
        let (l, r) = taylor_gap(&base, &target, s, eta)?;
        lhs.push(l);
        rhs.push(r);
    }
    let agree = lhs
        .iter()
        .zip(&rhs)
        .filter(|(l, r)| l.signum() == r.signum())
        .count();
    println!("sign agreement {:.3}", agree as f64 / corpus.len() as f64);
    println!(
        "spearman(lhs, rhs) {:.4}",
        spearman(&lhs, &rhs).unwrap_or(f64::NAN)
    );
    Ok(())
}
