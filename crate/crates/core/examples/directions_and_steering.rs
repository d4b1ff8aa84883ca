//! Builds the toy world, inspects its danger and safety directions, and
//! sweeps the judge along `θ₀ + αV_danger`.

use driftrisk::direction::steer;
use driftrisk::tensor::frobenius_inner;
use driftrisk::toy::world::{ToyWorld, WorldConfig};

fn main() -> driftrisk::Result<()> {
    let world = ToyWorld::build(WorldConfig::seeded(7))?;
    for v in world.danger.iter().chain(&world.safety) {
        println!("{:<32} ||V|| = {:.4}", v.tag(), v.global_norm());
    }

    let (d, s) = (world.primary_danger(), world.primary_safety());
    let mut dot = 0.0;
    for name in d.module_names() {
        dot += frobenius_inner(d.module(name).unwrap(), s.module(name).unwrap())?;
    }
    println!(
        "cos(danger, safety) = {:.3}",
        dot / (d.global_norm() * s.global_norm())
    );

    println!("{:>6} {:>9} {:>6}", "alpha", "safety", "asr");
    for i in -2..=10 {
        let alpha = i as f64 / 10.0;
        let r = world.judge.evaluate(&steer(&world.base_state, d, alpha)?)?;
        println!("{alpha:>6.1} {:>9.4} {:>6.3}", r.safety, r.asr);
    }
    Ok(())
}
