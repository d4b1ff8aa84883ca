//! Writes a LoRA adapter to safetensors, reads it back, and merges it into a
//! base state.

use driftrisk::checkpoint::{
    apply_adapter, load_adapter, save_adapter, AdapterState, LoadOptions, ParameterState,
};
use driftrisk::safetensors::read_safetensors;
use driftrisk::tensor::{frobenius_norm, LoraDelta, WeightMatrix};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("driftrisk-safetensors-io");
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("adapter.safetensors");

    let a = WeightMatrix::from_rows(&[&[1.0, 0.0, 0.5], &[0.0, 1.0, -0.5]])?;
    let b = WeightMatrix::from_rows(&[&[0.2, 0.0], &[0.0, 0.1], &[0.3, 0.3]])?;
    let adapter = AdapterState {
        modules: [("layers.0.fc".to_string(), LoraDelta::new(a, b, 4.0)?)].into(),
    };
    save_adapter(&adapter, &path)?;

    let table = read_safetensors(&path)?;
    for (name, t) in &table.tensors {
        println!("{name:<28} {:?} {}", t.shape, t.data.dtype().as_str());
    }
    println!("metadata: {:?}", table.metadata);

    let back = load_adapter(&path, &LoadOptions::default())?;
    assert_eq!(back, adapter);

    let base =
        ParameterState::from_modules([("layers.0.fc".to_string(), WeightMatrix::zeros(3, 3))]);
    let merged = apply_adapter(&base, &back)?;
    println!(
        "||(alpha/r) BA||_F = {:.4}",
        frobenius_norm(merged.get("layers.0.fc").unwrap())
    );
    Ok(())
}
