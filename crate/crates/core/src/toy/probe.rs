//! Sample-induced one-step updates and the first-order loss/displacement link.

use std::collections::BTreeMap;

use super::corpus::Sample;
use super::linalg::{dot, Mat};
use super::model::{layer_name, FinetuneMode, ToyModel};
use crate::error::{Error, Result};
use crate::tensor::WeightMatrix;

/// Linearized effective-weight update of every adapted module.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleUpdate {
    pub modules: BTreeMap<String, WeightMatrix>,
    pub eta: f64,
}

/// `ΔW(z)` per adapted module in f64.
///
/// LoRA mode: `-η (α/r) (B₀ ∇A + ∇B A₀)`. Full mode: `-η ∇W`.
pub fn sample_update_f64(
    model: &ToyModel,
    sample: &Sample,
    eta: f64,
) -> Result<BTreeMap<String, Mat>> {
    if !(eta > 0.0) || !eta.is_finite() {
        return Err(Error::invalid(format!(
            "eta {eta} must be positive and finite"
        )));
    }
    let g = model.grads(sample)?;
    let s = model.config().scaling();
    let mut out = BTreeMap::new();
    for l in 0..model.config().depth {
        let name = layer_name(l);
        let dw = match model.mode() {
            FinetuneMode::Lora => {
                let (ga, gb) = &g.lora[&name];
                let ad = &model.adapters()[l];
                let mut m = ad.b.matmul(ga);
                m.add_scaled(1.0, &gb.matmul(&ad.a));
                m.scaled(-eta * s)
            }
            FinetuneMode::Full => g.effective[&name].scaled(-eta),
        };
        out.insert(name, dw);
    }
    Ok(out)
}

pub fn sample_update(model: &ToyModel, sample: &Sample, eta: f64) -> Result<SampleUpdate> {
    let modules = sample_update_f64(model, sample, eta)?
        .into_iter()
        .map(|(k, m)| Ok((k, m.to_weight()?)))
        .collect::<Result<_>>()?;
    Ok(SampleUpdate { modules, eta })
}

/// `‖(α/r)(B₀+ΔB)(A₀+ΔA) − (α/r)B₀A₀ − ΔW(z)‖` summed in quadrature over
/// modules, with `ΔA, ΔB` the exact one-step GD factors.
pub fn linearization_residual(model: &ToyModel, sample: &Sample, eta: f64) -> Result<f64> {
    if model.mode() != FinetuneMode::Lora {
        return Err(Error::invalid("linearization residual needs LoRA mode"));
    }
    let g = model.grads(sample)?;
    let lin = sample_update_f64(model, sample, eta)?;
    let s = model.config().scaling();
    let mut acc = 0.0;
    for (l, ad) in model.adapters().iter().enumerate() {
        let name = layer_name(l);
        let (ga, gb) = &g.lora[&name];
        let mut a1 = ad.a.clone();
        a1.add_scaled(-eta, ga);
        let mut b1 = ad.b.clone();
        b1.add_scaled(-eta, gb);
        let mut r = b1.matmul(&a1).scaled(s);
        r.add_scaled(-s, &ad.b.matmul(&ad.a));
        r.add_scaled(-1.0, &lin[&name]);
        acc += r.dot(&r);
    }
    Ok(acc.sqrt())
}

/// `(lhs, rhs)` with `lhs = η [L(z, θ_ref) − L(z, θ_target)]` and
/// `rhs = ⟨θ′ − θ_ref, θ_target − θ_ref⟩`, `θ′` the one-step GD state. Both
/// live in the trainable parameter space of `model_ref`.
pub fn taylor_gap(
    model_ref: &ToyModel,
    model_target: &ToyModel,
    sample: &Sample,
    eta: f64,
) -> Result<(f64, f64)> {
    if model_ref.config() != model_target.config() {
        return Err(Error::invalid("taylor_gap needs matching architectures"));
    }
    let g = model_ref.grads(sample)?;
    let step: Vec<f64> = model_ref.flat_grad(&g).iter().map(|x| -eta * x).collect();
    let displacement: Vec<f64> = model_target
        .trainable_vector()
        .iter()
        .zip(model_ref.trainable_vector())
        .map(|(t, r)| t - r)
        .collect();
    let lhs = eta * (model_ref.loss(sample)? - model_target.loss(sample)?);
    Ok((lhs, dot(&step, &displacement)))
}
