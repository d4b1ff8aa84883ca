//! Cumulative drift `Δθ_t = θ_t − θ₀` and its projections onto globally
//! normalized directions.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::checkpoint::ParameterState;
use crate::direction::DirectionSet;
use crate::error::{Error, Result};
use crate::judge::Judge;
use crate::tensor::{frobenius_inner, frobenius_norm, WeightMatrix};

pub type ModuleMap = BTreeMap<String, WeightMatrix>;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryPoint {
    pub step: usize,
    /// direction tag -> `⟨Δθ_t, V̂⟩`
    pub projections: BTreeMap<String, f64>,
    pub drift_norm: f64,
    pub judge_score: Option<f64>,
}

pub fn drift(theta_t: &ParameterState, theta_0: &ParameterState) -> Result<ModuleMap> {
    theta_t.diff(theta_0)
}

pub fn drift_norm(drift: &ModuleMap) -> f64 {
    drift
        .values()
        .map(|m| {
            let n = frobenius_norm(m);
            n * n
        })
        .sum::<f64>()
        .sqrt()
}

/// `Σ_m ⟨Δθ_m, V_m⟩ / ‖V‖` — inner product with the globally normalized
/// direction. Drift and direction must cover the same modules.
pub fn project(drift: &ModuleMap, v: &DirectionSet) -> Result<f64> {
    if drift.len() != v.modules().len() || drift.keys().zip(v.modules().keys()).any(|(a, b)| a != b)
    {
        return Err(Error::ModuleMismatch(format!(
            "drift modules {:?} vs direction `{}` modules {:?}",
            drift.keys().collect::<Vec<_>>(),
            v.tag(),
            v.modules().keys().collect::<Vec<_>>()
        )));
    }
    let mut acc = 0.0;
    for (name, d) in drift {
        acc += frobenius_inner(d, &v.modules()[name])?;
    }
    Ok(acc / v.global_norm())
}

/// Options for [`trace`].
#[derive(Debug, Clone)]
pub struct TraceOptions {
    /// Judge every `judge_stride`-th checkpoint (the first is always judged).
    pub judge_stride: usize,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { judge_stride: 1 }
    }
}

/// Streams `(step, state)` checkpoints and emits one point per checkpoint.
///
/// Only `base` and the direction sets stay resident; each checkpoint is
/// dropped once projected.
pub fn trace<I>(
    checkpoints: I,
    base: &ParameterState,
    directions: &[DirectionSet],
    judge: Option<&dyn Judge>,
    opts: &TraceOptions,
) -> Result<Vec<TrajectoryPoint>>
where
    I: IntoIterator<Item = Result<(usize, ParameterState)>>,
{
    if opts.judge_stride == 0 {
        return Err(Error::invalid("judge stride must be positive"));
    }
    let mut points: Vec<TrajectoryPoint> = Vec::new();
    for (i, item) in checkpoints.into_iter().enumerate() {
        let (step, state) = item?;
        if let Some(prev) = points.last() {
            if step <= prev.step {
                return Err(Error::invalid(format!(
                    "checkpoint steps must increase strictly: {} then {step}",
                    prev.step
                )));
            }
        }
        let d = drift(&state, base)?;
        let mut projections = BTreeMap::new();
        for v in directions {
            let restricted = restrict_to(&d, v)?;
            projections.insert(v.tag(), project(&restricted, v)?);
        }
        let judge_score = match judge {
            Some(j) if i % opts.judge_stride == 0 => Some(j.score(&state)?),
            _ => None,
        };
        points.push(TrajectoryPoint {
            step,
            projections,
            drift_norm: drift_norm(&d),
            judge_score,
        });
    }
    if points.is_empty() {
        return Err(Error::invalid("trace needs at least one checkpoint"));
    }
    Ok(points)
}

/// Drift restricted to the modules a direction covers.
pub fn restrict_to(drift: &ModuleMap, v: &DirectionSet) -> Result<ModuleMap> {
    v.module_names()
        .map(|name| {
            drift
                .get(name)
                .map(|m| (name.to_string(), m.clone()))
                .ok_or_else(|| Error::ModuleMismatch(format!("drift lacks module `{name}`")))
        })
        .collect()
}

/// Writes `step, p_<tag>..., drift_norm, judge_score` with a header row.
pub fn write_trajectory_csv<W: Write>(points: &[TrajectoryPoint], out: W) -> Result<()> {
    let tags: Vec<String> = points
        .first()
        .map(|p| p.projections.keys().cloned().collect())
        .unwrap_or_default();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["step".to_string()];
    header.extend(tags.iter().map(|t| format!("p_{t}")));
    header.push("drift_norm".into());
    header.push("judge_score".into());
    w.write_record(&header)?;
    for p in points {
        let mut row = vec![p.step.to_string()];
        for t in &tags {
            row.push(
                p.projections
                    .get(t)
                    .map(|v| v.to_string())
                    .unwrap_or_default(),
            );
        }
        row.push(p.drift_norm.to_string());
        row.push(p.judge_score.map(|v| v.to_string()).unwrap_or_default());
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
