//! Directional sensitivity: how fast the judge score moves per unit of
//! movement along a direction, and selection of high-sensitivity states.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint::ParameterState;
use crate::direction::{steer, DirectionLabel, DirectionSet};
use crate::error::{Error, Result};
use crate::judge::Judge;
use crate::trajectory::{drift, project, restrict_to};

pub const DEFAULT_DELTA: f64 = 0.1;
pub const DEFAULT_EPS: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileKind {
    LinearPath,
    DriftEnhanced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    /// Steering `α` for linear paths, checkpoint step `t` for drift profiles.
    pub position: f64,
    pub ds: f64,
    /// `(judge_hi, judge_lo)`: judge at `α+δ, α−δ` or at `t+a, t`.
    pub judge_scores_used: (f64, f64),
    /// `(proj_hi, proj_lo)` for drift profiles.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub projections_used: Option<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedPoint {
    pub position: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensitivityProfile {
    pub kind: ProfileKind,
    pub direction: String,
    pub label: DirectionLabel,
    pub points: Vec<ProfilePoint>,
    pub excluded: Vec<ExcludedPoint>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedState {
    pub rank: usize,
    pub position: f64,
    pub ds: f64,
}

/// `[J(θ₀ + (α+δ)V) − J(θ₀ + (α−δ)V)] / 2δ`
pub fn ds_linear(
    base: &ParameterState,
    v: &DirectionSet,
    alpha: f64,
    delta: f64,
    judge: &dyn Judge,
) -> Result<f64> {
    Ok(linear_point(base, v, alpha, delta, judge)?.ds)
}

fn linear_point(
    base: &ParameterState,
    v: &DirectionSet,
    alpha: f64,
    delta: f64,
    judge: &dyn Judge,
) -> Result<ProfilePoint> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("delta {delta} must be positive")));
    }
    let hi = judge.score(&steer(base, v, alpha + delta)?)?;
    let lo = judge.score(&steer(base, v, alpha - delta)?)?;
    Ok(ProfilePoint {
        position: alpha,
        ds: (hi - lo) / (2.0 * delta),
        judge_scores_used: (hi, lo),
        projections_used: None,
    })
}

/// Linear-path profile over `alphas`, evaluated in parallel and assembled in
/// input order.
pub fn linear_profile(
    base: &ParameterState,
    v: &DirectionSet,
    alphas: &[f64],
    delta: f64,
    judge: &dyn Judge,
) -> Result<SensitivityProfile> {
    let points = alphas
        .par_iter()
        .map(|&a| linear_point(base, v, a, delta, judge))
        .collect::<Result<Vec<_>>>()?;
    Ok(SensitivityProfile {
        kind: ProfileKind::LinearPath,
        direction: v.tag(),
        label: v.label,
        points,
        excluded: Vec::new(),
    })
}

/// Outcome of one drift-enhanced slope.
#[derive(Debug, Clone, PartialEq)]
pub enum DriftSlope {
    Point(ProfilePoint),
    Excluded { denominator: f64 },
}

/// `[J(θ_{t+a}) − J(θ_t)] / [⟨θ_{t+a} − θ₀, V̂⟩ − ⟨θ_t − θ₀, V̂⟩]`. A
/// denominator with `|·| ≤ eps` yields [`DriftSlope::Excluded`].
pub fn ds_drift(
    theta_t: (usize, &ParameterState),
    theta_ta: (usize, &ParameterState),
    base: &ParameterState,
    v: &DirectionSet,
    judge: &dyn Judge,
    eps: f64,
) -> Result<DriftSlope> {
    let p_lo = project(&restrict_to(&drift(theta_t.1, base)?, v)?, v)?;
    let p_hi = project(&restrict_to(&drift(theta_ta.1, base)?, v)?, v)?;
    let denominator = p_hi - p_lo;
    if denominator.abs() <= eps {
        return Ok(DriftSlope::Excluded { denominator });
    }
    let lo = judge.score(theta_t.1)?;
    let hi = judge.score(theta_ta.1)?;
    Ok(DriftSlope::Point(ProfilePoint {
        position: theta_t.0 as f64,
        ds: (hi - lo) / denominator,
        judge_scores_used: (hi, lo),
        projections_used: Some((p_hi, p_lo)),
    }))
}

/// Drift-enhanced profile over checkpoint pairs `(t, t + interval)`.
pub fn drift_profile(
    checkpoints: &[(usize, ParameterState)],
    base: &ParameterState,
    v: &DirectionSet,
    interval: usize,
    judge: &dyn Judge,
    eps: f64,
) -> Result<SensitivityProfile> {
    if interval == 0 {
        return Err(Error::invalid("drift interval must be positive"));
    }
    let pairs: Vec<(usize, usize)> = checkpoints
        .iter()
        .enumerate()
        .filter_map(|(i, (t, _))| {
            checkpoints
                .iter()
                .position(|(s, _)| *s == t + interval)
                .map(|j| (i, j))
        })
        .collect();
    let slopes = pairs
        .par_iter()
        .map(|&(i, j)| {
            let (ti, si) = &checkpoints[i];
            let (tj, sj) = &checkpoints[j];
            Ok((*ti, ds_drift((*ti, si), (*tj, sj), base, v, judge, eps)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut points = Vec::new();
    let mut excluded = Vec::new();
    for (t, s) in slopes {
        match s {
            DriftSlope::Point(p) => points.push(p),
            DriftSlope::Excluded { denominator } => excluded.push(ExcludedPoint {
                position: t as f64,
                reason: format!("projection change {denominator:e} within eps {eps:e}"),
            }),
        }
    }
    if !excluded.is_empty() {
        tracing::warn!(count = excluded.len(), direction = %v.tag(), "excluded near-zero-denominator points");
    }
    Ok(SensitivityProfile {
        kind: ProfileKind::DriftEnhanced,
        direction: v.tag(),
        label: v.label,
        points,
        excluded,
    })
}

/// Top-`k` positions: descending `ds` for safety directions, ascending for
/// danger directions; ties go to the smaller position.
pub fn select_init(profile: &SensitivityProfile, k: usize) -> Result<Vec<RankedState>> {
    if profile.points.is_empty() {
        return Err(Error::invalid(format!(
            "profile for `{}` has no valid points",
            profile.direction
        )));
    }
    if k == 0 {
        return Err(Error::invalid("k must be positive"));
    }
    let mut pts: Vec<&ProfilePoint> = profile.points.iter().collect();
    pts.sort_by(|a, b| {
        let by_ds = match profile.label {
            DirectionLabel::Safety => b.ds.total_cmp(&a.ds),
            DirectionLabel::Danger => a.ds.total_cmp(&b.ds),
        };
        by_ds.then(a.position.total_cmp(&b.position))
    });
    Ok(pts
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, p)| RankedState {
            rank: i + 1,
            position: p.position,
            ds: p.ds,
        })
        .collect())
}

/// `position, ds, judge_hi, judge_lo[, proj_hi, proj_lo]` with a header row.
pub fn write_profile_csv<W: Write>(profile: &SensitivityProfile, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let drift = profile.kind == ProfileKind::DriftEnhanced;
    let mut header = vec!["position", "ds", "judge_hi", "judge_lo"];
    if drift {
        header.extend(["proj_hi", "proj_lo"]);
    }
    w.write_record(&header)?;
    for p in &profile.points {
        let mut row = vec![
            p.position.to_string(),
            p.ds.to_string(),
            p.judge_scores_used.0.to_string(),
            p.judge_scores_used.1.to_string(),
        ];
        if drift {
            let (h, l) = p.projections_used.unwrap_or((f64::NAN, f64::NAN));
            row.push(h.to_string());
            row.push(l.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
