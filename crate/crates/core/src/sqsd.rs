//! Sample risk as the projection gap of a sample's one-step update against
//! danger and safety directions.
//!
//! Directions are normalized **per module** here (`V̂_m = V_m / ‖V_m‖`),
//! unlike trajectory projection, which divides by the global norm.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::direction::DirectionSet;
use crate::error::{Error, Result};
use crate::tensor::{frobenius_inner, frobenius_norm};
use crate::toy::corpus::Sample;
use crate::toy::model::ToyModel;
use crate::toy::probe::{sample_update, SampleUpdate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    NoNorm,
    DangerOnly,
    SafetyOnly,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Full,
        Variant::NoNorm,
        Variant::DangerOnly,
        Variant::SafetyOnly,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoNorm => "no_norm",
            Variant::DangerOnly => "danger_only",
            Variant::SafetyOnly => "safety_only",
        }
    }

    fn normalizes(self) -> bool {
        self != Variant::NoNorm
    }

    /// Per-module contribution from the two projections.
    fn gap(self, danger: f64, safety: f64) -> f64 {
        match self {
            Variant::Full | Variant::NoNorm => danger - safety,
            Variant::DangerOnly => danger,
            Variant::SafetyOnly => -safety,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown variant `{s}` (full, no_norm, danger_only, safety_only)"
                ))
            })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModuleBreakdown {
    pub danger_proj: f64,
    pub safety_proj: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskRecord {
    pub sample_id: String,
    pub variant: Variant,
    pub score: f64,
    /// Breakdown under `variant`.
    pub per_module: BTreeMap<String, ModuleBreakdown>,
    pub variant_scores: BTreeMap<Variant, f64>,
    pub update_norms: BTreeMap<String, f64>,
    /// Modules whose update vanished and contributed nothing.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub zero_update_modules: Vec<String>,
    /// Set when the whole update vanished; `score` is then 0.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub degenerate: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub baseline_scores: BTreeMap<String, f64>,
}

struct Projections {
    raw: (f64, f64),
    norm: f64,
}

fn projections(
    update: &SampleUpdate,
    danger: &DirectionSet,
    safety: &DirectionSet,
) -> Result<BTreeMap<String, Projections>> {
    let mut out = BTreeMap::new();
    for (name, dw) in &update.modules {
        let mut raw = [0.0; 2];
        for (slot, dir) in raw.iter_mut().zip([danger, safety]) {
            let v = dir.module(name).ok_or_else(|| {
                Error::ModuleMismatch(format!(
                    "direction `{}` lacks updated module `{name}`",
                    dir.tag()
                ))
            })?;
            let vn = dir.module_norm(name).unwrap_or(0.0);
            *slot = if vn > 0.0 {
                frobenius_inner(dw, v)? / vn
            } else {
                0.0
            };
        }
        out.insert(
            name.clone(),
            Projections {
                raw: (raw[0], raw[1]),
                norm: frobenius_norm(dw),
            },
        );
    }
    Ok(out)
}

fn breakdown(p: &Projections, variant: Variant) -> Option<ModuleBreakdown> {
    let (d, s) = if variant.normalizes() {
        if p.norm == 0.0 {
            return None;
        }
        (p.raw.0 / p.norm, p.raw.1 / p.norm)
    } else {
        p.raw
    };
    Some(ModuleBreakdown {
        danger_proj: d,
        safety_proj: s,
        gap: variant.gap(d, s),
    })
}

/// Scores one update. Fails with a degenerate-sample error when every module
/// update is zero.
pub fn score_sample(
    update: &SampleUpdate,
    danger: &DirectionSet,
    safety: &DirectionSet,
    variant: Variant,
) -> Result<RiskRecord> {
    if update.modules.is_empty() {
        return Err(Error::DegenerateSample("update covers no modules".into()));
    }
    let proj = projections(update, danger, safety)?;
    if proj.values().all(|p| p.norm == 0.0) {
        return Err(Error::DegenerateSample(
            "sample induces a zero update in every module".into(),
        ));
    }
    let zero_update_modules: Vec<String> = proj
        .iter()
        .filter(|(_, p)| p.norm == 0.0)
        .map(|(k, _)| k.clone())
        .collect();
    let total = |v: Variant| {
        proj.values()
            .filter_map(|p| breakdown(p, v))
            .map(|b| b.gap)
            .sum::<f64>()
    };
    let per_module: BTreeMap<String, ModuleBreakdown> = proj
        .iter()
        .filter_map(|(k, p)| breakdown(p, variant).map(|b| (k.clone(), b)))
        .collect();
    Ok(RiskRecord {
        sample_id: String::new(),
        variant,
        score: per_module.values().map(|b| b.gap).sum(),
        per_module,
        variant_scores: Variant::ALL.into_iter().map(|v| (v, total(v))).collect(),
        update_norms: proj.iter().map(|(k, p)| (k.clone(), p.norm)).collect(),
        zero_update_modules,
        degenerate: None,
        init: None,
        baseline_scores: BTreeMap::new(),
    })
}

/// Scores every sample at the initialization `model` (whose adapters define
/// `A₀, B₀`). Degenerate samples are kept with score 0 and a reason.
pub fn score_corpus(
    model: &ToyModel,
    corpus: &[Sample],
    danger: &DirectionSet,
    safety: &DirectionSet,
    eta: f64,
    variant: Variant,
    init_id: Option<&str>,
) -> Result<Vec<RiskRecord>> {
    if corpus.is_empty() {
        return Err(Error::invalid("cannot score an empty corpus"));
    }
    corpus
        .par_iter()
        .map(|sample| {
            let update = sample_update(model, sample, eta)?;
            let mut rec = match score_sample(&update, danger, safety, variant) {
                Ok(r) => r,
                Err(Error::DegenerateSample(reason)) => RiskRecord {
                    sample_id: String::new(),
                    variant,
                    score: 0.0,
                    per_module: BTreeMap::new(),
                    variant_scores: Variant::ALL.into_iter().map(|v| (v, 0.0)).collect(),
                    update_norms: update.modules.keys().map(|k| (k.clone(), 0.0)).collect(),
                    zero_update_modules: update.modules.keys().cloned().collect(),
                    degenerate: Some(reason),
                    init: None,
                    baseline_scores: BTreeMap::new(),
                },
                Err(e) => return Err(e),
            };
            rec.sample_id = sample.id.clone();
            rec.init = init_id.map(str::to_string);
            Ok(rec)
        })
        .collect()
}

pub fn write_records_jsonl<W: Write>(records: &[RiskRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")
            .map_err(|e| Error::io("<records>", e))?;
    }
    Ok(())
}

pub fn read_records_jsonl<R: BufRead>(input: R) -> Result<Vec<RiskRecord>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line.map_err(|e| Error::io("<records>", e))?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::checkpoint::ParameterState;
    use crate::direction::{build_direction, DirectionLabel};
    use crate::tensor::WeightMatrix;

    fn dir(label: DirectionLabel, vals: &[(&str, [f32; 2])]) -> DirectionSet {
        let base = ParameterState::from_modules(
            vals.iter()
                .map(|(k, _)| (k.to_string(), WeightMatrix::zeros(1, 2))),
        );
        let target = ParameterState::from_modules(
            vals.iter()
                .map(|(k, v)| (k.to_string(), WeightMatrix::new(1, 2, v.to_vec()).unwrap())),
        );
        build_direction(&base, &target, label, "t").unwrap()
    }

    fn update(vals: &[(&str, [f32; 2])]) -> SampleUpdate {
        SampleUpdate {
            modules: vals
                .iter()
                .map(|(k, v)| (k.to_string(), WeightMatrix::new(1, 2, v.to_vec()).unwrap()))
                .collect(),
            eta: 1.0,
        }
    }

    #[test]
    fn collinear_danger_orthogonal_safety_scores_module_count() {
        let d = dir(
            DirectionLabel::Danger,
            &[("a", [2.0, 0.0]), ("b", [0.0, 5.0])],
        );
        let s = dir(
            DirectionLabel::Safety,
            &[("a", [0.0, 1.0]), ("b", [3.0, 0.0])],
        );
        let r = score_sample(
            &update(&[("a", [0.3, 0.0]), ("b", [0.0, 7.0])]),
            &d,
            &s,
            Variant::Full,
        )
        .unwrap();
        assert!((r.score - 2.0).abs() < 1e-12);
        let r = score_sample(
            &update(&[("a", [0.0, 0.0]), ("b", [0.0, 0.0])]),
            &d,
            &s,
            Variant::Full,
        );
        assert!(matches!(r, Err(Error::DegenerateSample(_))));
    }

    #[test]
    fn zero_module_is_flagged() {
        let d = dir(
            DirectionLabel::Danger,
            &[("a", [1.0, 0.0]), ("b", [0.0, 1.0])],
        );
        let s = dir(
            DirectionLabel::Safety,
            &[("a", [0.0, 1.0]), ("b", [1.0, 0.0])],
        );
        let r = score_sample(
            &update(&[("a", [0.0, 0.0]), ("b", [0.0, 2.0])]),
            &d,
            &s,
            Variant::Full,
        )
        .unwrap();
        assert_eq!(r.zero_update_modules, vec!["a".to_string()]);
        assert!((r.score - 1.0).abs() < 1e-12);
        assert!(!r.per_module.contains_key("a"));
    }

    #[test]
    fn variants_and_antisymmetry() {
        let d = dir(DirectionLabel::Danger, &[("a", [1.0, 1.0])]);
        let s = dir(DirectionLabel::Safety, &[("a", [1.0, -1.0])]);
        let u = update(&[("a", [3.0, 1.0])]);
        let r = score_sample(&u, &d, &s, Variant::Full).unwrap();
        let n = 10f64.sqrt();
        let dp = 4.0 / 2f64.sqrt() / n;
        let sp = 2.0 / 2f64.sqrt() / n;
        assert!((r.variant_scores[&Variant::Full] - (dp - sp)).abs() < 1e-9);
        assert!((r.variant_scores[&Variant::NoNorm] - (dp - sp) * n).abs() < 1e-6);
        assert!((r.variant_scores[&Variant::DangerOnly] - dp).abs() < 1e-9);
        assert!((r.variant_scores[&Variant::SafetyOnly] + sp).abs() < 1e-9);
        let swapped = score_sample(&u, &s, &d, Variant::Full).unwrap();
        assert_eq!(swapped.score, -r.score);
    }

    #[test]
    fn missing_direction_module_errors() {
        let d = dir(DirectionLabel::Danger, &[("a", [1.0, 1.0])]);
        let s = dir(DirectionLabel::Safety, &[("a", [1.0, -1.0])]);
        let r = score_sample(&update(&[("z", [1.0, 0.0])]), &d, &s, Variant::Full);
        assert!(matches!(r, Err(Error::ModuleMismatch(_))));
    }

    #[test]
    fn variant_names_round_trip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
        }
        assert!("both".parse::<Variant>().is_err());
    }
}
