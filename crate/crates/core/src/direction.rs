//! Safety and danger directions as checkpoint displacements.
//!
//! A [`DirectionSet`] carries two normalizations on purpose:
//!
//! * the **global** norm `‖concat(V_m)‖`, used when projecting whole-model
//!   drift (trajectories, drift-enhanced sensitivity);
//! * **per-module** norms `‖V_m‖`, used by the sample scorer, which
//!   normalizes each module's direction independently.
//!
//! Mixing the two up silently changes what a projection means, so both are
//! computed once here and exposed under distinct names.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::checkpoint::{LoadOptions, ParameterState};
use crate::error::{Error, Result};
use crate::safetensors::{read_safetensors, write_safetensors, Dtype};
use crate::tensor::{axpy, frobenius_norm, WeightMatrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DirectionLabel {
    Safety,
    Danger,
}

impl fmt::Display for DirectionLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DirectionLabel::Safety => "safety",
            DirectionLabel::Danger => "danger",
        })
    }
}

impl FromStr for DirectionLabel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "safety" => Ok(DirectionLabel::Safety),
            "danger" => Ok(DirectionLabel::Danger),
            other => Err(Error::invalid(format!(
                "direction label must be `safety` or `danger`, got `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DirectionSet {
    pub label: DirectionLabel,
    /// Free-form provenance, e.g. `beaver-unsafe`.
    pub source_tag: String,
    modules: BTreeMap<String, WeightMatrix>,
    global_norm: f64,
    per_module_norms: BTreeMap<String, f64>,
}

/// JSON sidecar stored next to a serialized direction.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionSidecar {
    pub label: DirectionLabel,
    pub source_tag: String,
    pub global_norm: f64,
    pub per_module_norms: BTreeMap<String, f64>,
}

impl DirectionSet {
    pub fn from_modules(
        label: DirectionLabel,
        source_tag: impl Into<String>,
        modules: BTreeMap<String, WeightMatrix>,
    ) -> Result<Self> {
        let source_tag = source_tag.into();
        let per_module_norms: BTreeMap<String, f64> = modules
            .iter()
            .map(|(n, v)| (n.clone(), frobenius_norm(v)))
            .collect();
        let global_norm = per_module_norms.values().map(|n| n * n).sum::<f64>().sqrt();
        if global_norm == 0.0 {
            return Err(Error::DegenerateDirection(format!("{label}/{source_tag}")));
        }
        Ok(Self {
            label,
            source_tag,
            modules,
            global_norm,
            per_module_norms,
        })
    }

    /// Identifier used for projection columns, e.g. `danger:beaver-unsafe`.
    pub fn tag(&self) -> String {
        if self.source_tag.is_empty() {
            self.label.to_string()
        } else {
            format!("{}:{}", self.label, self.source_tag)
        }
    }

    pub fn modules(&self) -> &BTreeMap<String, WeightMatrix> {
        &self.modules
    }

    pub fn module(&self, name: &str) -> Option<&WeightMatrix> {
        self.modules.get(name)
    }

    pub fn module_names(&self) -> impl Iterator<Item = &str> {
        self.modules.keys().map(String::as_str)
    }

    /// `‖V‖` over the concatenation of every module.
    pub fn global_norm(&self) -> f64 {
        self.global_norm
    }

    pub fn per_module_norms(&self) -> &BTreeMap<String, f64> {
        &self.per_module_norms
    }

    pub fn module_norm(&self, name: &str) -> Option<f64> {
        self.per_module_norms.get(name).copied()
    }

    /// `V_m / ‖V‖` (global normalization).
    pub fn globally_normalized(&self, name: &str) -> Option<WeightMatrix> {
        self.modules
            .get(name)
            .map(|v| v.scaled(1.0 / self.global_norm))
    }

    /// `V_m / ‖V_m‖`; a zero-norm module direction stays zero.
    pub fn module_normalized(&self, name: &str) -> Option<WeightMatrix> {
        let v = self.modules.get(name)?;
        let n = self.per_module_norms[name];
        Some(if n == 0.0 {
            v.clone()
        } else {
            v.scaled(1.0 / n)
        })
    }

    pub fn negated(&self) -> Self {
        let modules = self
            .modules
            .iter()
            .map(|(n, v)| (n.clone(), v.scaled(-1.0)))
            .collect();
        Self {
            modules,
            ..self.clone()
        }
    }

    /// Keeps only the named modules.
    pub fn restrict<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut modules = BTreeMap::new();
        for name in names {
            let v = self
                .modules
                .get(name)
                .ok_or_else(|| Error::ModuleMismatch(format!("direction lacks module `{name}`")))?;
            modules.insert(name.to_string(), v.clone());
        }
        Self::from_modules(self.label, self.source_tag.clone(), modules)
    }

    pub fn sidecar(&self) -> DirectionSidecar {
        DirectionSidecar {
            label: self.label,
            source_tag: self.source_tag.clone(),
            global_norm: self.global_norm,
            per_module_norms: self.per_module_norms.clone(),
        }
    }

    /// Writes `<path>` (safetensors) and `<path>.json` (sidecar).
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let state = ParameterState::from_modules(self.modules.clone());
        write_safetensors(&state.to_table(Dtype::F32), path)?;
        let sidecar_path = sidecar_path(path);
        let json = serde_json::to_string_pretty(&self.sidecar())?;
        std::fs::write(&sidecar_path, json).map_err(|e| Error::io(sidecar_path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let sidecar_path = sidecar_path(path);
        let text =
            std::fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
        let sidecar: DirectionSidecar = serde_json::from_str(&text)?;
        let state = ParameterState::from_table(&read_safetensors(path)?, &LoadOptions::default())?;
        let set = Self::from_modules(sidecar.label, sidecar.source_tag, state.modules)?;
        let rel = (set.global_norm - sidecar.global_norm).abs() / sidecar.global_norm.max(1e-30);
        if rel > 1e-5 {
            return Err(Error::invalid(format!(
                "sidecar global norm {} disagrees with tensors ({})",
                sidecar.global_norm, set.global_norm
            )));
        }
        Ok(set)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// `V_m = target_m - base_m` for every module.
pub fn build_direction(
    base: &ParameterState,
    target: &ParameterState,
    label: DirectionLabel,
    source_tag: impl Into<String>,
) -> Result<DirectionSet> {
    DirectionSet::from_modules(label, source_tag, target.diff(base)?)
}

/// `θ(α) = θ₀ + α·V` on every direction module; other modules are copied.
/// Uses the unnormalized direction.
pub fn steer(base: &ParameterState, v: &DirectionSet, alpha: f64) -> Result<ParameterState> {
    let mut out = base.clone();
    for (name, dir) in &v.modules {
        let w = out
            .modules
            .get_mut(name)
            .ok_or_else(|| Error::ModuleMismatch(format!("base state lacks module `{name}`")))?;
        *w = axpy(alpha, dir, w)?;
    }
    out.meta.insert("steer_alpha".into(), format!("{alpha}"));
    out.meta.insert("steer_direction".into(), v.tag());
    Ok(out)
}
