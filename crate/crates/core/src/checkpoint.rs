//! Typed parameter and adapter states on top of the safetensors container.
//!
//! Naming scheme: dense weights are stored as `<module>.weight`, adapters as
//! `<module>.lora_A.weight` / `<module>.lora_B.weight`. Module maps are
//! `BTreeMap`s, so iteration order is lexicographic by module name and that
//! order is the canonical flattening order everywhere else in the crate.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::safetensors::{read_safetensors, write_safetensors, Dtype, RawTensor, TensorTable};
use crate::tensor::{axpy, materialize, LoraDelta, WeightMatrix};

/// Options applied when mapping tensor names to module names.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct LoadOptions {
    /// Removed from the front of every tensor name before matching.
    #[serde(default)]
    pub strip_prefix: Option<String>,
    /// Adapter scale used when the file carries no `lora_alpha` metadata.
    #[serde(default)]
    pub lora_alpha: Option<f64>,
}

impl LoadOptions {
    fn strip<'a>(&self, name: &'a str) -> &'a str {
        match &self.strip_prefix {
            Some(p) => name.strip_prefix(p.as_str()).unwrap_or(name),
            None => name,
        }
    }
}

/// Weights of every module at one checkpoint.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterState {
    pub modules: BTreeMap<String, WeightMatrix>,
    pub meta: BTreeMap<String, String>,
}

impl ParameterState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_modules(modules: impl IntoIterator<Item = (String, WeightMatrix)>) -> Self {
        Self {
            modules: modules.into_iter().collect(),
            meta: BTreeMap::new(),
        }
    }

    pub fn get(&self, module: &str) -> Option<&WeightMatrix> {
        self.modules.get(module)
    }

    pub fn module_names(&self) -> impl Iterator<Item = &str> {
        self.modules.keys().map(String::as_str)
    }

    pub fn with_meta(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.meta.insert(key.into(), value.into());
        self
    }

    pub fn num_params(&self) -> usize {
        self.modules.values().map(WeightMatrix::len).sum()
    }

    /// Keeps only the named modules; unknown names are a mismatch.
    pub fn restrict<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let mut modules = BTreeMap::new();
        for name in names {
            let m = self
                .modules
                .get(name)
                .ok_or_else(|| Error::ModuleMismatch(format!("module `{name}` not in state")))?;
            modules.insert(name.to_string(), m.clone());
        }
        Ok(Self {
            modules,
            meta: self.meta.clone(),
        })
    }

    /// Fails unless both states hold exactly the same module names and shapes.
    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.modules.len() != other.modules.len()
            || self
                .modules
                .keys()
                .zip(other.modules.keys())
                .any(|(a, b)| a != b)
        {
            let ours: Vec<_> = self.module_names().collect();
            let theirs: Vec<_> = other.module_names().collect();
            return Err(Error::ModuleMismatch(format!("{ours:?} vs {theirs:?}")));
        }
        for (name, (a, b)) in self
            .modules
            .iter()
            .zip(other.modules.values())
            .map(|((n, a), b)| (n, (a, b)))
        {
            if a.shape() != b.shape() {
                return Err(Error::Structure {
                    module: name.clone(),
                    reason: format!("shape {:?} vs {:?}", a.shape(), b.shape()),
                });
            }
        }
        Ok(())
    }

    /// Module-wise `self - other` over identical module sets.
    pub fn diff(&self, other: &Self) -> Result<BTreeMap<String, WeightMatrix>> {
        self.check_compatible(other)?;
        self.modules
            .iter()
            .map(|(name, w)| Ok((name.clone(), w.sub(&other.modules[name])?)))
            .collect()
    }

    /// SHA-256 over module names, shapes and value bits in canonical order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for (name, w) in &self.modules {
            h.update(name.as_bytes());
            h.update([0u8]);
            h.update((w.rows() as u64).to_le_bytes());
            h.update((w.cols() as u64).to_le_bytes());
            for v in w.values() {
                h.update(v.to_bits().to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }

    pub fn to_table(&self, dtype: Dtype) -> TensorTable {
        let mut table = TensorTable::new();
        for (name, w) in &self.modules {
            table.insert(format!("{name}.weight"), RawTensor::from_matrix(w, dtype));
        }
        table.metadata = self.meta.clone();
        table
    }

    pub fn from_table(table: &TensorTable, opts: &LoadOptions) -> Result<Self> {
        let mut modules = BTreeMap::new();
        for (name, tensor) in &table.tensors {
            let stripped = opts.strip(name);
            let module = stripped
                .strip_suffix(".weight")
                .ok_or_else(|| Error::Structure {
                    module: name.clone(),
                    reason: "tensor name does not follow `<module>.weight`".into(),
                })?;
            if modules
                .insert(module.to_string(), tensor.to_matrix()?)
                .is_some()
            {
                return Err(Error::Structure {
                    module: module.to_string(),
                    reason: "duplicate module".into(),
                });
            }
        }
        Ok(Self {
            modules,
            meta: table.metadata.clone(),
        })
    }
}

/// A set of LoRA adapters keyed by the module they wrap.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdapterState {
    pub modules: BTreeMap<String, LoraDelta>,
}

impl AdapterState {
    pub fn get(&self, module: &str) -> Option<&LoraDelta> {
        self.modules.get(module)
    }

    pub fn to_table(&self, dtype: Dtype) -> TensorTable {
        let mut table = TensorTable::new();
        let mut alphas = self.modules.values().map(|d| d.scale_alpha);
        let first = alphas.next();
        let uniform = first.is_some_and(|a| alphas.all(|b| b == a));
        if let (true, Some(a)) = (uniform, first) {
            table.metadata.insert("lora_alpha".into(), format_real(a));
        }
        for (name, d) in &self.modules {
            table.insert(
                format!("{name}.lora_A.weight"),
                RawTensor::from_matrix(&d.a, dtype),
            );
            table.insert(
                format!("{name}.lora_B.weight"),
                RawTensor::from_matrix(&d.b, dtype),
            );
            if !uniform {
                table
                    .metadata
                    .insert(format!("{name}.lora_alpha"), format_real(d.scale_alpha));
            }
        }
        table
    }

    pub fn from_table(table: &TensorTable, opts: &LoadOptions) -> Result<Self> {
        let mut a_parts: BTreeMap<String, WeightMatrix> = BTreeMap::new();
        let mut b_parts: BTreeMap<String, WeightMatrix> = BTreeMap::new();
        for (name, tensor) in &table.tensors {
            let stripped = opts.strip(name);
            let (module, slot) = if let Some(m) = stripped.strip_suffix(".lora_A.weight") {
                (m, &mut a_parts)
            } else if let Some(m) = stripped.strip_suffix(".lora_B.weight") {
                (m, &mut b_parts)
            } else {
                return Err(Error::Structure {
                    module: name.clone(),
                    reason: "tensor name is neither `.lora_A.weight` nor `.lora_B.weight`".into(),
                });
            };
            if slot
                .insert(module.to_string(), tensor.to_matrix()?)
                .is_some()
            {
                return Err(Error::Structure {
                    module: module.to_string(),
                    reason: "duplicate module".into(),
                });
            }
        }
        for name in b_parts.keys() {
            if !a_parts.contains_key(name) {
                return Err(Error::Structure {
                    module: name.clone(),
                    reason: "lora_B without matching lora_A".into(),
                });
            }
        }
        let global_alpha = match table.metadata.get("lora_alpha") {
            Some(s) => Some(parse_real(s, "lora_alpha")?),
            None => opts.lora_alpha,
        };
        let mut modules = BTreeMap::new();
        for (name, a) in a_parts {
            let b = b_parts.remove(&name).ok_or_else(|| Error::Structure {
                module: name.clone(),
                reason: "lora_A without matching lora_B".into(),
            })?;
            let alpha = match table.metadata.get(&format!("{name}.lora_alpha")) {
                Some(s) => parse_real(s, "lora_alpha")?,
                None => global_alpha.ok_or_else(|| Error::Structure {
                    module: name.clone(),
                    reason: "no lora_alpha in metadata or load options".into(),
                })?,
            };
            let delta = LoraDelta::new(a, b, alpha).map_err(|e| Error::Structure {
                module: name.clone(),
                reason: e.to_string(),
            })?;
            modules.insert(name, delta);
        }
        let mixed_ok = table
            .metadata
            .get("mixed_rank")
            .is_some_and(|v| v == "true");
        let mut ranks = modules.values().map(|d| d.rank);
        if let Some(r0) = ranks.next() {
            if !mixed_ok && ranks.any(|r| r != r0) {
                return Err(Error::Structure {
                    module: "*".into(),
                    reason: "adapter ranks differ across modules without `mixed_rank` metadata"
                        .into(),
                });
            }
        }
        Ok(Self { modules })
    }
}

fn format_real(v: f64) -> String {
    format!("{v}")
}

fn parse_real(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::invalid(format!("metadata `{what}` is not a number: {s}")))
}

pub fn load_parameter_state(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<ParameterState> {
    ParameterState::from_table(&read_safetensors(path)?, opts)
}

pub fn load_adapter(path: impl AsRef<Path>, opts: &LoadOptions) -> Result<AdapterState> {
    AdapterState::from_table(&read_safetensors(path)?, opts)
}

pub fn save_parameter_state(state: &ParameterState, path: impl AsRef<Path>) -> Result<()> {
    write_safetensors(&state.to_table(Dtype::F32), path)
}

pub fn save_adapter(adapter: &AdapterState, path: impl AsRef<Path>) -> Result<()> {
    write_safetensors(&adapter.to_table(Dtype::F32), path)
}

/// Merges every adapter into its base weight: `W' = W + (alpha / r) * B * A`.
pub fn apply_adapter(base: &ParameterState, adapter: &AdapterState) -> Result<ParameterState> {
    let mut out = base.clone();
    for (name, delta) in &adapter.modules {
        let w = out.modules.get_mut(name).ok_or_else(|| Error::Structure {
            module: name.clone(),
            reason: "adapter module missing from base state".into(),
        })?;
        if w.shape() != delta.target_shape() {
            return Err(Error::Structure {
                module: name.clone(),
                reason: format!(
                    "adapter shape {:?} does not match base {:?}",
                    delta.target_shape(),
                    w.shape()
                ),
            });
        }
        *w = axpy(1.0, &materialize(delta)?, w)?;
    }
    Ok(out)
}
