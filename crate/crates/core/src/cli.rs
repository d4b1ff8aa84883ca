//! Command-line front end.
//!
//! Each subcommand resolves its settings from an optional JSON file (`--config`)
//! overlaid with flags, checks them, runs, and writes a manifest next to its
//! primary output. A manifest is itself a valid `--config` file.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};

use crate::checkpoint::{
    apply_adapter, load_adapter, load_parameter_state, save_parameter_state, LoadOptions,
    ParameterState,
};
use crate::direction::{build_direction, sidecar_path, steer, DirectionLabel, DirectionSet};
use crate::error::Error;
use crate::eval::{partition, render_table, FinetuneEvaluator};
use crate::harness::{
    drift_checkpoints, eval_train, ranking_run, trace_world, transfer_run, DriftRunConfig,
    RankingConfig, TransferConfig,
};
use crate::judge::CachedJudge;
use crate::sensitivity::{
    drift_profile, linear_profile, select_init, write_profile_csv, SensitivityProfile,
};
use crate::sqsd::{read_records_jsonl, score_corpus, write_records_jsonl, Variant};
use crate::stats::spearman;
use crate::toy::corpus::{load_corpus, save_corpus, Sample};
use crate::toy::judge::SyntheticJudge;
use crate::toy::model::{FinetuneMode, ToyConfig, ToyModel};
use crate::toy::probe::taylor_gap;
use crate::toy::train::{Optimizer, TrainConfig};
use crate::toy::world::{sub_seed, ToyWorld, WorldConfig};
use crate::trajectory::{trace, write_trajectory_csv, TraceOptions};

pub const WORKERS_ENV: &str = "DRIFTRISK_WORKERS";
const DEFAULT_SEED: u64 = 7;

#[derive(Parser, Debug)]
#[command(
    name = "driftrisk",
    version,
    about = "Parameter drift and sample risk scoring against danger/safety directions"
)]
pub struct Cli {
    /// JSON config file (or a previous run's manifest); flags override its keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads; overrides the DRIFTRISK_WORKERS environment variable.
    #[arg(long, global = true)]
    pub workers: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Direction V = target - base from two checkpoints or base + adapter.
    BuildDirection(BuildDirectionArgs),
    /// Judge a grid of steered states base + alpha V.
    SteerSweep(SteerSweepArgs),
    /// Project checkpoint drift onto directions.
    Trace(TraceArgs),
    /// SQSD risk score for every corpus sample.
    Score(ScoreArgs),
    /// Directional sensitivity profile and init ranking.
    Sensitivity(SensitivityArgs),
    /// Fine-tune per rank stratum and judge.
    RankEval(RankEvalArgs),
    /// Run a toy-world experiment end to end.
    ToyRun(ToyRunArgs),
    /// First-order loss/displacement agreement per sample.
    TaylorCheck(TaylorCheckArgs),
}

#[derive(Args, Serialize, Debug, Default)]
pub struct BuildDirectionArgs {
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Fine-tuned checkpoint (merged weights).
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// LoRA adapter applied on top of `--base`.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    /// `safety` or `danger`.
    #[arg(long)]
    pub label: Option<String>,
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub strip_prefix: Option<String>,
    #[arg(long)]
    pub lora_alpha: Option<f64>,
    /// Keep only these modules (comma-separated).
    #[arg(long, value_delimiter = ',')]
    pub modules: Option<Vec<String>>,
}

#[derive(Args, Serialize, Debug, Default)]
pub struct SteerSweepArgs {
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub direction: Option<PathBuf>,
    /// `start:stop:step` (inclusive) or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    pub alphas: Option<String>,
    #[arg(long)]
    pub judge: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub strip_prefix: Option<String>,
}

#[derive(Args, Serialize, Debug, Default)]
pub struct TraceArgs {
    #[arg(long)]
    pub base: Option<PathBuf>,
    /// Checkpoint files; the step is the trailing integer of the file stem.
    #[arg(long, num_args = 1..)]
    pub checkpoints: Option<Vec<PathBuf>>,
    #[arg(long, num_args = 1..)]
    pub directions: Option<Vec<PathBuf>>,
    #[arg(long)]
    pub judge: Option<PathBuf>,
    #[arg(long)]
    pub judge_stride: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub strip_prefix: Option<String>,
}

#[derive(Args, Serialize, Debug, Default)]
pub struct ScoreArgs {
    /// Merged weights at the scoring initialization.
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Adapter holding A0, B0; fresh adapters from `--seed` otherwise.
    #[arg(long)]
    pub adapter: Option<PathBuf>,
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub danger: Option<PathBuf>,
    #[arg(long)]
    pub safety: Option<PathBuf>,
    #[arg(long)]
    pub eta: Option<f64>,
    /// full, no_norm, danger_only or safety_only.
    #[arg(long)]
    pub variant: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub init_id: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub strip_prefix: Option<String>,
}

#[derive(Args, Serialize, Debug, Default)]
pub struct SensitivityArgs {
    /// `linear` (needs `--alphas`) or `drift` (needs `--checkpoints`).
    #[arg(long)]
    pub kind: Option<String>,
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub direction: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub alphas: Option<String>,
    #[arg(long, num_args = 1..)]
    pub checkpoints: Option<Vec<PathBuf>>,
    /// Step distance `a` between paired checkpoints.
    #[arg(long)]
    pub interval: Option<usize>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub judge: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Ranked states as JSON; defaults to `<out>.ranked.json`.
    #[arg(long)]
    pub ranked_out: Option<PathBuf>,
    #[arg(long)]
    pub strip_prefix: Option<String>,
}

#[derive(Args, Serialize, Debug, Default)]
pub struct RankEvalArgs {
    /// Risk records (JSON lines).
    #[arg(long)]
    pub scores: Option<PathBuf>,
    /// Rank by a baseline or variant score instead of the primary score.
    #[arg(long)]
    pub score_key: Option<String>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    /// `lora` or `full`.
    #[arg(long)]
    pub mode: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// `adam` (momentum-free) or `gd`.
    #[arg(long)]
    pub optimizer: Option<String>,
    #[arg(long)]
    pub judge: Option<PathBuf>,
    #[arg(long)]
    pub strata: Option<usize>,
    #[arg(long)]
    pub method: Option<String>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub table: Option<PathBuf>,
    #[arg(long)]
    pub strip_prefix: Option<String>,
}

#[derive(Args, Serialize, Debug, Default)]
pub struct ToyRunArgs {
    /// `fig2-analog`, `planted-ranking` or `transfer`.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Hidden width of the world (ignored by `transfer`).
    #[arg(long)]
    pub width: Option<usize>,
}

#[derive(Args, Serialize, Debug, Default)]
pub struct TaylorCheckArgs {
    #[arg(long)]
    pub init: Option<PathBuf>,
    #[arg(long)]
    pub target: Option<PathBuf>,
    /// Target is `init + alpha V` instead of `--target`.
    #[arg(long)]
    pub direction: Option<PathBuf>,
    #[arg(long, allow_hyphen_values = true)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub model_config: Option<PathBuf>,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub eta: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub strip_prefix: Option<String>,
}

/// Failure of a command, rendered as `error[<category>]: <message>`.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Config(String),
    InvalidValue(String),
    InvalidCombination(String),
    MissingFile(PathBuf),
    Core(Error),
}

impl CliError {
    pub fn category(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::InvalidValue(_) => "invalid_value",
            CliError::InvalidCombination(_) => "invalid_combination",
            CliError::MissingFile(_) => "missing_file",
            CliError::Core(e) => e.category(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            _ => 1,
        }
    }

    /// Single-line rendering.
    pub fn line(&self) -> String {
        let msg = match self {
            CliError::Usage(m)
            | CliError::Config(m)
            | CliError::InvalidValue(m)
            | CliError::InvalidCombination(m) => m.clone(),
            CliError::MissingFile(p) => format!("no such file: {}", p.display()),
            CliError::Core(e) => e.to_string(),
        };
        let flat: Vec<&str> = msg.split_whitespace().collect();
        format!("error[{}]: {}", self.category(), flat.join(" "))
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { path, source } if source.kind() == std::io::ErrorKind::NotFound => {
                CliError::MissingFile(path)
            }
            e => CliError::Core(e),
        }
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::InvalidValue(msg.into())
}

fn combination(msg: impl Into<String>) -> CliError {
    CliError::InvalidCombination(msg.into())
}

/// Parses `start:stop:step` (inclusive within 1e-9) or `a,b,c`. Values are
/// rounded to 12 decimals.
pub fn parse_grid(s: &str) -> CliResult<Vec<f64>> {
    let num = |t: &str| -> CliResult<f64> {
        let v: f64 = t
            .trim()
            .parse()
            .map_err(|_| invalid(format!("`{t}` is not a number in grid `{s}`")))?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(invalid(format!("grid `{s}` has a non-finite value")))
        }
    };
    let round = |x: f64| (x * 1e12).round() / 1e12;
    if s.contains(':') {
        let parts: Vec<&str> = s.split(':').collect();
        if parts.len() != 3 {
            return Err(invalid(format!("range `{s}` must be start:stop:step")));
        }
        let (start, stop, step) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if step <= 0.0 {
            return Err(invalid(format!("range `{s}` needs a positive step")));
        }
        if stop < start {
            return Err(invalid(format!("range `{s}` has stop below start")));
        }
        let n = ((stop - start + 1e-9) / step).floor();
        if n > 1e6 {
            return Err(invalid(format!(
                "range `{s}` has more than a million points"
            )));
        }
        Ok((0..=n as usize)
            .map(|i| round(start + i as f64 * step))
            .collect())
    } else {
        let v = s
            .split(',')
            .filter(|t| !t.trim().is_empty())
            .map(num)
            .collect::<CliResult<Vec<f64>>>()?;
        if v.is_empty() {
            return Err(invalid("empty grid"));
        }
        Ok(v.into_iter().map(round).collect())
    }
}

/// Trailing integer of the file stem (`step_00040.safetensors` -> 40).
pub fn checkpoint_step(path: &Path) -> Option<usize> {
    let stem = path.file_stem()?.to_str()?;
    let digits = stem.len() - stem.trim_end_matches(|c: char| c.is_ascii_digit()).len();
    stem[stem.len() - digits..].parse().ok()
}

fn ordered_checkpoints(paths: &[PathBuf]) -> CliResult<Vec<(usize, PathBuf)>> {
    let mut out = paths
        .iter()
        .map(|p| {
            checkpoint_step(p).map(|s| (s, p.clone())).ok_or_else(|| {
                invalid(format!("no step number in checkpoint name {}", p.display()))
            })
        })
        .collect::<CliResult<Vec<_>>>()?;
    out.sort_by_key(|(s, _)| *s);
    if let Some(w) = out.windows(2).find(|w| w[0].0 == w[1].0) {
        return Err(invalid(format!("two checkpoints share step {}", w[0].0)));
    }
    Ok(out)
}

fn sha256_file(path: &Path) -> CliResult<String> {
    let bytes = std::fs::read(path).map_err(|e| {
        CliError::from(Error::Io {
            path: path.into(),
            source: e,
        })
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn read_json<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let f = File::open(path).map_err(|e| {
        CliError::from(Error::Io {
            path: path.into(),
            source: e,
        })
    })?;
    serde_json::from_reader(BufReader::new(f))
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> CliResult<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)? + "\n";
    write_file(path, text.as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    std::fs::write(path, bytes).map_err(|e| {
        Error::Io {
            path: path.into(),
            source: e,
        }
        .into()
    })
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.into(),
            source: e,
        })?;
    }
    let f = File::create(path).map_err(|e| Error::Io {
        path: path.into(),
        source: e,
    })?;
    Ok(BufWriter::new(f))
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

fn load_opts(strip_prefix: &Option<String>) -> LoadOptions {
    LoadOptions {
        strip_prefix: strip_prefix.clone(),
        lora_alpha: None,
    }
}

fn model_config(path: &Option<PathBuf>) -> CliResult<ToyConfig> {
    let cfg = match path {
        Some(p) => read_json(p)?,
        None => ToyConfig::default(),
    };
    cfg.validate()?;
    Ok(cfg)
}

fn check_positive(name: &str, v: f64) -> CliResult<()> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(invalid(format!(
            "{name} must be positive and finite, got {v}"
        )))
    }
}

fn check_nonzero(name: &str, v: usize) -> CliResult<()> {
    if v == 0 {
        Err(invalid(format!("{name} must be at least 1")))
    } else {
        Ok(())
    }
}

/// One resolved subcommand.
trait Runnable: Serialize + DeserializeOwned {
    const NAME: &'static str;
    /// Files read by the run; each is digested into the manifest.
    fn inputs(&self) -> Vec<PathBuf>;
    fn manifest_path(&self) -> PathBuf;
    /// Runs and returns the written files.
    fn run(&self) -> CliResult<Vec<PathBuf>>;
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    tool: String,
    version: String,
    command: String,
    config: Value,
    inputs: BTreeMap<String, String>,
    outputs: Vec<String>,
}

/// Config file keys overlaid with every flag that was given.
fn resolve<C: Runnable>(file: Option<&Path>, flags: &impl Serialize) -> CliResult<C> {
    let mut merged = match file {
        Some(p) => {
            let v: Value = read_json(p)?;
            let Value::Object(mut obj) = v else {
                return Err(CliError::Config(format!(
                    "{} is not a JSON object",
                    p.display()
                )));
            };
            if obj.contains_key("command") && obj.contains_key("config") {
                let cmd = obj
                    .get("command")
                    .and_then(Value::as_str)
                    .unwrap_or_default()
                    .to_string();
                if cmd != C::NAME {
                    return Err(CliError::Config(format!(
                        "manifest is for `{cmd}`, not `{}`",
                        C::NAME
                    )));
                }
                match obj.remove("config") {
                    Some(Value::Object(c)) => c,
                    _ => {
                        return Err(CliError::Config(
                            "manifest `config` is not an object".into(),
                        ))
                    }
                }
            } else {
                obj
            }
        }
        None => Map::new(),
    };
    if let Value::Object(flags) = serde_json::to_value(flags).map_err(Error::from)? {
        merged.extend(flags.into_iter().filter(|(_, v)| !v.is_null()));
    }
    serde_json::from_value(Value::Object(merged)).map_err(|e| CliError::Config(e.to_string()))
}

fn execute<C: Runnable>(file: Option<&Path>, flags: &impl Serialize) -> CliResult<()> {
    let cfg: C = resolve(file, flags)?;
    let mut inputs = BTreeMap::new();
    for p in cfg.inputs() {
        if !p.is_file() {
            return Err(CliError::MissingFile(p));
        }
        inputs.insert(p.display().to_string(), sha256_file(&p)?);
    }
    let outputs = cfg.run()?;
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        command: C::NAME.into(),
        config: serde_json::to_value(&cfg).map_err(Error::from)?,
        inputs,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = cfg.manifest_path();
    write_json(&manifest, &path)?;
    tracing::info!(manifest = %path.display(), "done");
    Ok(())
}

fn default_delta() -> f64 {
    crate::sensitivity::DEFAULT_DELTA
}
fn default_eps() -> f64 {
    crate::sensitivity::DEFAULT_EPS
}
fn default_eta() -> f64 {
    1e-3
}
fn default_seed() -> u64 {
    DEFAULT_SEED
}
fn one() -> usize {
    1
}
fn five() -> usize {
    5
}
fn ten() -> usize {
    10
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct BuildDirectionConfig {
    pub base: PathBuf,
    #[serde(default)]
    pub target: Option<PathBuf>,
    #[serde(default)]
    pub adapter: Option<PathBuf>,
    pub label: DirectionLabel,
    #[serde(default)]
    pub tag: String,
    pub out: PathBuf,
    #[serde(default)]
    pub strip_prefix: Option<String>,
    #[serde(default)]
    pub lora_alpha: Option<f64>,
    #[serde(default)]
    pub modules: Option<Vec<String>>,
}

impl Runnable for BuildDirectionConfig {
    const NAME: &'static str = "build-direction";

    fn inputs(&self) -> Vec<PathBuf> {
        [
            Some(&self.base),
            self.target.as_ref(),
            self.adapter.as_ref(),
        ]
        .into_iter()
        .flatten()
        .cloned()
        .collect()
    }

    fn manifest_path(&self) -> PathBuf {
        with_suffix(&self.out, ".manifest.json")
    }

    fn run(&self) -> CliResult<Vec<PathBuf>> {
        if self.target.is_some() == self.adapter.is_some() {
            return Err(combination("give exactly one of --target or --adapter"));
        }
        if let Some(a) = self.lora_alpha {
            check_positive("lora_alpha", a)?;
        }
        let opts = LoadOptions {
            strip_prefix: self.strip_prefix.clone(),
            lora_alpha: self.lora_alpha,
        };
        let base = load_parameter_state(&self.base, &opts)?;
        let target = match (&self.target, &self.adapter) {
            (Some(t), _) => load_parameter_state(t, &opts)?,
            (_, Some(a)) => apply_adapter(&base, &load_adapter(a, &opts)?)?,
            _ => unreachable!(),
        };
        let mut v = build_direction(&base, &target, self.label, self.tag.clone())?;
        if let Some(m) = &self.modules {
            v = v.restrict(m.iter().map(String::as_str))?;
        }
        v.save(&self.out)?;
        println!(
            "{}: {} modules, global norm {:.6}",
            v.tag(),
            v.modules().len(),
            v.global_norm()
        );
        Ok(vec![self.out.clone(), sidecar_path(&self.out)])
    }
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct SteerSweepConfig {
    pub base: PathBuf,
    pub direction: PathBuf,
    pub alphas: String,
    pub judge: PathBuf,
    pub out: PathBuf,
    #[serde(default)]
    pub strip_prefix: Option<String>,
}

impl Runnable for SteerSweepConfig {
    const NAME: &'static str = "steer-sweep";

    fn inputs(&self) -> Vec<PathBuf> {
        vec![
            self.base.clone(),
            self.direction.clone(),
            sidecar_path(&self.direction),
            self.judge.clone(),
        ]
    }

    fn manifest_path(&self) -> PathBuf {
        with_suffix(&self.out, ".manifest.json")
    }

    fn run(&self) -> CliResult<Vec<PathBuf>> {
        let alphas = parse_grid(&self.alphas)?;
        let base = load_parameter_state(&self.base, &load_opts(&self.strip_prefix))?;
        let v = DirectionSet::load(&self.direction)?;
        let judge: SyntheticJudge = read_json(&self.judge)?;
        let rows = alphas
            .par_iter()
            .map(|&a| Ok((a, judge.evaluate(&steer(&base, &v, a)?)?)))
            .collect::<crate::Result<Vec<_>>>()?;
        let mut w = csv::Writer::from_writer(create(&self.out)?);
        w.write_record(["alpha", "safety", "asr"])
            .map_err(Error::from)?;
        for (a, r) in rows {
            w.write_record([a.to_string(), r.safety.to_string(), r.asr.to_string()])
                .map_err(Error::from)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: self.out.clone(),
            source: e,
        })?;
        Ok(vec![self.out.clone()])
    }
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct TraceConfig {
    pub base: PathBuf,
    pub checkpoints: Vec<PathBuf>,
    pub directions: Vec<PathBuf>,
    #[serde(default)]
    pub judge: Option<PathBuf>,
    #[serde(default = "one")]
    pub judge_stride: usize,
    pub out: PathBuf,
    #[serde(default)]
    pub strip_prefix: Option<String>,
}

impl Runnable for TraceConfig {
    const NAME: &'static str = "trace";

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.base.clone()];
        v.extend(self.checkpoints.iter().cloned());
        for d in &self.directions {
            v.push(d.clone());
            v.push(sidecar_path(d));
        }
        v.extend(self.judge.iter().cloned());
        v
    }

    fn manifest_path(&self) -> PathBuf {
        with_suffix(&self.out, ".manifest.json")
    }

    fn run(&self) -> CliResult<Vec<PathBuf>> {
        check_nonzero("judge_stride", self.judge_stride)?;
        if self.checkpoints.is_empty() || self.directions.is_empty() {
            return Err(invalid(
                "trace needs at least one checkpoint and one direction",
            ));
        }
        let ordered = ordered_checkpoints(&self.checkpoints)?;
        let opts = load_opts(&self.strip_prefix);
        let base = load_parameter_state(&self.base, &opts)?;
        let directions = self
            .directions
            .iter()
            .map(DirectionSet::load)
            .collect::<crate::Result<Vec<_>>>()?;
        let judge: Option<SyntheticJudge> = self.judge.as_deref().map(read_json).transpose()?;
        let stream = ordered
            .into_iter()
            .map(|(step, p)| Ok((step, load_parameter_state(p, &opts)?)));
        let points = trace(
            stream,
            &base,
            &directions,
            judge.as_ref().map(|j| j as &dyn crate::judge::Judge),
            &TraceOptions {
                judge_stride: self.judge_stride,
            },
        )?;
        write_trajectory_csv(&points, create(&self.out)?)?;
        Ok(vec![self.out.clone()])
    }
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct ScoreConfig {
    pub init: PathBuf,
    #[serde(default)]
    pub adapter: Option<PathBuf>,
    #[serde(default)]
    pub model_config: Option<PathBuf>,
    pub corpus: PathBuf,
    #[serde(default)]
    pub danger: Option<PathBuf>,
    #[serde(default)]
    pub safety: Option<PathBuf>,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "full_variant")]
    pub variant: Variant,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub init_id: Option<String>,
    pub out: PathBuf,
    #[serde(default)]
    pub strip_prefix: Option<String>,
}

fn full_variant() -> Variant {
    Variant::Full
}

impl Runnable for ScoreConfig {
    const NAME: &'static str = "score";

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.init.clone(), self.corpus.clone()];
        v.extend(self.adapter.iter().cloned());
        v.extend(self.model_config.iter().cloned());
        for d in self.danger.iter().chain(&self.safety) {
            v.push(d.clone());
            v.push(sidecar_path(d));
        }
        v
    }

    fn manifest_path(&self) -> PathBuf {
        with_suffix(&self.out, ".manifest.json")
    }

    fn run(&self) -> CliResult<Vec<PathBuf>> {
        let (Some(danger), Some(safety)) = (&self.danger, &self.safety) else {
            return Err(combination("score needs both --danger and --safety"));
        };
        check_positive("eta", self.eta)?;
        let cfg = model_config(&self.model_config)?.with_mode(FinetuneMode::Lora);
        let opts = load_opts(&self.strip_prefix);
        let init = load_parameter_state(&self.init, &opts)?;
        let model = match &self.adapter {
            Some(a) => ToyModel::from_states(cfg, &init, Some(&load_adapter(a, &opts)?))?,
            None => ToyModel::from_states(cfg, &init, None)?
                .with_fresh_adapters(sub_seed(self.seed, 100)),
        };
        let corpus = load_corpus(&self.corpus)?;
        let danger = DirectionSet::load(danger)?;
        let safety = DirectionSet::load(safety)?;
        let records = score_corpus(
            &model,
            &corpus,
            &danger,
            &safety,
            self.eta,
            self.variant,
            self.init_id.as_deref(),
        )?;
        write_records_jsonl(&records, create(&self.out)?)?;
        let degenerate = records.iter().filter(|r| r.degenerate.is_some()).count();
        println!(
            "scored {} samples ({} degenerate), variant {}",
            records.len(),
            degenerate,
            self.variant.as_str()
        );
        Ok(vec![self.out.clone()])
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "snake_case")]
pub enum SensitivityKind {
    Linear,
    Drift,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct SensitivityConfig {
    pub kind: SensitivityKind,
    pub base: PathBuf,
    pub direction: PathBuf,
    #[serde(default)]
    pub alphas: Option<String>,
    #[serde(default)]
    pub checkpoints: Option<Vec<PathBuf>>,
    #[serde(default = "ten")]
    pub interval: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
    pub judge: PathBuf,
    #[serde(default = "five")]
    pub k: usize,
    pub out: PathBuf,
    #[serde(default)]
    pub ranked_out: Option<PathBuf>,
    #[serde(default)]
    pub strip_prefix: Option<String>,
}

#[derive(Serialize)]
struct RankedFile<'a> {
    direction: &'a str,
    label: DirectionLabel,
    kind: crate::sensitivity::ProfileKind,
    top_k: Vec<crate::sensitivity::RankedState>,
    /// Every valid position in rank order.
    all: Vec<crate::sensitivity::RankedState>,
    excluded: &'a [crate::sensitivity::ExcludedPoint],
}

impl SensitivityConfig {
    fn ranked_path(&self) -> PathBuf {
        self.ranked_out
            .clone()
            .unwrap_or_else(|| with_suffix(&self.out, ".ranked.json"))
    }
}

impl Runnable for SensitivityConfig {
    const NAME: &'static str = "sensitivity";

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![
            self.base.clone(),
            self.direction.clone(),
            sidecar_path(&self.direction),
            self.judge.clone(),
        ];
        v.extend(self.checkpoints.iter().flatten().cloned());
        v
    }

    fn manifest_path(&self) -> PathBuf {
        with_suffix(&self.out, ".manifest.json")
    }

    fn run(&self) -> CliResult<Vec<PathBuf>> {
        check_nonzero("k", self.k)?;
        check_positive("delta", self.delta)?;
        if !(self.eps >= 0.0 && self.eps.is_finite()) {
            return Err(invalid(format!(
                "eps must be non-negative, got {}",
                self.eps
            )));
        }
        let opts = load_opts(&self.strip_prefix);
        let base = load_parameter_state(&self.base, &opts)?;
        let v = DirectionSet::load(&self.direction)?;
        let judge: SyntheticJudge = read_json(&self.judge)?;
        let cached = CachedJudge::new(&judge);
        let profile: SensitivityProfile = match (self.kind, &self.alphas, &self.checkpoints) {
            (SensitivityKind::Linear, Some(a), None) => {
                linear_profile(&base, &v, &parse_grid(a)?, self.delta, &cached)?
            }
            (SensitivityKind::Drift, None, Some(c)) => {
                check_nonzero("interval", self.interval)?;
                let states = ordered_checkpoints(c)?
                    .into_iter()
                    .map(|(s, p)| Ok((s, load_parameter_state(p, &opts)?)))
                    .collect::<crate::Result<Vec<(usize, ParameterState)>>>()?;
                drift_profile(&states, &base, &v, self.interval, &cached, self.eps)?
            }
            (SensitivityKind::Linear, _, _) => {
                return Err(combination(
                    "linear sensitivity needs --alphas and no --checkpoints",
                ))
            }
            (SensitivityKind::Drift, _, _) => {
                return Err(combination(
                    "drift sensitivity needs --checkpoints and no --alphas",
                ))
            }
        };
        let all = select_init(&profile, profile.points.len())?;
        let ranked = RankedFile {
            direction: &profile.direction,
            label: profile.label,
            kind: profile.kind,
            top_k: all.iter().take(self.k).cloned().collect(),
            all: all.clone(),
            excluded: &profile.excluded,
        };
        write_profile_csv(&profile, create(&self.out)?)?;
        let ranked_path = self.ranked_path();
        write_json(&ranked, &ranked_path)?;
        for r in &ranked.top_k {
            println!("rank {}: position {} ds {:.6}", r.rank, r.position, r.ds);
        }
        Ok(vec![self.out.clone(), ranked_path])
    }
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct RankEvalConfig {
    pub scores: PathBuf,
    #[serde(default)]
    pub score_key: Option<String>,
    pub corpus: PathBuf,
    pub base: PathBuf,
    #[serde(default)]
    pub model_config: Option<PathBuf>,
    #[serde(default = "lora")]
    pub mode: FinetuneMode,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "eval_lr")]
    pub lr: f64,
    #[serde(default = "eval_steps")]
    pub steps: usize,
    #[serde(default = "eval_batch")]
    pub batch_size: usize,
    #[serde(default = "adam")]
    pub optimizer: String,
    pub judge: PathBuf,
    #[serde(default = "five")]
    pub strata: usize,
    #[serde(default)]
    pub method: Option<String>,
    pub out: PathBuf,
    #[serde(default)]
    pub table: Option<PathBuf>,
    #[serde(default)]
    pub strip_prefix: Option<String>,
}

fn lora() -> FinetuneMode {
    FinetuneMode::Lora
}
fn eval_lr() -> f64 {
    eval_train(0).lr
}
fn eval_steps() -> usize {
    eval_train(0).steps
}
fn eval_batch() -> usize {
    eval_train(0).batch_size
}
fn adam() -> String {
    "adam".into()
}

impl RankEvalConfig {
    fn train(&self) -> CliResult<TrainConfig> {
        let optimizer = match self.optimizer.as_str() {
            "adam" => Optimizer::momentum_free_adam(),
            "gd" => Optimizer::Gd,
            o => {
                return Err(invalid(format!(
                    "optimizer must be `adam` or `gd`, got `{o}`"
                )))
            }
        };
        let t = TrainConfig {
            lr: self.lr,
            steps: self.steps,
            batch_size: self.batch_size,
            checkpoint_every: self.steps.max(1),
            optimizer,
            seed: sub_seed(self.seed, 302),
        };
        t.validate()?;
        Ok(t)
    }
}

impl Runnable for RankEvalConfig {
    const NAME: &'static str = "rank-eval";

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![
            self.scores.clone(),
            self.corpus.clone(),
            self.base.clone(),
            self.judge.clone(),
        ];
        v.extend(self.model_config.iter().cloned());
        v
    }

    fn manifest_path(&self) -> PathBuf {
        with_suffix(&self.out, ".manifest.json")
    }

    fn run(&self) -> CliResult<Vec<PathBuf>> {
        check_nonzero("strata", self.strata)?;
        let train = self.train()?;
        let records =
            read_records_jsonl(BufReader::new(File::open(&self.scores).map_err(|e| {
                Error::Io {
                    path: self.scores.clone(),
                    source: e,
                }
            })?))?;
        let scored = records
            .iter()
            .map(|r| {
                let s = match self.score_key.as_deref() {
                    None => Some(r.score),
                    Some(k) => r.baseline_scores.get(k).copied().or_else(|| {
                        r.variant_scores
                            .iter()
                            .find(|(v, _)| v.as_str() == k)
                            .map(|(_, s)| *s)
                    }),
                };
                s.map(|s| (r.sample_id.clone(), s)).ok_or_else(|| {
                    invalid(format!(
                        "record `{}` has no score `{}`",
                        r.sample_id,
                        self.score_key.as_deref().unwrap_or("")
                    ))
                })
            })
            .collect::<CliResult<Vec<_>>>()?;
        let corpus: Vec<Sample> = load_corpus(&self.corpus)?;
        let cfg = model_config(&self.model_config)?.with_mode(self.mode);
        let base = load_parameter_state(&self.base, &load_opts(&self.strip_prefix))?;
        let mut model = ToyModel::from_states(cfg, &base, None)?;
        if self.mode == FinetuneMode::Lora {
            model = model.with_fresh_adapters(sub_seed(self.seed, 100));
        }
        let judge: SyntheticJudge = read_json(&self.judge)?;
        let ev = FinetuneEvaluator {
            base: model,
            train,
            judge: &judge,
        };
        let method = self
            .method
            .clone()
            .unwrap_or_else(|| self.score_key.clone().unwrap_or_else(|| "sqsd".into()));
        let report = ev.evaluate_partition(&method, &corpus, partition(&scored, self.strata)?)?;
        write_file(&self.out, (report.to_json()? + "\n").as_bytes())?;
        let table = render_table(std::slice::from_ref(&report));
        print!("{table}");
        let mut outputs = vec![self.out.clone()];
        if let Some(t) = &self.table {
            write_file(t, table.as_bytes())?;
            outputs.push(t.clone());
        }
        Ok(outputs)
    }
}

#[derive(Serialize, Deserialize, Debug, Clone, Copy, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Fig2Analog,
    PlantedRanking,
    Transfer,
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct ToyRunConfig {
    pub preset: Preset,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub out_dir: PathBuf,
    #[serde(default)]
    pub width: Option<usize>,
}

struct OutDir<'a> {
    root: &'a Path,
    written: Vec<PathBuf>,
}

impl OutDir<'_> {
    fn path(&mut self, name: &str) -> CliResult<PathBuf> {
        let p = self.root.join(name);
        if let Some(dir) = p.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::Io {
                path: dir.into(),
                source: e,
            })?;
        }
        self.written.push(p.clone());
        Ok(p)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> CliResult<()> {
        let p = self.path(name)?;
        write_json(value, &p)
    }

    fn text(&mut self, name: &str, text: &str) -> CliResult<()> {
        let p = self.path(name)?;
        write_file(&p, text.as_bytes())
    }

    fn corpus(&mut self, corpus: &[Sample]) -> CliResult<()> {
        let p = self.path("corpus.jsonl")?;
        Ok(save_corpus(corpus, p)?)
    }

    fn world(&mut self, world: &ToyWorld) -> CliResult<()> {
        self.json("world.json", &world.config)?;
        self.json("model.json", &world.config.model)?;
        self.json("judge.json", &world.judge)?;
        let p = self.path("base.safetensors")?;
        save_parameter_state(&world.base_state, p)?;
        for v in world.danger.iter().chain(&world.safety) {
            let name = format!("directions/{}-{}.safetensors", v.label, v.source_tag);
            let p = self.path(&name)?;
            v.save(&p)?;
            self.written.push(sidecar_path(&p));
        }
        Ok(())
    }
}

impl Runnable for ToyRunConfig {
    const NAME: &'static str = "toy-run";

    fn inputs(&self) -> Vec<PathBuf> {
        Vec::new()
    }

    fn manifest_path(&self) -> PathBuf {
        self.out_dir.join("manifest.json")
    }

    fn run(&self) -> CliResult<Vec<PathBuf>> {
        let mut world_cfg = WorldConfig::seeded(self.seed);
        if let Some(w) = self.width {
            check_nonzero("width", w)?;
            world_cfg = world_cfg.with_width(w);
        }
        let mut out = OutDir {
            root: &self.out_dir,
            written: Vec::new(),
        };
        match self.preset {
            Preset::Fig2Analog => {
                let world = ToyWorld::build(world_cfg)?;
                out.world(&world)?;
                let cfg = DriftRunConfig::seeded(self.seed);
                let (corpus, checkpoints) = drift_checkpoints(&world, &cfg)?;
                out.corpus(&corpus)?;
                for (step, state) in &checkpoints {
                    let p = out.path(&format!("checkpoints/step_{step:05}.safetensors"))?;
                    save_parameter_state(&state.clone().with_meta("step", step.to_string()), p)?;
                }
                let points = trace_world(&world, checkpoints, cfg.judge_stride)?;
                let p = out.path("trajectory.csv")?;
                write_trajectory_csv(&points, create(&p)?)?;
                if let (Some(first), Some(last)) = (points.first(), points.last()) {
                    for (tag, v) in &last.projections {
                        println!("final projection {tag}: {v:.4}");
                    }
                    println!(
                        "judge: {:.4} -> {:.4}",
                        first.judge_score.unwrap_or(f64::NAN),
                        last.judge_score.unwrap_or(f64::NAN)
                    );
                }
            }
            Preset::PlantedRanking => {
                let world = ToyWorld::build(world_cfg)?;
                out.world(&world)?;
                let outcome = ranking_run(&world, &RankingConfig::seeded(self.seed))?;
                out.corpus(&outcome.corpus)?;
                let p = out.path("sensitivity.csv")?;
                write_profile_csv(&outcome.profile, create(&p)?)?;
                out.json("ranked.json", &outcome.ranked)?;
                let init = steer(
                    &world.base_state,
                    world.primary_danger(),
                    outcome.ranked[0].position,
                )?;
                let p = out.path("init.safetensors")?;
                save_parameter_state(&init, p)?;
                let p = out.path("records.jsonl")?;
                write_records_jsonl(&outcome.records, create(&p)?)?;
                let rho: serde_json::Map<String, Value> = outcome
                    .rho
                    .iter()
                    .map(|(k, v)| (k.clone(), Value::from(*v)))
                    .collect();
                out.json("rho.json", &rho)?;
                out.json("reports.json", &outcome.reports)?;
                let table = render_table(&outcome.reports);
                out.text("table.txt", &table)?;
                print!("{table}");
                for (k, v) in &outcome.rho {
                    println!("rho {k}: {v:.4}");
                }
            }
            Preset::Transfer => {
                let cfg = TransferConfig::seeded(self.seed);
                let outcome = transfer_run(&cfg)?;
                out.json("transfer.json", &cfg)?;
                out.corpus(&outcome.corpus)?;
                let p = out.path("records.jsonl")?;
                write_records_jsonl(&outcome.records, create(&p)?)?;
                out.json("reports.json", &outcome.reports)?;
                let table = render_table(&outcome.reports);
                out.text("table.txt", &table)?;
                print!("{table}");
            }
        }
        Ok(out.written)
    }
}

#[derive(Serialize, Deserialize, Debug)]
#[serde(deny_unknown_fields)]
pub struct TaylorCheckConfig {
    pub init: PathBuf,
    #[serde(default)]
    pub target: Option<PathBuf>,
    #[serde(default)]
    pub direction: Option<PathBuf>,
    #[serde(default)]
    pub alpha: Option<f64>,
    #[serde(default)]
    pub model_config: Option<PathBuf>,
    pub corpus: PathBuf,
    #[serde(default = "default_eta")]
    pub eta: f64,
    pub out: PathBuf,
    #[serde(default)]
    pub strip_prefix: Option<String>,
}

impl Runnable for TaylorCheckConfig {
    const NAME: &'static str = "taylor-check";

    fn inputs(&self) -> Vec<PathBuf> {
        let mut v = vec![self.init.clone(), self.corpus.clone()];
        v.extend(self.target.iter().cloned());
        if let Some(d) = &self.direction {
            v.push(d.clone());
            v.push(sidecar_path(d));
        }
        v.extend(self.model_config.iter().cloned());
        v
    }

    fn manifest_path(&self) -> PathBuf {
        with_suffix(&self.out, ".manifest.json")
    }

    fn run(&self) -> CliResult<Vec<PathBuf>> {
        check_positive("eta", self.eta)?;
        let opts = load_opts(&self.strip_prefix);
        let init = load_parameter_state(&self.init, &opts)?;
        let target = match (&self.target, &self.direction, self.alpha) {
            (Some(t), None, None) => load_parameter_state(t, &opts)?,
            (None, Some(d), Some(a)) if a.is_finite() => steer(&init, &DirectionSet::load(d)?, a)?,
            _ => {
                return Err(combination(
                    "give --target, or --direction with a finite --alpha",
                ))
            }
        };
        let cfg = model_config(&self.model_config)?.with_mode(FinetuneMode::Full);
        let m_ref = ToyModel::from_states(cfg.clone(), &init, None)?;
        let m_tgt = ToyModel::from_states(cfg, &target, None)?;
        let corpus = load_corpus(&self.corpus)?;
        let rows = corpus
            .par_iter()
            .map(|s| taylor_gap(&m_ref, &m_tgt, s, self.eta).map(|(l, r)| (s.id.clone(), l, r)))
            .collect::<crate::Result<Vec<_>>>()?;
        let mut w = csv::Writer::from_writer(create(&self.out)?);
        w.write_record(["sample_id", "lhs", "rhs", "gap", "sign_agree"])
            .map_err(Error::from)?;
        let mut agree = 0usize;
        for (id, l, r) in &rows {
            let same = l.signum() == r.signum();
            agree += usize::from(same);
            w.write_record([
                id.clone(),
                l.to_string(),
                r.to_string(),
                (l - r).to_string(),
                same.to_string(),
            ])
            .map_err(Error::from)?;
        }
        w.flush().map_err(|e| Error::Io {
            path: self.out.clone(),
            source: e,
        })?;
        let lhs: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let rhs: Vec<f64> = rows.iter().map(|r| r.2).collect();
        println!(
            "{} samples, sign agreement {:.4}, spearman {:.4}",
            rows.len(),
            agree as f64 / rows.len().max(1) as f64,
            spearman(&lhs, &rhs).unwrap_or(f64::NAN)
        );
        Ok(vec![self.out.clone()])
    }
}

fn init_runtime(workers: Option<usize>) -> CliResult<()> {
    let _ = tracing_subscriber::fmt()
        .with_writer(std::io::stderr)
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("warn")),
        )
        .try_init();
    let workers = match workers {
        Some(n) => Some(n),
        None => match std::env::var(WORKERS_ENV) {
            Ok(s) => Some(
                s.trim()
                    .parse()
                    .map_err(|_| invalid(format!("{WORKERS_ENV}=`{s}` is not a count")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = workers {
        check_nonzero("workers", n)?;
        // A pool already built in this process keeps its size.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    Ok(())
}

fn dispatch(cli: Cli) -> CliResult<()> {
    init_runtime(cli.workers)?;
    let file = cli.config.as_deref();
    match &cli.command {
        Command::BuildDirection(a) => execute::<BuildDirectionConfig>(file, a),
        Command::SteerSweep(a) => execute::<SteerSweepConfig>(file, a),
        Command::Trace(a) => execute::<TraceConfig>(file, a),
        Command::Score(a) => execute::<ScoreConfig>(file, a),
        Command::Sensitivity(a) => execute::<SensitivityConfig>(file, a),
        Command::RankEval(a) => execute::<RankEvalConfig>(file, a),
        Command::ToyRun(a) => execute::<ToyRunConfig>(file, a),
        Command::TaylorCheck(a) => execute::<TaylorCheckConfig>(file, a),
    }
}

/// Parses `args` (program name first), runs, and returns the exit code.
/// Failures print one `error[<category>]: ...` line to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let result = match Cli::try_parse_from(args) {
        Ok(cli) => dispatch(cli),
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return 0;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ")
                .to_string();
            Err(CliError::Usage(first))
        }
    };
    match result {
        Ok(()) => {
            let _ = std::io::stdout().flush();
            0
        }
        Err(e) => {
            eprintln!("{}", e.line());
            e.exit_code()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_grid_is_inclusive() {
        let g = parse_grid("-0.4:1.2:0.1").unwrap();
        assert_eq!(g.len(), 17);
        assert_eq!(g[0], -0.4);
        assert_eq!(g[4], 0.0);
        assert_eq!(*g.last().unwrap(), 1.2);
        assert_eq!(
            parse_grid("0:1:0.25").unwrap(),
            vec![0.0, 0.25, 0.5, 0.75, 1.0]
        );
        assert_eq!(parse_grid("0:0.95:0.1").unwrap().len(), 10);
    }

    #[test]
    fn list_grid_and_bad_grids() {
        assert_eq!(parse_grid("0.5, -1,2").unwrap(), vec![0.5, -1.0, 2.0]);
        for bad in ["", "1:2", "0:1:0", "1:0:0.1", "a,b", "0:1:-0.1", "0:inf:1"] {
            assert!(parse_grid(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn steps_from_names() {
        assert_eq!(
            checkpoint_step(Path::new("ck/step_00040.safetensors")),
            Some(40)
        );
        assert_eq!(checkpoint_step(Path::new("ckpt-7.safetensors")), Some(7));
        assert_eq!(checkpoint_step(Path::new("final.safetensors")), None);
        let o =
            ordered_checkpoints(&[PathBuf::from("s_100.st"), PathBuf::from("s_20.st")]).unwrap();
        assert_eq!(o[0].0, 20);
        assert!(ordered_checkpoints(&[PathBuf::from("a_1.st"), PathBuf::from("b_01.st")]).is_err());
    }

    #[test]
    fn flags_override_file_and_unknown_keys_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.json");
        std::fs::write(
            &p,
            r#"{"init":"a","corpus":"b","out":"o","eta":0.5,"variant":"no_norm"}"#,
        )
        .unwrap();
        let flags = ScoreArgs {
            eta: Some(0.25),
            ..Default::default()
        };
        let c: ScoreConfig = resolve(Some(&p), &flags).unwrap();
        assert_eq!(c.eta, 0.25);
        assert_eq!(c.variant, Variant::NoNorm);
        assert_eq!(c.seed, DEFAULT_SEED);
        std::fs::write(&p, r#"{"init":"a","corpus":"b","out":"o","etta":0.5}"#).unwrap();
        let e = resolve::<ScoreConfig>(Some(&p), &ScoreArgs::default()).unwrap_err();
        assert_eq!(e.category(), "config");
    }

    #[test]
    fn manifest_is_a_config() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.json");
        std::fs::write(&p, r#"{"tool":"driftrisk","command":"score","config":{"init":"a","corpus":"b","out":"o"},"inputs":{}}"#).unwrap();
        let c: ScoreConfig = resolve(Some(&p), &ScoreArgs::default()).unwrap();
        assert_eq!(c.init, PathBuf::from("a"));
        assert!(resolve::<TraceConfig>(Some(&p), &TraceArgs::default()).is_err());
    }

    #[test]
    fn error_lines_are_single_line() {
        let e = CliError::InvalidCombination("a\nb".into());
        assert_eq!(e.line(), "error[invalid_combination]: a b");
        let e: CliError = Error::Io {
            path: "x".into(),
            source: std::io::Error::from(std::io::ErrorKind::NotFound),
        }
        .into();
        assert_eq!(e.category(), "missing_file");
    }
}
