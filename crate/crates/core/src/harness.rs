//! End-to-end toy experiments: the drift trace, init selection, corpus
//! scoring with baselines, and rank evaluation.

use serde::{Deserialize, Serialize};

use crate::baselines::{score_all, select_larf_layer, AnchorSet, Baseline};
use crate::checkpoint::ParameterState;
use crate::direction::steer;
use crate::error::{Error, Result};
use crate::eval::{
    partition, partition_records, transfer_protocol, FinetuneEvaluator, RankReport, DEFAULT_STRATA,
};
use crate::judge::CachedJudge;
use crate::sensitivity::{
    linear_profile, select_init, RankedState, SensitivityProfile, DEFAULT_DELTA,
};
use crate::sqsd::{score_corpus, RiskRecord, Variant};
use crate::stats::spearman;
use crate::toy::corpus::Sample;
use crate::toy::model::{FinetuneMode, ToyModel};
use crate::toy::train::{Optimizer, TrainConfig};
use crate::toy::world::{sub_seed, ToyWorld, WorldConfig};
use crate::trajectory::{trace, TraceOptions, TrajectoryPoint};

/// Fine-tuning run traced by the drift experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftRunConfig {
    pub corpus_size: usize,
    pub corpus_seed: u64,
    pub train: TrainConfig,
    pub judge_stride: usize,
}

impl Default for DriftRunConfig {
    fn default() -> Self {
        Self::seeded(7)
    }
}

impl DriftRunConfig {
    pub fn seeded(root: u64) -> Self {
        Self {
            corpus_size: 500,
            corpus_seed: sub_seed(root, 200),
            train: TrainConfig {
                lr: 0.002,
                steps: 400,
                batch_size: 8,
                checkpoint_every: 20,
                optimizer: Optimizer::momentum_free_adam(),
                seed: sub_seed(root, 201),
            },
            judge_stride: 1,
        }
    }
}

/// The planted corpus and the LoRA checkpoints of the drift experiment.
pub fn drift_checkpoints(
    world: &ToyWorld,
    cfg: &DriftRunConfig,
) -> Result<(Vec<Sample>, Vec<(usize, ParameterState)>)> {
    let corpus = world.planted_corpus(cfg.corpus_size, cfg.corpus_seed)?;
    let checkpoints = world.finetune(&corpus, &cfg.train, FinetuneMode::Lora)?;
    Ok((corpus, checkpoints))
}

/// Projects checkpoints onto every world direction and judges them.
pub fn trace_world(
    world: &ToyWorld,
    checkpoints: Vec<(usize, ParameterState)>,
    judge_stride: usize,
) -> Result<Vec<TrajectoryPoint>> {
    let directions: Vec<_> = world.danger.iter().chain(&world.safety).cloned().collect();
    let judge = CachedJudge::new(&world.judge);
    trace(
        checkpoints.into_iter().map(Ok),
        &world.base_state,
        &directions,
        Some(&judge),
        &TraceOptions { judge_stride },
    )
}

/// LoRA fine-tune on a planted corpus, traced against every direction.
pub fn drift_run(world: &ToyWorld, cfg: &DriftRunConfig) -> Result<Vec<TrajectoryPoint>> {
    let (_, checkpoints) = drift_checkpoints(world, cfg)?;
    trace_world(world, checkpoints, cfg.judge_stride)
}

/// Scoring setup: where the scorer is initialized and how it probes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoringConfig {
    /// Linear-path positions along the primary danger direction.
    pub alphas: Vec<f64>,
    pub delta: f64,
    pub eta: f64,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        Self {
            alphas: (0..=10).map(|i| i as f64 / 10.0).collect(),
            delta: DEFAULT_DELTA,
            eta: 1e-3,
        }
    }
}

/// Linear-path sensitivity along the primary danger direction and the
/// full ranking of its positions.
pub fn danger_sensitivity(
    world: &ToyWorld,
    cfg: &ScoringConfig,
) -> Result<(SensitivityProfile, Vec<RankedState>)> {
    let judge = CachedJudge::new(&world.judge);
    let profile = linear_profile(
        &world.base_state,
        world.primary_danger(),
        &cfg.alphas,
        cfg.delta,
        &judge,
    )?;
    let ranked = select_init(&profile, profile.points.len())?;
    Ok((profile, ranked))
}

/// Scorer model at `θ₀ + αV_danger` with the shared fresh adapters.
pub fn scorer_at(world: &ToyWorld, alpha: f64) -> Result<ToyModel> {
    world.model_at(&steer(&world.base_state, world.primary_danger(), alpha)?)
}

pub fn init_id(world: &ToyWorld, alpha: f64) -> String {
    format!("linear:{}:{alpha}", world.primary_danger().tag())
}

/// SQSD records for `corpus` at position `alpha`.
pub fn sqsd_records(
    world: &ToyWorld,
    corpus: &[Sample],
    alpha: f64,
    eta: f64,
    variant: Variant,
) -> Result<Vec<RiskRecord>> {
    let model = scorer_at(world, alpha)?;
    score_corpus(
        &model,
        corpus,
        world.primary_danger(),
        world.primary_safety(),
        eta,
        variant,
        Some(&init_id(world, alpha)),
    )
}

/// Baseline scores at `θ₀`, keyed by baseline, in corpus order.
pub fn baseline_scores(
    world: &ToyWorld,
    corpus: &[Sample],
    anchor_seed: u64,
) -> Result<Vec<(Baseline, Vec<f64>)>> {
    let model = world.lora_model()?;
    let (layer, _) = select_larf_layer(&model, &world.judge)?;
    let anchors = AnchorSet::build(&model, &world.anchor_corpora(anchor_seed)?, layer)?;
    let rows = score_all(&model, &world.judge, &anchors, corpus)?;
    Ok(Baseline::ALL
        .iter()
        .enumerate()
        .map(|(i, b)| (*b, rows.iter().map(|r| r[i].1).collect()))
        .collect())
}

/// Spearman correlation with plant intensity; 0 when undefined.
pub fn intensity_rho(corpus: &[Sample], scores: &[f64]) -> Result<f64> {
    let truth = corpus
        .iter()
        .map(|s| {
            s.plant_intensity
                .ok_or_else(|| Error::invalid(format!("sample `{}` has no plant intensity", s.id)))
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(spearman(scores, &truth).unwrap_or(0.0))
}

/// Fine-tuning used to evaluate each rank stratum.
pub fn eval_train(seed: u64) -> TrainConfig {
    TrainConfig {
        lr: 0.01,
        steps: 100,
        batch_size: 8,
        checkpoint_every: 100,
        optimizer: Optimizer::momentum_free_adam(),
        seed,
    }
}

pub fn evaluator<'a>(
    world: &'a ToyWorld,
    mode: FinetuneMode,
    train: TrainConfig,
) -> Result<FinetuneEvaluator<'a>> {
    let base = world.model_for(mode)?;
    Ok(FinetuneEvaluator {
        base,
        train,
        judge: &world.judge,
    })
}

/// Quintile rank evaluation of `records`.
pub fn rank_eval(
    evaluator: &FinetuneEvaluator,
    method: &str,
    corpus: &[Sample],
    records: &[RiskRecord],
) -> Result<RankReport> {
    evaluator.evaluate_partition(method, corpus, partition_records(records, DEFAULT_STRATA)?)
}

/// Quintile rank evaluation of plain scores in corpus order.
pub fn rank_eval_scores(
    evaluator: &FinetuneEvaluator,
    method: &str,
    corpus: &[Sample],
    scores: &[f64],
) -> Result<RankReport> {
    let scored: Vec<(String, f64)> = corpus
        .iter()
        .map(|s| s.id.clone())
        .zip(scores.iter().copied())
        .collect();
    evaluator.evaluate_partition(method, corpus, partition(&scored, DEFAULT_STRATA)?)
}

/// The planted-corpus ranking experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankingConfig {
    pub corpus_size: usize,
    pub corpus_seed: u64,
    pub anchor_seed: u64,
    pub scoring: ScoringConfig,
    pub eval_train: TrainConfig,
}

impl Default for RankingConfig {
    fn default() -> Self {
        Self::seeded(7)
    }
}

impl RankingConfig {
    pub fn seeded(root: u64) -> Self {
        Self {
            corpus_size: 500,
            corpus_seed: sub_seed(root, 300),
            anchor_seed: sub_seed(root, 301),
            scoring: ScoringConfig::default(),
            eval_train: eval_train(sub_seed(root, 302)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct RankingOutcome {
    pub corpus: Vec<Sample>,
    pub profile: SensitivityProfile,
    pub ranked: Vec<RankedState>,
    /// Full-variant records at the top-ranked position, baseline scores
    /// attached.
    pub records: Vec<RiskRecord>,
    /// Plant-intensity correlation per method, SQSD first.
    pub rho: Vec<(String, f64)>,
    /// Rank reports per method, SQSD first.
    pub reports: Vec<RankReport>,
}

/// Sensitivity-selected SQSD scoring of a planted corpus, the baselines,
/// and a rank evaluation of every method.
pub fn ranking_run(world: &ToyWorld, cfg: &RankingConfig) -> Result<RankingOutcome> {
    let corpus = world.planted_corpus(cfg.corpus_size, cfg.corpus_seed)?;
    let (profile, ranked) = danger_sensitivity(world, &cfg.scoring)?;
    let mut records = sqsd_records(
        world,
        &corpus,
        ranked[0].position,
        cfg.scoring.eta,
        Variant::Full,
    )?;
    let baselines = baseline_scores(world, &corpus, cfg.anchor_seed)?;
    for (i, rec) in records.iter_mut().enumerate() {
        for (b, scores) in &baselines {
            rec.baseline_scores
                .insert(b.as_str().to_string(), scores[i]);
        }
    }
    let sqsd: Vec<f64> = records.iter().map(|r| r.score).collect();
    let mut rho = vec![("sqsd".to_string(), intensity_rho(&corpus, &sqsd)?)];
    let ev = evaluator(world, FinetuneMode::Lora, cfg.eval_train.clone())?;
    let mut reports = vec![rank_eval(&ev, "sqsd", &corpus, &records)?];
    for (b, scores) in &baselines {
        rho.push((b.as_str().to_string(), intensity_rho(&corpus, scores)?));
        reports.push(rank_eval_scores(&ev, b.as_str(), &corpus, scores)?);
    }
    Ok(RankingOutcome {
        corpus,
        profile,
        ranked,
        records,
        rho,
        reports,
    })
}

/// Scores with a small world and evaluates the partition on other widths
/// and fine-tuning modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub root: u64,
    pub scorer_width: usize,
    pub targets: Vec<(usize, FinetuneMode)>,
    pub corpus_size: usize,
    pub corpus_seed: u64,
    pub scoring: ScoringConfig,
    pub eval_train: TrainConfig,
}

impl Default for TransferConfig {
    fn default() -> Self {
        Self::seeded(7)
    }
}

impl TransferConfig {
    pub fn seeded(root: u64) -> Self {
        Self {
            root,
            scorer_width: 16,
            targets: vec![(48, FinetuneMode::Lora), (32, FinetuneMode::Full)],
            corpus_size: 500,
            corpus_seed: sub_seed(root, 300),
            scoring: ScoringConfig::default(),
            eval_train: eval_train(sub_seed(root, 302)),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub corpus: Vec<Sample>,
    pub scorer_alpha: f64,
    pub records: Vec<RiskRecord>,
    /// One report per target, in `targets` order.
    pub reports: Vec<RankReport>,
}

pub fn transfer_run(cfg: &TransferConfig) -> Result<TransferOutcome> {
    let scorer = ToyWorld::build(WorldConfig::seeded(cfg.root).with_width(cfg.scorer_width))?;
    let corpus = scorer.planted_corpus(cfg.corpus_size, cfg.corpus_seed)?;
    let (_, ranked) = danger_sensitivity(&scorer, &cfg.scoring)?;
    let alpha = ranked[0].position;
    let records = sqsd_records(&scorer, &corpus, alpha, cfg.scoring.eta, Variant::Full)?;
    let scored: Vec<(String, f64)> = records
        .iter()
        .map(|r| (r.sample_id.clone(), r.score))
        .collect();
    let mut reports = Vec::new();
    for &(width, mode) in &cfg.targets {
        let world = ToyWorld::build(WorldConfig::seeded(cfg.root).with_width(width))?;
        let ev = evaluator(&world, mode, cfg.eval_train.clone())?;
        let method = format!("sqsd w{} -> {} w{width}", cfg.scorer_width, mode_name(mode));
        reports.push(transfer_protocol(
            |_| Ok(scored.clone()),
            &ev,
            &corpus,
            DEFAULT_STRATA,
            &method,
        )?);
    }
    Ok(TransferOutcome {
        corpus,
        scorer_alpha: alpha,
        records,
        reports,
    })
}

fn mode_name(mode: FinetuneMode) -> &'static str {
    match mode {
        FinetuneMode::Lora => "lora",
        FinetuneMode::Full => "full",
    }
}
