//! A complete synthetic setting: an aligned base model `θ₀`, danger and
//! safety directions learned from it, and a judge.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{
    generate_corpus, random_prompt, CorpusSpec, IntensityDist, PromptFamily, Sample, TaskRules,
    Token,
};
use super::judge::SyntheticJudge;
use super::model::{FinetuneMode, ToyConfig, ToyModel};
use super::train::{train, train_with, Optimizer, Preference, PreferencePair, Sft, TrainConfig};
use crate::baselines::AnchorCorpora;
use crate::checkpoint::ParameterState;
use crate::direction::{build_direction, DirectionLabel, DirectionSet};
use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub model: ToyConfig,
    pub seed: u64,
    /// Seed of the shared `A₀` used by every LoRA run and by the scorer.
    pub adapter_seed: u64,
    pub pretrain: TrainConfig,
    pub pretrain_samples: usize,
    pub danger_train: TrainConfig,
    pub danger_samples: usize,
    pub danger_tags: Vec<String>,
    pub safety_train: TrainConfig,
    pub safety_pairs: usize,
    /// Share of safety pairs that are benign-prompt helpfulness pairs
    /// (correct chain preferred over a random response).
    pub helpfulness_fraction: f64,
    pub preference_beta: f64,
    pub judge_probes: usize,
    pub judge_len: usize,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self::seeded(7)
    }
}

impl WorldConfig {
    /// Default world with every seed derived from `root`.
    pub fn seeded(root: u64) -> Self {
        let adam = Optimizer::momentum_free_adam();
        Self {
            model: ToyConfig::default(),
            seed: root,
            adapter_seed: sub_seed(root, 100),
            pretrain: TrainConfig {
                lr: 0.01,
                steps: 1500,
                batch_size: 8,
                checkpoint_every: 1500,
                optimizer: adam,
                seed: sub_seed(root, 101),
            },
            pretrain_samples: 400,
            danger_train: TrainConfig {
                lr: 0.01,
                steps: 200,
                batch_size: 8,
                checkpoint_every: 200,
                optimizer: adam,
                seed: sub_seed(root, 102),
            },
            danger_samples: 200,
            danger_tags: vec!["aegis-unsafe".into(), "beaver-unsafe".into()],
            safety_train: TrainConfig {
                lr: 0.01,
                steps: 200,
                batch_size: 8,
                checkpoint_every: 200,
                optimizer: adam,
                seed: sub_seed(root, 103),
            },
            safety_pairs: 200,
            helpfulness_fraction: 0.5,
            preference_beta: 0.1,
            judge_probes: 64,
            judge_len: 8,
        }
    }

    pub fn with_width(mut self, width: usize) -> Self {
        self.model.width = width;
        self
    }
}

#[derive(Debug, Clone)]
pub struct ToyWorld {
    pub config: WorldConfig,
    pub rules: TaskRules,
    /// Merged weights of `θ₀`.
    pub base_state: ParameterState,
    pub danger: Vec<DirectionSet>,
    pub safety: Vec<DirectionSet>,
    pub judge: SyntheticJudge,
}

/// Deterministic child seed.
pub fn sub_seed(seed: u64, salt: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(salt)
}

impl ToyWorld {
    pub fn build(config: WorldConfig) -> Result<Self> {
        let rules = TaskRules::new(config.model.vocab)?;
        let mc = &config.model;
        let mut base = ToyModel::init(mc.clone().with_mode(FinetuneMode::Full), config.seed)?;
        let mut pre = Vec::new();
        for (i, family) in [PromptFamily::Benign, PromptFamily::Harmful]
            .into_iter()
            .enumerate()
        {
            pre.extend(generate_corpus(
                &rules,
                &CorpusSpec {
                    n: config.pretrain_samples / 2,
                    intensity: IntensityDist::Fixed { value: 0.0 },
                    min_response: 4,
                    max_response: 16,
                    min_prompt: 3,
                    max_prompt: 6,
                    family,
                    id_prefix: format!("pre{i}-"),
                    seed: sub_seed(config.seed, 1 + i as u64),
                },
            )?);
        }
        train_with(
            &mut base,
            &Sft { samples: &pre },
            &config.pretrain,
            |_, _| Ok(()),
        )?;
        let base_state = base.merged_state()?;
        let judge = SyntheticJudge::new(
            mc.clone(),
            rules,
            config.judge_probes,
            config.judge_len,
            sub_seed(config.seed, 3),
        )?;
        let mut world = Self {
            config,
            rules,
            base_state,
            danger: Vec::new(),
            safety: Vec::new(),
            judge,
        };
        let adapted = world.adapted_modules();
        let names = || adapted.iter().map(String::as_str);
        for (i, tag) in world.config.danger_tags.clone().iter().enumerate() {
            let data = world.harmful_corpus(
                world.config.danger_samples,
                1.0,
                sub_seed(world.config.seed, 10 + i as u64),
            )?;
            let mut m = world.lora_model()?;
            let mut cfg = world.config.danger_train.clone();
            cfg.seed = sub_seed(cfg.seed, i as u64);
            train_with(&mut m, &Sft { samples: &data }, &cfg, |_, _| Ok(()))?;
            let v = build_direction(
                &world.base_state,
                &m.merged_state()?,
                DirectionLabel::Danger,
                tag,
            )?;
            world.danger.push(v.restrict(names())?);
        }
        let pairs =
            world.preference_pairs(world.config.safety_pairs, sub_seed(world.config.seed, 20))?;
        let mut m = world.lora_model()?;
        let reference = m.clone();
        let objective = Preference::new(&pairs, &reference, world.config.preference_beta)?;
        train_with(
            &mut m,
            &objective,
            &world.config.safety_train,
            |_, _| Ok(()),
        )?;
        let v = build_direction(
            &world.base_state,
            &m.merged_state()?,
            DirectionLabel::Safety,
            "pku-saferlhf",
        )?;
        world.safety.push(v.restrict(names())?);
        Ok(world)
    }

    pub fn adapted_modules(&self) -> Vec<String> {
        (0..self.config.model.depth)
            .map(super::model::layer_name)
            .collect()
    }

    /// `θ₀` with fresh shared adapters in LoRA mode.
    pub fn lora_model(&self) -> Result<ToyModel> {
        self.model_at(&self.base_state)
    }

    /// Any merged state with fresh shared adapters in LoRA mode: the scorer's
    /// initialization.
    pub fn model_at(&self, state: &ParameterState) -> Result<ToyModel> {
        let cfg = self.config.model.clone().with_mode(FinetuneMode::Lora);
        Ok(ToyModel::from_states(cfg, state, None)?.with_fresh_adapters(self.config.adapter_seed))
    }

    /// `θ₀` for full-parameter fine-tuning.
    pub fn full_model(&self) -> Result<ToyModel> {
        let cfg = self.config.model.clone().with_mode(FinetuneMode::Full);
        ToyModel::from_states(cfg, &self.base_state, None)
    }

    pub fn model_for(&self, mode: FinetuneMode) -> Result<ToyModel> {
        match mode {
            FinetuneMode::Lora => self.lora_model(),
            FinetuneMode::Full => self.full_model(),
        }
    }

    pub fn primary_danger(&self) -> &DirectionSet {
        &self.danger[0]
    }

    pub fn primary_safety(&self) -> &DirectionSet {
        &self.safety[0]
    }

    /// Harmful-family prompts with responses at fixed plant intensity.
    pub fn harmful_corpus(&self, n: usize, intensity: f64, seed: u64) -> Result<Vec<Sample>> {
        generate_corpus(
            &self.rules,
            &CorpusSpec {
                n,
                intensity: IntensityDist::Fixed { value: intensity },
                min_response: 6,
                max_response: 12,
                min_prompt: 3,
                max_prompt: 6,
                family: PromptFamily::Harmful,
                id_prefix: "h".into(),
                seed,
            },
        )
    }

    /// Preference pairs. Harmlessness pairs: harmful prompt, benign chain
    /// preferred over the danger chain from the same first token.
    /// Helpfulness pairs (share `helpfulness_fraction`): benign prompt,
    /// benign chain preferred over random tokens.
    pub fn preference_pairs(&self, n: usize, seed: u64) -> Result<Vec<PreferencePair>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n_help = (self.config.helpfulness_fraction.clamp(0.0, 1.0) * n as f64).round() as usize;
        let vocab = self.rules.vocab as Token;
        (0..n)
            .map(|i| {
                let helpful = i < n_help;
                let family = if helpful {
                    PromptFamily::Benign
                } else {
                    PromptFamily::Harmful
                };
                let plen = rng.gen_range(3..=6);
                let prompt = random_prompt(&self.rules, family, plen, &mut rng);
                let first: Token = rng.gen_range(0..vocab);
                let len = rng.gen_range(6..=12);
                let chosen = self.rules.chain(first, len, false);
                let rejected = if helpful {
                    std::iter::once(first)
                        .chain((1..len).map(|_| rng.gen_range(0..vocab)))
                        .collect()
                } else {
                    self.rules.chain(first, len, true)
                };
                let mk = |response: Vec<Token>, tag: &str, p: f64| Sample {
                    id: format!("pair{i}-{tag}"),
                    prompt: prompt.clone(),
                    response,
                    plant_intensity: Some(p),
                };
                Ok(PreferencePair {
                    chosen: mk(chosen, "c", 0.0),
                    rejected: mk(rejected, "r", if helpful { 0.0 } else { 1.0 }),
                })
            })
            .collect()
    }

    /// Ten samples per anchor corpus: harmful prompts with danger responses,
    /// harmful prompts with benign responses, benign prompts with benign
    /// responses.
    pub fn anchor_corpora(&self, seed: u64) -> Result<AnchorCorpora> {
        let mut benign = CorpusSpec::planted(10, sub_seed(seed, 3));
        benign.intensity = IntensityDist::Fixed { value: 0.0 };
        benign.id_prefix = "safe2-".into();
        Ok(AnchorCorpora {
            harmful: self.harmful_corpus(10, 1.0, sub_seed(seed, 1))?,
            safe1: self.harmful_corpus(10, 0.0, sub_seed(seed, 2))?,
            safe2: generate_corpus(&self.rules, &benign)?,
        })
    }

    /// The planted corpus: benign prompts, uniform intensities.
    pub fn planted_corpus(&self, n: usize, seed: u64) -> Result<Vec<Sample>> {
        generate_corpus(&self.rules, &CorpusSpec::planted(n, seed))
    }

    /// Fine-tunes `θ₀` on `corpus` and returns merged checkpoints.
    pub fn finetune(
        &self,
        corpus: &[Sample],
        cfg: &TrainConfig,
        mode: FinetuneMode,
    ) -> Result<Vec<(usize, ParameterState)>> {
        let mut m = self.model_for(mode)?;
        train(&mut m, &Sft { samples: corpus }, cfg)
    }
}
