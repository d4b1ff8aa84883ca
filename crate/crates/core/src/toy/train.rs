//! Mini-batch training over the trainable parameters of a [`ToyModel`].

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::Sample;
use super::model::ToyModel;
use crate::checkpoint::ParameterState;
use crate::error::{Error, Result};

/// Something that yields a loss and a flat trainable-space gradient for a
/// batch of item indices.
pub trait Objective: Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Loss and gradient of item `i`.
    fn item(&self, model: &ToyModel, i: usize) -> Result<(f64, Vec<f64>)>;
}

/// Token-mean NLL on each sample.
pub struct Sft<'a> {
    pub samples: &'a [Sample],
}

impl Objective for Sft<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn item(&self, model: &ToyModel, i: usize) -> Result<(f64, Vec<f64>)> {
        let g = model.grads(&self.samples[i])?;
        Ok((g.loss, model.flat_grad(&g)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub chosen: Sample,
    pub rejected: Sample,
}

/// Direct preference objective against a frozen reference model:
/// `-log σ(β [(log π(c) - log π_ref(c)) - (log π(r) - log π_ref(r))])`.
pub struct Preference<'a> {
    pub pairs: &'a [PreferencePair],
    pub reference_logps: Vec<(f64, f64)>,
    pub beta: f64,
}

impl<'a> Preference<'a> {
    pub fn new(pairs: &'a [PreferencePair], reference: &ToyModel, beta: f64) -> Result<Self> {
        if !(beta > 0.0) {
            return Err(Error::invalid("preference beta must be positive"));
        }
        let reference_logps = pairs
            .iter()
            .map(|p| {
                Ok((
                    reference.log_prob(&p.chosen)?,
                    reference.log_prob(&p.rejected)?,
                ))
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            pairs,
            reference_logps,
            beta,
        })
    }
}

impl Objective for Preference<'_> {
    fn len(&self) -> usize {
        self.pairs.len()
    }

    fn item(&self, model: &ToyModel, i: usize) -> Result<(f64, Vec<f64>)> {
        let pair = &self.pairs[i];
        let (ref_c, ref_r) = self.reference_logps[i];
        let gc = model.grads(&pair.chosen)?;
        let gr = model.grads(&pair.rejected)?;
        let (nc, nr) = (
            pair.chosen.response.len() as f64,
            pair.rejected.response.len() as f64,
        );
        let logp_c = -gc.loss * nc;
        let logp_r = -gr.loss * nr;
        let u = self.beta * ((logp_c - ref_c) - (logp_r - ref_r));
        // -log σ(u) and its derivative -σ(-u)
        let loss = (-u).exp().ln_1p();
        let w = -self.beta / (1.0 + u.exp());
        let fc = model.flat_grad(&gc);
        let fr = model.flat_grad(&gr);
        // ∇ log π(y) = -|y| ∇(mean NLL)
        let grad = fc
            .iter()
            .zip(&fr)
            .map(|(c, r)| w * (-nc * c + nr * r))
            .collect();
        Ok((loss, grad))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Optimizer {
    Gd,
    /// Adaptive per-coordinate steps; `beta1 = 0` disables momentum.
    Adam {
        beta1: f64,
        beta2: f64,
        eps: f64,
    },
}

impl Optimizer {
    pub fn momentum_free_adam() -> Self {
        Optimizer::Adam {
            beta1: 0.0,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub steps: usize,
    pub batch_size: usize,
    pub checkpoint_every: usize,
    pub optimizer: Optimizer,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 0.05,
            steps: 200,
            batch_size: 8,
            checkpoint_every: 10,
            optimizer: Optimizer::Gd,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::invalid(format!(
                "learning rate {} must be finite and >= 0",
                self.lr
            )));
        }
        if self.batch_size == 0 || self.checkpoint_every == 0 {
            return Err(Error::invalid(
                "batch size and checkpoint interval must be positive",
            ));
        }
        Ok(())
    }
}

struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

/// Trains in place and calls `on_checkpoint(step, model)` at step 0 and
/// every `checkpoint_every` steps. Returns the per-step mean batch loss.
pub fn train_with<O, F>(
    model: &mut ToyModel,
    objective: &O,
    cfg: &TrainConfig,
    mut on_checkpoint: F,
) -> Result<Vec<f64>>
where
    O: Objective + ?Sized,
    F: FnMut(usize, &ToyModel) -> Result<()>,
{
    cfg.validate()?;
    if objective.is_empty() {
        return Err(Error::invalid("training corpus is empty"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = Vec::new();
    let mut cursor = 0;
    let n_params = model.trainable_len();
    let mut adam = AdamState {
        m: vec![0.0; n_params],
        v: vec![0.0; n_params],
        t: 0,
    };
    let mut losses = Vec::with_capacity(cfg.steps);
    on_checkpoint(0, model)?;
    for step in 1..=cfg.steps {
        let mut batch = Vec::with_capacity(cfg.batch_size);
        while batch.len() < cfg.batch_size {
            if cursor == order.len() {
                order = (0..objective.len()).collect();
                order.shuffle(&mut rng);
                cursor = 0;
            }
            batch.push(order[cursor]);
            cursor += 1;
        }
        let items: Vec<(f64, Vec<f64>)> = batch
            .par_iter()
            .map(|&i| objective.item(model, i))
            .collect::<Result<_>>()?;
        let scale = 1.0 / items.len() as f64;
        let mut loss = 0.0;
        let mut grad = vec![0.0; n_params];
        for (l, g) in &items {
            loss += l * scale;
            for (acc, x) in grad.iter_mut().zip(g) {
                *acc += x * scale;
            }
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        losses.push(loss);
        let mut theta = model.trainable_vector();
        match cfg.optimizer {
            Optimizer::Gd => {
                for (p, g) in theta.iter_mut().zip(&grad) {
                    *p -= cfg.lr * g;
                }
            }
            Optimizer::Adam { beta1, beta2, eps } => {
                adam.t += 1;
                let bc1 = 1.0 - beta1.powi(adam.t);
                let bc2 = 1.0 - beta2.powi(adam.t);
                for (i, p) in theta.iter_mut().enumerate() {
                    adam.m[i] = beta1 * adam.m[i] + (1.0 - beta1) * grad[i];
                    adam.v[i] = beta2 * adam.v[i] + (1.0 - beta2) * grad[i] * grad[i];
                    let mhat = adam.m[i] / bc1;
                    let vhat = adam.v[i] / bc2;
                    *p -= cfg.lr * mhat / (vhat.sqrt() + eps);
                }
            }
        }
        if theta.iter().any(|p| !p.is_finite()) {
            return Err(Error::Divergence { step, loss });
        }
        model.set_trainable_vector(&theta)?;
        if step % cfg.checkpoint_every == 0 {
            on_checkpoint(step, model)?;
        }
    }
    Ok(losses)
}

/// Trains in place and returns merged-weight checkpoints, step 0 included.
pub fn train<O: Objective + ?Sized>(
    model: &mut ToyModel,
    objective: &O,
    cfg: &TrainConfig,
) -> Result<Vec<(usize, ParameterState)>> {
    let mut out = Vec::new();
    train_with(model, objective, cfg, |step, m| {
        out.push((step, m.merged_state()?));
        Ok(())
    })?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::toy::corpus::{generate_corpus, CorpusSpec, TaskRules};
    use crate::toy::model::{FinetuneMode, ToyConfig};

    fn corpus() -> Vec<Sample> {
        generate_corpus(&TaskRules::new(16).unwrap(), &CorpusSpec::planted(12, 1)).unwrap()
    }

    #[test]
    fn zero_lr_keeps_every_checkpoint_equal() {
        let samples = corpus();
        let mut m = ToyModel::init(ToyConfig::default(), 1).unwrap();
        let cfg = TrainConfig {
            lr: 0.0,
            steps: 7,
            checkpoint_every: 3,
            ..TrainConfig::default()
        };
        let cps = train(&mut m, &Sft { samples: &samples }, &cfg).unwrap();
        assert_eq!(cps.len(), 7 / 3 + 1);
        assert_eq!(cps.iter().map(|c| c.0).collect::<Vec<_>>(), vec![0, 3, 6]);
        assert!(cps.iter().all(|c| c.1 == cps[0].1));
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let samples = corpus();
        let cfg = TrainConfig {
            lr: 0.05,
            steps: 40,
            ..TrainConfig::default()
        };
        let run = || {
            let mut m =
                ToyModel::init(ToyConfig::default().with_mode(FinetuneMode::Full), 2).unwrap();
            let losses =
                train_with(&mut m, &Sft { samples: &samples }, &cfg, |_, _| Ok(())).unwrap();
            (m, losses)
        };
        let (a, la) = run();
        let (b, _) = run();
        assert_eq!(a, b);
        let head: f64 = la[..5].iter().sum();
        let tail: f64 = la[la.len() - 5..].iter().sum();
        assert!(tail < head);
    }

    struct Blowup;

    impl Objective for Blowup {
        fn len(&self) -> usize {
            4
        }

        fn item(&self, model: &ToyModel, _: usize) -> Result<(f64, Vec<f64>)> {
            let norm: f64 = model.trainable_vector().iter().map(|x| x * x).sum();
            let loss = if norm > 1e6 { f64::NAN } else { 1.0 };
            Ok((loss, vec![-1.0; model.trainable_len()]))
        }
    }

    #[test]
    fn divergence_reports_step() {
        let mut m = ToyModel::init(ToyConfig::default(), 3).unwrap();
        let cfg = TrainConfig {
            lr: 100.0,
            steps: 50,
            ..TrainConfig::default()
        };
        match train(&mut m, &Blowup, &cfg) {
            Err(Error::Divergence { step, .. }) => assert_eq!(step, 2),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let mut m = ToyModel::init(ToyConfig::default(), 1).unwrap();
        assert!(train(&mut m, &Sft { samples: &[] }, &TrainConfig::default()).is_err());
    }
}
