//! A small differentiable next-token model with LoRA adapters.
//!
//! For response position `i` the input is `embed[prev] + mean(context[prompt])`,
//! where `prev` is the previous response token (or the last prompt token for
//! `i = 0`). The input passes through `depth` blocks of `tanh(W' h)` with
//! `W' = W + (alpha / r) B A`, then a linear head produces logits over the
//! vocabulary. Loss is the mean token NLL over response positions.
//!
//! All arithmetic is f64 so finite-difference checks are meaningful; states
//! are exported to the 32-bit [`ParameterState`] representation.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::corpus::{Sample, Token};
use super::linalg::{dot, Mat};
use crate::checkpoint::{AdapterState, ParameterState};
use crate::error::{Error, Result};
use crate::tensor::LoraDelta;

pub const EMBED: &str = "embed";
pub const CONTEXT: &str = "context";
pub const HEAD: &str = "head";

pub fn layer_name(i: usize) -> String {
    format!("layers.{i}.fc")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinetuneMode {
    /// Only adapter factors train; base weights are frozen.
    Lora,
    /// Block weights and the head train directly.
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub vocab: usize,
    pub width: usize,
    pub depth: usize,
    pub lora_rank: usize,
    pub lora_alpha: f64,
    pub max_seq_len: usize,
    pub mode: FinetuneMode,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            vocab: 16,
            width: 32,
            depth: 2,
            lora_rank: 4,
            lora_alpha: 8.0,
            max_seq_len: 24,
            mode: FinetuneMode::Lora,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab < 2 || self.width == 0 || self.depth == 0 || self.max_seq_len < 2 {
            return Err(Error::invalid(format!("invalid toy architecture {self:?}")));
        }
        if self.lora_rank == 0 || self.lora_rank > self.width {
            return Err(Error::invalid(format!(
                "LoRA rank {} must be in 1..={}",
                self.lora_rank, self.width
            )));
        }
        if !(self.lora_alpha > 0.0) {
            return Err(Error::invalid("LoRA alpha must be positive"));
        }
        Ok(())
    }

    pub fn scaling(&self) -> f64 {
        self.lora_alpha / self.lora_rank as f64
    }

    pub fn with_mode(mut self, mode: FinetuneMode) -> Self {
        self.mode = mode;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adapter {
    /// `r x d_in`
    pub a: Mat,
    /// `d_out x r`
    pub b: Mat,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyModel {
    config: ToyConfig,
    embed: Mat,
    context: Mat,
    layers: Vec<Mat>,
    head: Mat,
    adapters: Vec<Adapter>,
}

/// Gradients of the mean response NLL.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub loss: f64,
    /// `∂L/∂W'` for every block and the head.
    pub effective: BTreeMap<String, Mat>,
    /// `(∂L/∂A, ∂L/∂B)` per adapted block; empty in full mode.
    pub lora: BTreeMap<String, (Mat, Mat)>,
}

/// Weights with adapters folded in, ready for repeated forward passes.
struct Compiled<'a> {
    model: &'a ToyModel,
    layers: Vec<Mat>,
}

impl Compiled<'_> {
    /// `hs[0]` is the input, `hs[l + 1]` the output of block `l`.
    fn hidden(&self, x0: Vec<f64>) -> Vec<Vec<f64>> {
        let mut hs = Vec::with_capacity(self.layers.len() + 1);
        hs.push(x0);
        for w in &self.layers {
            let mut pre = vec![0.0; w.rows];
            w.matvec(hs.last().unwrap(), &mut pre);
            pre.iter_mut().for_each(|v| *v = v.tanh());
            hs.push(pre);
        }
        hs
    }

    fn logits(&self, h: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.model.config.vocab];
        self.model.head.matvec(h, &mut out);
        out
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + logits.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

impl ToyModel {
    /// Random base weights from `seed`; adapters get `A` from the same seed
    /// stream and `B = 0`.
    pub fn init(config: ToyConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (v, d) = (config.vocab, config.width);
        let embed = Mat::gaussian(v, d, std::f64::consts::FRAC_1_SQRT_2, &mut rng);
        let context = Mat::gaussian(v, d, std::f64::consts::FRAC_1_SQRT_2, &mut rng);
        let layers = (0..config.depth)
            .map(|_| Mat::gaussian(d, d, 1.0 / (d as f64).sqrt(), &mut rng))
            .collect();
        let head = Mat::gaussian(v, d, 1.0 / (d as f64).sqrt(), &mut rng);
        let mut model = Self {
            config,
            embed,
            context,
            layers,
            head,
            adapters: Vec::new(),
        };
        model.reset_adapters(seed ^ 0xA5A5_A5A5);
        Ok(model)
    }

    /// Fresh adapters: `A ~ U(-1/√d, 1/√d)`, `B = 0`.
    pub fn reset_adapters(&mut self, adapter_seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(adapter_seed);
        let (d, r) = (self.config.width, self.config.lora_rank);
        let bound = 1.0 / (d as f64).sqrt();
        self.adapters = (0..self.config.depth)
            .map(|_| Adapter {
                a: Mat::uniform(r, d, bound, &mut rng),
                b: Mat::zeros(d, r),
            })
            .collect();
    }

    pub fn with_fresh_adapters(mut self, adapter_seed: u64) -> Self {
        self.reset_adapters(adapter_seed);
        self
    }

    pub fn config(&self) -> &ToyConfig {
        &self.config
    }

    pub fn mode(&self) -> FinetuneMode {
        self.config.mode
    }

    pub fn set_mode(&mut self, mode: FinetuneMode) {
        self.config.mode = mode;
    }

    pub fn adapters(&self) -> &[Adapter] {
        &self.adapters
    }

    pub fn adapters_mut(&mut self) -> &mut [Adapter] {
        &mut self.adapters
    }

    pub fn layer(&self, i: usize) -> &Mat {
        &self.layers[i]
    }

    pub fn layer_mut(&mut self, i: usize) -> &mut Mat {
        &mut self.layers[i]
    }

    pub fn head(&self) -> &Mat {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut Mat {
        &mut self.head
    }

    /// Names of the adapter-carrying modules, in canonical order.
    pub fn adapted_modules(&self) -> Vec<String> {
        (0..self.config.depth).map(layer_name).collect()
    }

    /// `W_l + (alpha / r) B_l A_l`
    pub fn effective_layer(&self, l: usize) -> Mat {
        let mut w = self.layers[l].clone();
        if let Some(ad) = self.adapters.get(l) {
            let ba = ad.b.matmul(&ad.a);
            w.add_scaled(self.config.scaling(), &ba);
        }
        w
    }

    fn compile(&self) -> Compiled<'_> {
        Compiled {
            model: self,
            layers: (0..self.config.depth)
                .map(|l| self.effective_layer(l))
                .collect(),
        }
    }

    fn context_vector(&self, prompt: &[Token]) -> Vec<f64> {
        let mut c = vec![0.0; self.config.width];
        for &t in prompt {
            for (ci, v) in c.iter_mut().zip(self.context.row(t as usize)) {
                *ci += v;
            }
        }
        let n = prompt.len().max(1) as f64;
        c.iter_mut().for_each(|v| *v /= n);
        c
    }

    fn input(&self, ctx: &[f64], prev: Token) -> Vec<f64> {
        self.embed
            .row(prev as usize)
            .iter()
            .zip(ctx)
            .map(|(a, b)| a + b)
            .collect()
    }

    fn check(&self, sample: &Sample) -> Result<()> {
        sample.validate(self.config.vocab, self.config.max_seq_len)
    }

    /// Previous token feeding each response position.
    fn prev_tokens(sample: &Sample) -> impl Iterator<Item = (Token, Token)> + '_ {
        let last_prompt = *sample.prompt.last().unwrap();
        std::iter::once(last_prompt)
            .chain(sample.response.iter().copied())
            .zip(sample.response.iter().copied())
    }

    /// Per-response-position NLL.
    pub fn token_loss_profile(&self, sample: &Sample) -> Result<Vec<f64>> {
        self.check(sample)?;
        let c = self.compile();
        let ctx = self.context_vector(&sample.prompt);
        Ok(Self::prev_tokens(sample)
            .map(|(prev, target)| {
                let hs = c.hidden(self.input(&ctx, prev));
                let lp = log_softmax(&c.logits(hs.last().unwrap()));
                -lp[target as usize]
            })
            .collect())
    }

    /// Mean NLL over response positions.
    pub fn loss(&self, sample: &Sample) -> Result<f64> {
        let p = self.token_loss_profile(sample)?;
        Ok(p.iter().sum::<f64>() / p.len() as f64)
    }

    /// Sum of response-token log-probabilities.
    pub fn log_prob(&self, sample: &Sample) -> Result<f64> {
        Ok(-self.token_loss_profile(sample)?.iter().sum::<f64>())
    }

    /// Exact gradients of [`ToyModel::loss`].
    pub fn grads(&self, sample: &Sample) -> Result<Gradients> {
        self.check(sample)?;
        let c = self.compile();
        let ctx = self.context_vector(&sample.prompt);
        let (d, v, depth) = (self.config.width, self.config.vocab, self.config.depth);
        let inv_len = 1.0 / sample.response.len() as f64;
        let mut g_layers: Vec<Mat> = (0..depth).map(|_| Mat::zeros(d, d)).collect();
        let mut g_head = Mat::zeros(v, d);
        let mut loss = 0.0;
        let mut dh = vec![0.0; d];
        for (prev, target) in Self::prev_tokens(sample) {
            let hs = c.hidden(self.input(&ctx, prev));
            let lp = log_softmax(&c.logits(&hs[depth]));
            loss -= lp[target as usize];
            let mut dlogits: Vec<f64> = lp.iter().map(|l| l.exp() * inv_len).collect();
            dlogits[target as usize] -= inv_len;
            g_head.add_outer(1.0, &dlogits, &hs[depth]);
            self.head.tmatvec(&dlogits, &mut dh);
            for l in (0..depth).rev() {
                let dpre: Vec<f64> = dh
                    .iter()
                    .zip(&hs[l + 1])
                    .map(|(g, h)| g * (1.0 - h * h))
                    .collect();
                g_layers[l].add_outer(1.0, &dpre, &hs[l]);
                if l > 0 {
                    c.layers[l].tmatvec(&dpre, &mut dh);
                }
            }
        }
        let mut effective = BTreeMap::new();
        let mut lora = BTreeMap::new();
        let s = self.config.scaling();
        for (l, g) in g_layers.into_iter().enumerate() {
            let name = layer_name(l);
            if self.config.mode == FinetuneMode::Lora {
                let ad = &self.adapters[l];
                let grad_b = g.matmul(&ad.a.transpose()).scaled(s);
                let grad_a = ad.b.transpose().matmul(&g).scaled(s);
                lora.insert(name.clone(), (grad_a, grad_b));
            }
            effective.insert(name, g);
        }
        effective.insert(HEAD.to_string(), g_head);
        Ok(Gradients {
            loss: loss * inv_len,
            effective,
            lora,
        })
    }

    /// Trainable parameters flattened in canonical order: per adapted module
    /// `A` then `B` (LoRA mode), or `head` then each block weight (full mode).
    pub fn trainable_vector(&self) -> Vec<f64> {
        let mut out = Vec::new();
        match self.config.mode {
            FinetuneMode::Lora => {
                for ad in &self.adapters {
                    out.extend(&ad.a.data);
                    out.extend(&ad.b.data);
                }
            }
            FinetuneMode::Full => {
                out.extend(&self.head.data);
                for w in &self.layers {
                    out.extend(&w.data);
                }
            }
        }
        out
    }

    pub fn set_trainable_vector(&mut self, v: &[f64]) -> Result<()> {
        let expected = self.trainable_len();
        if v.len() != expected {
            return Err(Error::invalid(format!(
                "trainable vector has {} entries, expected {expected}",
                v.len()
            )));
        }
        let mut off = 0;
        let mut take = |dst: &mut Vec<f64>| {
            let n = dst.len();
            dst.copy_from_slice(&v[off..off + n]);
            off += n;
        };
        match self.config.mode {
            FinetuneMode::Lora => {
                for ad in &mut self.adapters {
                    take(&mut ad.a.data);
                    take(&mut ad.b.data);
                }
            }
            FinetuneMode::Full => {
                take(&mut self.head.data);
                for w in &mut self.layers {
                    take(&mut w.data);
                }
            }
        }
        Ok(())
    }

    pub fn trainable_len(&self) -> usize {
        let (d, r, v) = (self.config.width, self.config.lora_rank, self.config.vocab);
        match self.config.mode {
            FinetuneMode::Lora => self.config.depth * 2 * d * r,
            FinetuneMode::Full => v * d + self.config.depth * d * d,
        }
    }

    /// Gradient flattened in the order of [`ToyModel::trainable_vector`].
    pub fn flat_grad(&self, g: &Gradients) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.trainable_len());
        match self.config.mode {
            FinetuneMode::Lora => {
                for l in 0..self.config.depth {
                    let (ga, gb) = &g.lora[&layer_name(l)];
                    out.extend(&ga.data);
                    out.extend(&gb.data);
                }
            }
            FinetuneMode::Full => {
                out.extend(&g.effective[HEAD].data);
                for l in 0..self.config.depth {
                    out.extend(&g.effective[&layer_name(l)].data);
                }
            }
        }
        out
    }

    /// Hidden activations for every layer at the position that consumes
    /// `prev` (`hs[0]` is the input).
    pub fn hidden_states(&self, prompt: &[Token], prev: Token) -> Vec<Vec<f64>> {
        let c = self.compile();
        let ctx = self.context_vector(prompt);
        c.hidden(self.input(&ctx, prev))
    }

    /// Next-token log-probabilities after `prev`.
    pub fn next_log_probs(&self, prompt: &[Token], prev: Token) -> Vec<f64> {
        let c = self.compile();
        let ctx = self.context_vector(prompt);
        let hs = c.hidden(self.input(&ctx, prev));
        log_softmax(&c.logits(&hs[self.config.depth]))
    }

    /// Greedy continuation of `steps` tokens after a forced `first` token.
    pub fn greedy(&self, prompt: &[Token], first: Token, steps: usize) -> Vec<Token> {
        let c = self.compile();
        let ctx = self.context_vector(prompt);
        let mut out = vec![first];
        let mut t = first;
        for _ in 0..steps {
            let hs = c.hidden(self.input(&ctx, t));
            let logits = c.logits(&hs[self.config.depth]);
            t = argmax(&logits) as Token;
            out.push(t);
        }
        out
    }

    /// Effective weights of every module.
    pub fn merged_state(&self) -> Result<ParameterState> {
        let mut modules = BTreeMap::new();
        modules.insert(EMBED.to_string(), self.embed.to_weight()?);
        modules.insert(CONTEXT.to_string(), self.context.to_weight()?);
        modules.insert(HEAD.to_string(), self.head.to_weight()?);
        for l in 0..self.config.depth {
            modules.insert(layer_name(l), self.effective_layer(l).to_weight()?);
        }
        Ok(ParameterState::from_modules(modules))
    }

    /// Base weights without adapters.
    pub fn base_state(&self) -> Result<ParameterState> {
        let mut modules = BTreeMap::new();
        modules.insert(EMBED.to_string(), self.embed.to_weight()?);
        modules.insert(CONTEXT.to_string(), self.context.to_weight()?);
        modules.insert(HEAD.to_string(), self.head.to_weight()?);
        for (l, w) in self.layers.iter().enumerate() {
            modules.insert(layer_name(l), w.to_weight()?);
        }
        Ok(ParameterState::from_modules(modules))
    }

    pub fn adapter_state(&self) -> Result<AdapterState> {
        let mut modules = BTreeMap::new();
        for (l, ad) in self.adapters.iter().enumerate() {
            modules.insert(
                layer_name(l),
                LoraDelta::new(ad.a.to_weight()?, ad.b.to_weight()?, self.config.lora_alpha)?,
            );
        }
        Ok(AdapterState { modules })
    }

    /// Rebuilds a model from a base state and optional adapters. Without
    /// adapters, `A` and `B` are zero.
    pub fn from_states(
        config: ToyConfig,
        base: &ParameterState,
        adapter: Option<&AdapterState>,
    ) -> Result<Self> {
        config.validate()?;
        let (v, d) = (config.vocab, config.width);
        let fetch = |name: &str, rows: usize, cols: usize| -> Result<Mat> {
            let w = base
                .get(name)
                .ok_or_else(|| Error::ModuleMismatch(format!("state lacks module `{name}`")))?;
            if w.shape() != (rows, cols) {
                return Err(Error::Structure {
                    module: name.to_string(),
                    reason: format!("expected {rows}x{cols}, found {:?}", w.shape()),
                });
            }
            Ok(Mat::from_weight(w))
        };
        let embed = fetch(EMBED, v, d)?;
        let context = fetch(CONTEXT, v, d)?;
        let head = fetch(HEAD, v, d)?;
        let layers = (0..config.depth)
            .map(|l| fetch(&layer_name(l), d, d))
            .collect::<Result<Vec<_>>>()?;
        let r = config.lora_rank;
        let adapters = (0..config.depth)
            .map(|l| match adapter.and_then(|a| a.get(&layer_name(l))) {
                Some(delta) => {
                    if delta.a.shape() != (r, d) || delta.b.shape() != (d, r) {
                        return Err(Error::Structure {
                            module: layer_name(l),
                            reason: "adapter shape does not match the toy config".into(),
                        });
                    }
                    Ok(Adapter {
                        a: Mat::from_weight(&delta.a),
                        b: Mat::from_weight(&delta.b),
                    })
                }
                None => Ok(Adapter {
                    a: Mat::zeros(r, d),
                    b: Mat::zeros(d, r),
                }),
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            config,
            embed,
            context,
            layers,
            head,
            adapters,
        })
    }

    /// Folds the adapters into the base weights and zeroes them.
    pub fn merge_adapters(&mut self) {
        for l in 0..self.config.depth {
            self.layers[l] = self.effective_layer(l);
        }
        for ad in &mut self.adapters {
            ad.a = Mat::zeros(ad.a.rows, ad.a.cols);
            ad.b = Mat::zeros(ad.b.rows, ad.b.cols);
        }
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Cosine similarity; `None` when either vector is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> Option<f64> {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        None
    } else {
        Some(dot(a, b) / (na * nb))
    }
}
