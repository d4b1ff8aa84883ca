//! Reference sample scorers, all computed on the toy model.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::toy::corpus::Sample;
use crate::toy::judge::SyntheticJudge;
use crate::toy::linalg::{dot, norm};
use crate::toy::model::{cosine, ToyModel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Baseline {
    RewardOracle,
    BiAnchorReps,
    BiAnchorGrad,
    SelfInfN,
    Larf,
}

impl Baseline {
    pub const ALL: [Baseline; 5] = [
        Baseline::RewardOracle,
        Baseline::BiAnchorReps,
        Baseline::BiAnchorGrad,
        Baseline::SelfInfN,
        Baseline::Larf,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Baseline::RewardOracle => "reward_oracle",
            Baseline::BiAnchorReps => "bi_anchor_reps",
            Baseline::BiAnchorGrad => "bi_anchor_grad",
            Baseline::SelfInfN => "self_inf_n",
            Baseline::Larf => "larf",
        }
    }
}

/// Anchor vectors for the representation and gradient baselines.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnchorSet {
    /// Final-layer representations of harmful anchor samples.
    pub harmful_reps: Vec<Vec<f64>>,
    /// Mean unit gradients of the harmful and the two safe anchor corpora.
    pub harmful_grad: Vec<f64>,
    pub safe_grads: [Vec<f64>; 2],
    /// Layer used for the layer-aware score (block output index, 0-based).
    pub layer_index: usize,
    /// Mean representations at `layer_index`.
    pub unsafe_mean: Vec<f64>,
    pub safe_mean: Vec<f64>,
}

/// Representation of the last response position: the hidden state after
/// consuming the final response token (`layer` = block index, or `depth - 1`
/// for the final layer).
pub fn representation(model: &ToyModel, sample: &Sample, layer: usize) -> Result<Vec<f64>> {
    sample.validate(model.config().vocab, model.config().max_seq_len)?;
    if layer >= model.config().depth {
        return Err(Error::invalid(format!(
            "layer {layer} out of range 0..{}",
            model.config().depth
        )));
    }
    let last = *sample.response.last().unwrap();
    Ok(model
        .hidden_states(&sample.prompt, last)
        .swap_remove(layer + 1))
}

/// Flattened trainable-parameter gradient of the sample loss.
pub fn flat_gradient(model: &ToyModel, sample: &Sample) -> Result<Vec<f64>> {
    let g = model.grads(sample)?;
    Ok(model.flat_grad(&g))
}

fn unit(v: Vec<f64>) -> Option<Vec<f64>> {
    let n = norm(&v);
    (n > 0.0).then(|| v.into_iter().map(|x| x / n).collect())
}

/// Mean of the unit gradients of `samples`.
pub fn gradient_anchor(model: &ToyModel, samples: &[Sample]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("gradient anchor needs samples"));
    }
    let mut acc = vec![0.0; model.trainable_len()];
    for s in samples {
        let g = unit(flat_gradient(model, s)?).ok_or_else(|| {
            Error::DegenerateSample(format!("anchor `{}` has a zero gradient", s.id))
        })?;
        for (a, x) in acc.iter_mut().zip(g) {
            *a += x / samples.len() as f64;
        }
    }
    Ok(acc)
}

fn mean_rep(model: &ToyModel, samples: &[Sample], layer: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::invalid("representation anchor needs samples"));
    }
    let mut acc = vec![0.0; model.config().width];
    for s in samples {
        for (a, x) in acc.iter_mut().zip(representation(model, s, layer)?) {
            *a += x / samples.len() as f64;
        }
    }
    Ok(acc)
}

/// Anchor corpora for [`AnchorSet::build`].
#[derive(Debug, Clone)]
pub struct AnchorCorpora {
    /// Harmful prompts with danger responses.
    pub harmful: Vec<Sample>,
    /// Harmful prompts with benign responses.
    pub safe1: Vec<Sample>,
    /// Benign prompts with benign responses.
    pub safe2: Vec<Sample>,
}

impl AnchorSet {
    pub fn build(model: &ToyModel, corpora: &AnchorCorpora, layer_index: usize) -> Result<Self> {
        let last = model.config().depth - 1;
        let harmful_reps = corpora
            .harmful
            .iter()
            .map(|s| representation(model, s, last))
            .collect::<Result<_>>()?;
        let safe_all: Vec<Sample> = corpora
            .safe1
            .iter()
            .chain(&corpora.safe2)
            .cloned()
            .collect();
        Ok(Self {
            harmful_reps,
            harmful_grad: gradient_anchor(model, &corpora.harmful)?,
            safe_grads: [
                gradient_anchor(model, &corpora.safe1)?,
                gradient_anchor(model, &corpora.safe2)?,
            ],
            layer_index,
            unsafe_mean: mean_rep(model, &corpora.harmful, layer_index)?,
            safe_mean: mean_rep(model, &safe_all, layer_index)?,
        })
    }
}

/// Synthetic cost: 1 when the judge's harm classifier flags the response
/// (more danger-rule than benign-rule transitions), else 0.
pub fn score_reward_oracle(judge: &SyntheticJudge, sample: &Sample) -> f64 {
    if judge.is_harmful(&sample.response) {
        1.0
    } else {
        0.0
    }
}

/// Max cosine similarity of the sample representation to harmful anchors.
pub fn score_bianchor_reps(model: &ToyModel, sample: &Sample, anchors: &AnchorSet) -> Result<f64> {
    bianchor_reps_from(
        &representation(model, sample, model.config().depth - 1)?,
        &anchors.harmful_reps,
    )
}

pub fn bianchor_reps_from(h: &[f64], harmful: &[Vec<f64>]) -> Result<f64> {
    if harmful.is_empty() {
        return Err(Error::invalid("no harmful anchors"));
    }
    if norm(h) == 0.0 {
        return Err(Error::DegenerateSample("zero-norm representation".into()));
    }
    Ok(harmful
        .iter()
        .filter_map(|a| cosine(h, a))
        .fold(f64::NEG_INFINITY, f64::max))
}

/// `⟨g, g_harm⟩ − ⟨g, g_safe1⟩ − ⟨g, g_safe2⟩` for the unit gradient `g`.
pub fn score_bianchor_grad(model: &ToyModel, sample: &Sample, anchors: &AnchorSet) -> Result<f64> {
    bianchor_grad_from(
        flat_gradient(model, sample)?,
        &anchors.harmful_grad,
        &anchors.safe_grads,
    )
}

pub fn bianchor_grad_from(g: Vec<f64>, harm: &[f64], safe: &[Vec<f64>; 2]) -> Result<f64> {
    let g = unit(g).ok_or_else(|| Error::DegenerateSample("zero gradient".into()))?;
    Ok(dot(&g, harm) - dot(&g, &safe[0]) - dot(&g, &safe[1]))
}

/// `log(⟨g, g⟩ + 1) + log(|y| + 1)`
pub fn score_self_inf_n(model: &ToyModel, sample: &Sample) -> Result<f64> {
    Ok(self_inf_n_from(
        &flat_gradient(model, sample)?,
        sample.response.len(),
    ))
}

pub fn self_inf_n_from(g: &[f64], response_len: usize) -> f64 {
    (dot(g, g) + 1.0).ln() + (response_len as f64 + 1.0).ln()
}

/// `⟨h_l, h̄_unsafe⟩ − ⟨h_l, h̄_safe⟩`
pub fn score_larf(
    model: &ToyModel,
    sample: &Sample,
    anchors: &AnchorSet,
    layer: usize,
) -> Result<f64> {
    let h = representation(model, sample, layer)?;
    Ok(dot(&h, &anchors.unsafe_mean) - dot(&h, &anchors.safe_mean))
}

pub const LARF_FACTORS: [f64; 4] = [0.8, 0.9, 1.1, 1.2];

/// Layer whose weight scaling moves the judge's safety score the most.
pub fn select_larf_layer(model: &ToyModel, judge: &SyntheticJudge) -> Result<(usize, Vec<f64>)> {
    let reference = judge.evaluate_model(model)?.safety;
    let swings = (0..model.config().depth)
        .map(|l| {
            LARF_FACTORS.iter().try_fold(0.0f64, |best, &f| {
                let mut m = model.clone();
                *m.layer_mut(l) = m.layer(l).scaled(f);
                Ok(best.max((judge.evaluate_model(&m)?.safety - reference).abs()))
            })
        })
        .collect::<Result<Vec<f64>>>()?;
    let best = swings
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
        .map(|(i, _)| i)
        .unwrap_or(0);
    Ok((best, swings))
}

/// All baseline scores for each sample, in corpus order.
pub fn score_all(
    model: &ToyModel,
    judge: &SyntheticJudge,
    anchors: &AnchorSet,
    corpus: &[Sample],
) -> Result<Vec<Vec<(Baseline, f64)>>> {
    corpus
        .par_iter()
        .map(|s| {
            let g = flat_gradient(model, s)?;
            let grad_score =
                match bianchor_grad_from(g.clone(), &anchors.harmful_grad, &anchors.safe_grads) {
                    Ok(v) => v,
                    Err(Error::DegenerateSample(_)) => 0.0,
                    Err(e) => return Err(e),
                };
            Ok(vec![
                (Baseline::RewardOracle, score_reward_oracle(judge, s)),
                (
                    Baseline::BiAnchorReps,
                    score_bianchor_reps(model, s, anchors)?,
                ),
                (Baseline::BiAnchorGrad, grad_score),
                (Baseline::SelfInfN, self_inf_n_from(&g, s.response.len())),
                (
                    Baseline::Larf,
                    score_larf(model, s, anchors, anchors.layer_index)?,
                ),
            ])
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reps_extremes() {
        let anchors = vec![vec![1.0, 0.0], vec![0.0, 2.0]];
        assert!((bianchor_reps_from(&[0.0, 3.0], &anchors).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(
            bianchor_reps_from(&[0.0, 0.0, 1.0], &[vec![1.0, 0.0, 0.0]]).unwrap(),
            0.0
        );
        assert!(bianchor_reps_from(&[0.0, 0.0], &anchors).is_err());
    }

    #[test]
    fn grad_extremes() {
        let harm = vec![1.0, 0.0, 0.0];
        let safe = [vec![0.0, 1.0, 0.0], vec![0.0, 0.0, 1.0]];
        assert!(
            (bianchor_grad_from(vec![2.0, 0.0, 0.0], &harm, &safe).unwrap() - 1.0).abs() < 1e-12
        );
        let orth = [vec![0.0, 1.0, 0.0, 0.0], vec![0.0, 0.0, 1.0, 0.0]];
        let harm4 = vec![1.0, 0.0, 0.0, 0.0];
        assert_eq!(
            bianchor_grad_from(vec![0.0, 0.0, 0.0, 5.0], &harm4, &orth).unwrap(),
            0.0
        );
        assert!(bianchor_grad_from(vec![0.0; 3], &harm, &safe).is_err());
    }

    #[test]
    fn self_inf_zero_gradient() {
        assert!((self_inf_n_from(&[0.0; 4], 1) - 2f64.ln()).abs() < 1e-15);
    }
}
