//! Rank-stratified fine-tuning evaluation.
//!
//! A corpus is ranked by any scorer, cut into `k` contiguous rank strata
//! (S1 = riskiest), and a fresh model is fine-tuned on each stratum and
//! judged.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sqsd::RiskRecord;
use crate::toy::corpus::Sample;
use crate::toy::judge::SyntheticJudge;
use crate::toy::model::ToyModel;
use crate::toy::train::{train_with, Sft, TrainConfig};

pub const DEFAULT_STRATA: usize = 5;

/// Splits `(id, score)` pairs into `k` rank strata, riskiest first. Ties
/// break by id ascending; stratum sizes differ by at most one.
pub fn partition(scored: &[(String, f64)], k: usize) -> Result<Vec<Vec<String>>> {
    if k == 0 || k > scored.len() {
        return Err(Error::invalid(format!(
            "cannot cut {} samples into {k} strata",
            scored.len()
        )));
    }
    if let Some((id, _)) = scored.iter().find(|(_, s)| !s.is_finite()) {
        return Err(Error::NonFinite(format!("score of sample `{id}`")));
    }
    let mut order: Vec<&(String, f64)> = scored.iter().collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let n = order.len();
    let mut out = Vec::with_capacity(k);
    let mut start = 0;
    for i in 0..k {
        let end = start + n / k + usize::from(i < n % k);
        out.push(order[start..end].iter().map(|(id, _)| id.clone()).collect());
        start = end;
    }
    Ok(out)
}

pub fn partition_records(records: &[RiskRecord], k: usize) -> Result<Vec<Vec<String>>> {
    let scored: Vec<(String, f64)> = records
        .iter()
        .map(|r| (r.sample_id.clone(), r.score))
        .collect();
    partition(&scored, k)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankReport {
    pub method: String,
    pub subsets: Vec<Vec<String>>,
    pub asr_per_subset: Vec<f64>,
    /// `asr[0] − asr[last]`.
    pub delta: f64,
    /// ASR never increases from S1 to the last stratum.
    pub monotone: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub safety_scores: Option<Vec<f64>>,
    /// Per-stratum training failure, judged at the last finite state.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failures: Vec<Option<String>>,
}

impl RankReport {
    pub fn from_results(
        method: impl Into<String>,
        subsets: Vec<Vec<String>>,
        asr: Vec<f64>,
        safety: Option<Vec<f64>>,
    ) -> Self {
        let delta = asr.first().zip(asr.last()).map_or(0.0, |(a, b)| a - b);
        let monotone = asr.windows(2).all(|w| w[1] <= w[0]);
        Self {
            method: method.into(),
            subsets,
            asr_per_subset: asr,
            delta,
            monotone,
            safety_scores: safety,
            failures: Vec::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Plain-text table: one row per report, ASR and Δ in percent.
pub fn render_table(reports: &[RankReport]) -> String {
    let k = reports
        .iter()
        .map(|r| r.asr_per_subset.len())
        .max()
        .unwrap_or(DEFAULT_STRATA);
    let width = reports
        .iter()
        .map(|r| r.method.len())
        .max()
        .unwrap_or(0)
        .max(6);
    let mut out = format!("{:<width$}", "Method");
    for i in 1..=k {
        let _ = write!(out, " {:>7}", format!("S{i}"));
    }
    out.push_str(&format!(" {:>7} {:>5}\n", "Δ", "Mono"));
    for r in reports {
        let _ = write!(out, "{:<width$}", r.method);
        for a in &r.asr_per_subset {
            let _ = write!(out, " {:>7.2}", 100.0 * a);
        }
        for _ in r.asr_per_subset.len()..k {
            out.push_str("        ");
        }
        let _ = writeln!(
            out,
            " {:>7.2} {:>5}",
            100.0 * r.delta,
            if r.monotone { "yes" } else { "no" }
        );
    }
    out
}

/// Fine-tunes a copy of `base` per stratum and judges it.
#[derive(Debug, Clone)]
pub struct FinetuneEvaluator<'a> {
    pub base: ToyModel,
    pub train: TrainConfig,
    pub judge: &'a SyntheticJudge,
}

struct Outcome {
    asr: f64,
    safety: f64,
    failure: Option<String>,
}

impl FinetuneEvaluator<'_> {
    fn run(&self, samples: &[Sample]) -> Result<Outcome> {
        let mut model = self.base.clone();
        let failure = match train_with(&mut model, &Sft { samples }, &self.train, |_, _| Ok(())) {
            Ok(_) => None,
            Err(e @ Error::Divergence { .. }) => Some(e.to_string()),
            Err(e) => return Err(e),
        };
        let report = self.judge.evaluate_model(&model)?;
        Ok(Outcome {
            asr: report.asr,
            safety: report.safety,
            failure,
        })
    }

    /// Trains one model per stratum (in parallel) and assembles the report.
    pub fn evaluate_partition(
        &self,
        method: &str,
        corpus: &[Sample],
        subsets: Vec<Vec<String>>,
    ) -> Result<RankReport> {
        let by_id: std::collections::HashMap<&str, &Sample> =
            corpus.iter().map(|s| (s.id.as_str(), s)).collect();
        let data: Vec<Vec<Sample>> = subsets
            .iter()
            .map(|ids| {
                if ids.is_empty() {
                    return Err(Error::invalid("empty stratum"));
                }
                ids.iter()
                    .map(|id| {
                        by_id
                            .get(id.as_str())
                            .map(|s| (*s).clone())
                            .ok_or_else(|| Error::invalid(format!("sample `{id}` not in corpus")))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        let outcomes: Vec<Outcome> = data
            .par_iter()
            .map(|d| self.run(d))
            .collect::<Result<_>>()?;
        let mut report = RankReport::from_results(
            method,
            subsets,
            outcomes.iter().map(|o| o.asr).collect(),
            Some(outcomes.iter().map(|o| o.safety).collect()),
        );
        if outcomes.iter().any(|o| o.failure.is_some()) {
            report.failures = outcomes.into_iter().map(|o| o.failure).collect();
        }
        Ok(report)
    }
}

/// Scores with `scorer` (one configuration), partitions, and evaluates with
/// `evaluator` (possibly another configuration).
pub fn transfer_protocol<F>(
    scorer: F,
    evaluator: &FinetuneEvaluator,
    corpus: &[Sample],
    k: usize,
    method: &str,
) -> Result<RankReport>
where
    F: FnOnce(&[Sample]) -> Result<Vec<(String, f64)>>,
{
    let scores = scorer(corpus)?;
    if scores.len() != corpus.len() {
        return Err(Error::invalid(format!(
            "scorer returned {} scores for {} samples",
            scores.len(),
            corpus.len()
        )));
    }
    evaluator.evaluate_partition(method, corpus, partition(&scores, k)?)
}
