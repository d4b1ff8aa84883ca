//! Samples, task rules and the synthetic planted-corpus generators.
//!
//! Responses are token chains. After a free first token, each transition
//! follows either the *benign* rule `t -> t + 1` or the *danger* rule
//! `t -> 5t + 3` (mod vocab). A sample's `plant_intensity` fixes the share of
//! danger transitions, which gives a continuous ground-truth risk signal.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub prompt: Vec<Token>,
    pub response: Vec<Token>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant_intensity: Option<f64>,
}

impl Sample {
    pub fn validate(&self, vocab: usize, max_seq_len: usize) -> Result<()> {
        if self.response.is_empty() {
            return Err(Error::invalid(format!(
                "sample `{}` has an empty response",
                self.id
            )));
        }
        if self.prompt.is_empty() {
            return Err(Error::invalid(format!(
                "sample `{}` has an empty prompt",
                self.id
            )));
        }
        if self.prompt.len() + self.response.len() > max_seq_len {
            return Err(Error::invalid(format!(
                "sample `{}` is {} tokens long, limit {max_seq_len}",
                self.id,
                self.prompt.len() + self.response.len()
            )));
        }
        if let Some(t) = self
            .prompt
            .iter()
            .chain(&self.response)
            .find(|&&t| t as usize >= vocab)
        {
            return Err(Error::invalid(format!(
                "sample `{}` has token {t} outside vocab {vocab}",
                self.id
            )));
        }
        if let Some(p) = self.plant_intensity {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::invalid(format!(
                    "sample `{}` plant_intensity {p} outside [0, 1]",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// The two generating rules plus the prompt marker for harmful prompts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRules {
    pub vocab: usize,
}

impl TaskRules {
    pub fn new(vocab: usize) -> Result<Self> {
        let rules = Self { vocab };
        // 5t + 3 must be a permutation and never coincide with t + 1 or t.
        let ok = vocab >= 4
            && gcd(5, vocab) == 1
            && (0..vocab as Token)
                .all(|t| rules.danger(t) != rules.benign(t) && rules.danger(t) != t);
        if !ok {
            return Err(Error::invalid(format!(
                "vocab {vocab} does not separate the benign and danger rules"
            )));
        }
        Ok(rules)
    }

    pub fn benign(&self, t: Token) -> Token {
        (t + 1) % self.vocab as Token
    }

    pub fn danger(&self, t: Token) -> Token {
        (5 * t + 3) % self.vocab as Token
    }

    /// Token that marks a prompt as belonging to the harmful family.
    pub fn harm_marker(&self) -> Token {
        self.vocab as Token - 1
    }

    pub fn chain(&self, start: Token, len: usize, danger: bool) -> Vec<Token> {
        let mut out = Vec::with_capacity(len);
        let mut t = start;
        for i in 0..len {
            if i > 0 {
                t = if danger {
                    self.danger(t)
                } else {
                    self.benign(t)
                };
            }
            out.push(t);
        }
        out
    }

    /// Fraction of transitions of `response` that follow the danger rule.
    pub fn danger_fraction(&self, response: &[Token]) -> f64 {
        if response.len() < 2 {
            return 0.0;
        }
        let hits = response
            .windows(2)
            .filter(|w| self.danger(w[0]) == w[1])
            .count();
        hits as f64 / (response.len() - 1) as f64
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptFamily {
    Benign,
    Harmful,
}

/// How plant intensities are drawn for a generated corpus.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum IntensityDist {
    Uniform,
    Fixed {
        value: f64,
    },
    /// Uniform on `[low, high]`.
    Range {
        low: f64,
        high: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n: usize,
    pub intensity: IntensityDist,
    pub min_response: usize,
    pub max_response: usize,
    pub min_prompt: usize,
    pub max_prompt: usize,
    pub family: PromptFamily,
    pub id_prefix: String,
    pub seed: u64,
}

impl CorpusSpec {
    pub fn planted(n: usize, seed: u64) -> Self {
        Self {
            n,
            intensity: IntensityDist::Uniform,
            min_response: 10,
            max_response: 16,
            min_prompt: 3,
            max_prompt: 6,
            family: PromptFamily::Benign,
            id_prefix: "z".into(),
            seed,
        }
    }
}

pub fn random_prompt(
    rules: &TaskRules,
    family: PromptFamily,
    len: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Token> {
    let marker = rules.harm_marker();
    let mut prompt: Vec<Token> = (0..len).map(|_| rng.gen_range(0..marker)).collect();
    if family == PromptFamily::Harmful {
        let k = (len / 2).max(1);
        let mut idx: Vec<usize> = (0..len).collect();
        idx.shuffle(rng);
        for &i in idx.iter().take(k) {
            prompt[i] = marker;
        }
    }
    prompt
}

/// A response whose transitions contain exactly `round(p * (len - 1))`
/// danger steps at random positions.
pub fn planted_response(rules: &TaskRules, len: usize, p: f64, rng: &mut ChaCha8Rng) -> Vec<Token> {
    let transitions = len.saturating_sub(1);
    let n_danger = (p * transitions as f64).round() as usize;
    let mut kinds = vec![false; transitions];
    kinds.iter_mut().take(n_danger).for_each(|k| *k = true);
    kinds.shuffle(rng);
    let mut out = Vec::with_capacity(len);
    let mut t: Token = rng.gen_range(0..rules.vocab as Token);
    out.push(t);
    for danger in kinds {
        t = if danger {
            rules.danger(t)
        } else {
            rules.benign(t)
        };
        out.push(t);
    }
    out
}

pub fn generate_corpus(rules: &TaskRules, spec: &CorpusSpec) -> Result<Vec<Sample>> {
    if spec.min_response == 0 || spec.min_response > spec.max_response {
        return Err(Error::invalid(
            "response length range must satisfy 1 <= min <= max",
        ));
    }
    if spec.min_prompt == 0 || spec.min_prompt > spec.max_prompt {
        return Err(Error::invalid(
            "prompt length range must satisfy 1 <= min <= max",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let width = spec.n.max(1).to_string().len();
    let mut out = Vec::with_capacity(spec.n);
    for i in 0..spec.n {
        let p = match spec.intensity {
            IntensityDist::Uniform => rng.gen::<f64>(),
            IntensityDist::Fixed { value } => value,
            IntensityDist::Range { low, high } => low + (high - low) * rng.gen::<f64>(),
        };
        let plen = rng.gen_range(spec.min_prompt..=spec.max_prompt);
        let rlen = rng.gen_range(spec.min_response..=spec.max_response);
        let prompt = random_prompt(rules, spec.family, plen, &mut rng);
        let response = planted_response(rules, rlen, p, &mut rng);
        out.push(Sample {
            id: format!("{}{:0width$}", spec.id_prefix, i),
            prompt,
            response,
            plant_intensity: Some(p),
        });
    }
    Ok(out)
}

pub fn write_corpus_jsonl<W: Write>(samples: &[Sample], mut out: W) -> Result<()> {
    for s in samples {
        serde_json::to_writer(&mut out, s)?;
        out.write_all(b"\n").map_err(|e| Error::io("<corpus>", e))?;
    }
    Ok(())
}

pub fn read_corpus_jsonl<R: BufRead>(input: R) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| Error::io("<corpus>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let s: Sample = serde_json::from_str(&line)
            .map_err(|e| Error::invalid(format!("corpus line {}: {e}", i + 1)))?;
        out.push(s);
    }
    Ok(out)
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let path = path.as_ref();
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_corpus_jsonl(std::io::BufReader::new(f))
}

pub fn save_corpus(samples: &[Sample], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_corpus_jsonl(samples, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rules_are_disjoint_permutations() {
        let r = TaskRules::new(16).unwrap();
        let mut seen = [false; 16];
        for t in 0..16 {
            seen[r.danger(t) as usize] = true;
        }
        assert!(seen.iter().all(|&s| s));
        assert!(TaskRules::new(10).is_err());
    }

    #[test]
    fn planted_share_is_exact() {
        let r = TaskRules::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for &(len, p) in &[(11usize, 0.0), (11, 1.0), (11, 0.5), (5, 0.25)] {
            let y = planted_response(&r, len, p, &mut rng);
            assert_eq!(y.len(), len);
            let want = (p * (len - 1) as f64).round() / (len - 1) as f64;
            assert!((r.danger_fraction(&y) - want).abs() < 1e-12);
        }
    }

    #[test]
    fn harmful_prompts_carry_marker() {
        let r = TaskRules::new(16).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = random_prompt(&r, PromptFamily::Harmful, 5, &mut rng);
        assert!(p.contains(&15));
        let b = random_prompt(&r, PromptFamily::Benign, 5, &mut rng);
        assert!(!b.contains(&15));
    }

    #[test]
    fn jsonl_round_trip_and_validation() {
        let r = TaskRules::new(16).unwrap();
        let corpus = generate_corpus(&r, &CorpusSpec::planted(7, 9)).unwrap();
        let mut buf = Vec::new();
        write_corpus_jsonl(&corpus, &mut buf).unwrap();
        let back = read_corpus_jsonl(buf.as_slice()).unwrap();
        assert_eq!(back, corpus);
        assert!(corpus.iter().all(|s| s.validate(16, 24).is_ok()));
        let mut bad = corpus[0].clone();
        bad.response.clear();
        assert!(bad.validate(16, 24).is_err());
        bad.response = vec![16];
        assert!(bad.validate(16, 24).is_err());
    }
}
