//! Tabular softmax policies over the enumerated candidates of each prompt.

use std::path::Path;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{CandidateIndex, PromptId, ResponseId};
use crate::rng::{self, tag};

/// Numerically stable `log(sum(exp(xs)))`.
pub fn logsumexp(xs: &[f64]) -> f64 {
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Per-prompt logit table. `round` is -1 for the initial reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    logits: Vec<Vec<f64>>,
    pub round: i64,
}

impl TabularPolicy {
    pub fn from_logits(logits: Vec<Vec<f64>>, round: i64) -> Result<Self> {
        for (p, row) in logits.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::InvalidSize(format!("prompt {p} has no candidates")));
            }
            if row.iter().any(|l| !l.is_finite()) {
                return Err(Error::NonFinite(format!("logits of prompt {p}")));
            }
        }
        Ok(Self { logits, round })
    }

    pub fn uniform(shape: &[usize], round: i64) -> Self {
        Self {
            logits: shape.iter().map(|&n| vec![0.0; n]).collect(),
            round,
        }
    }

    /// Logits drawn i.i.d. `N(0, scale^2)` from the seed's reference stream.
    pub fn random(shape: &[usize], scale: f64, seed: u64, round: i64) -> Self {
        let logits = shape
            .iter()
            .enumerate()
            .map(|(p, &n)| {
                let mut rng = rng::substream(seed, &[tag::REFERENCE], p as u64);
                (0..n)
                    .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        Self { logits, round }
    }

    pub fn num_prompts(&self) -> usize {
        self.logits.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.logits.iter().map(Vec::len).collect()
    }

    pub fn logits(&self, prompt: PromptId) -> &[f64] {
        &self.logits[prompt.index()]
    }

    pub fn logit_table(&self) -> &[Vec<f64>] {
        &self.logits
    }

    pub(crate) fn logit_table_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.logits
    }

    fn row(&self, prompt: PromptId) -> Result<&[f64]> {
        self.logits
            .get(prompt.index())
            .map(Vec::as_slice)
            .ok_or(Error::ForeignCandidate {
                prompt_id: prompt,
                response_id: ResponseId(0),
            })
    }

    /// `log pi(y | x)` for every candidate of `prompt`.
    pub fn log_probs(&self, prompt: PromptId) -> Result<Vec<f64>> {
        let row = self.row(prompt)?;
        let lse = logsumexp(row);
        Ok(row.iter().map(|l| l - lse).collect())
    }

    pub fn probs(&self, prompt: PromptId) -> Result<Vec<f64>> {
        Ok(self.log_probs(prompt)?.into_iter().map(f64::exp).collect())
    }

    pub fn log_prob(&self, prompt: PromptId, response: ResponseId) -> Result<f64> {
        let row = self.row(prompt)?;
        let logit = row.get(response.index()).ok_or(Error::ForeignCandidate {
            prompt_id: prompt,
            response_id: response,
        })?;
        Ok(logit - logsumexp(row))
    }

    /// Draws `k` responses with replacement. The stream depends only on
    /// `(seed, prompt)`, so prompts can be sampled in any order.
    pub fn sample_k(&self, prompt: PromptId, k: usize, seed: u64) -> Result<Vec<ResponseId>> {
        if k < 2 {
            return Err(Error::InvalidArgument(format!("k must be >= 2, got {k}")));
        }
        let probs = self.probs(prompt)?;
        if probs.len() == 1 {
            return Ok(vec![ResponseId(0); k]);
        }
        let dist = WeightedIndex::new(&probs)
            .map_err(|e| Error::Numerical(format!("sampling weights for prompt {prompt}: {e}")))?;
        let mut rng = rng::substream(seed, &[tag::SAMPLE], prompt.0 as u64);
        Ok((0..k).map(|_| ResponseId(dist.sample(&mut rng) as u32)).collect())
    }

    /// Divides every logit by `temperature`.
    pub fn temperature_scale(&self, temperature: f64) -> Result<TabularPolicy> {
        if !(temperature.is_finite() && temperature > 0.0) {
            return Err(Error::InvalidTemperature(temperature));
        }
        if temperature == 1.0 {
            return Ok(self.clone());
        }
        Ok(Self {
            logits: self
                .logits
                .iter()
                .map(|row| row.iter().map(|l| l / temperature).collect())
                .collect(),
            round: self.round,
        })
    }

    /// Hex digest of the exact logit bit patterns.
    pub fn content_hash(&self) -> String {
        let mut hasher = Sha256::new();
        for row in &self.logits {
            hasher.update((row.len() as u64).to_le_bytes());
            for l in row {
                hasher.update(l.to_bits().to_le_bytes());
            }
        }
        hasher.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn snapshot(&self, config_hash: impl Into<String>) -> PolicySnapshot {
        PolicySnapshot {
            content_hash: self.content_hash(),
            config_hash: config_hash.into(),
            round: self.round,
            policy: Arc::new(self.clone()),
        }
    }

    pub fn check_universe(&self, universe: &CandidateIndex) -> Result<()> {
        if self.shape() != universe.shape() {
            return Err(Error::MismatchedUniverse(format!(
                "policy for round {} has shape differing from the candidate index",
                self.round
            )));
        }
        Ok(())
    }

    /// `E_{y ~ pi}[f(y)]` averaged uniformly over prompts.
    pub fn mean_expectation(&self, values: &[Vec<f64>]) -> f64 {
        let total: f64 = (0..self.num_prompts())
            .map(|p| {
                let probs = self.probs(PromptId(p as u32)).expect("prompt in range");
                probs.iter().zip(&values[p]).map(|(a, b)| a * b).sum::<f64>()
            })
            .sum();
        total / self.num_prompts() as f64
    }
}

/// Immutable copy of a policy plus provenance.
#[derive(Debug, Clone)]
pub struct PolicySnapshot {
    policy: Arc<TabularPolicy>,
    pub round: i64,
    pub config_hash: String,
    pub content_hash: String,
}

impl PolicySnapshot {
    pub fn policy(&self) -> &TabularPolicy {
        &self.policy
    }

    pub fn log_prob(&self, prompt: PromptId, response: ResponseId) -> Result<f64> {
        self.policy.log_prob(prompt, response)
    }
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    round: i64,
    config_hash: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointRow {
    prompt_id: PromptId,
    logits: Vec<f64>,
}

/// Writes `policy.jsonl`: a header line then one logit vector per prompt.
pub fn write_checkpoint(path: &Path, policy: &TabularPolicy, config_hash: &str) -> Result<()> {
    io::write_atomic(path, checkpoint_jsonl(policy, config_hash).as_bytes())
}

pub fn checkpoint_jsonl(policy: &TabularPolicy, config_hash: &str) -> String {
    let header = serde_json::to_string(&CheckpointHeader {
        round: policy.round,
        config_hash: config_hash.to_owned(),
    })
    .expect("header serializes");
    let rows = io::to_jsonl(policy.logits.iter().enumerate().map(|(p, l)| CheckpointRow {
        prompt_id: PromptId(p as u32),
        logits: l.clone(),
    }));
    format!("{header}\n{rows}")
}

/// Reads a checkpoint, returning the policy and its recorded config hash.
pub fn read_checkpoint(path: &Path) -> Result<(TabularPolicy, String)> {
    let lines = io::jsonl_lines(path)?;
    let mut iter = lines.iter();
    let (n, first) = iter.next().ok_or_else(|| Error::Parse {
        path: path.to_path_buf(),
        line: 1,
        message: "empty checkpoint".into(),
    })?;
    let header: CheckpointHeader = io::parse_line(path, *n, first)?;
    let mut logits = Vec::new();
    for (n, line) in iter {
        let row: CheckpointRow = io::parse_line(path, *n, line)?;
        if row.prompt_id.index() != logits.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: *n,
                message: format!("expected prompt {}, found {}", logits.len(), row.prompt_id),
            });
        }
        logits.push(row.logits);
    }
    Ok((TabularPolicy::from_logits(logits, header.round)?, header.config_hash))
}
