//! DPO implicit rewards, length-regularised shaping and alignment rate.
//!
//! The log-partition term of the implicit reward is never computed: only
//! differences between responses to the same prompt are ever consumed, and
//! those do not depend on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CandidateIndex, PromptId, ResponseId};
use crate::policy::TabularPolicy;

/// A scored response. `implicit_reward == beta * (logp_policy - logp_ref)`
/// and `shaped_reward == implicit_reward - alpha * length` as stored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub prompt_id: PromptId,
    pub response_id: ResponseId,
    pub logp_policy: f64,
    pub logp_ref: f64,
    pub implicit_reward: f64,
    pub shaped_reward: f64,
    pub length: u32,
    pub alpha: f64,
}

/// Externally produced log-probabilities (one line of `responses.jsonl`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalResponse {
    pub prompt_id: PromptId,
    pub response_id: ResponseId,
    pub length: u32,
    pub logp_policy: f64,
    pub logp_ref: f64,
}

pub fn implicit_reward(logp_policy: f64, logp_ref: f64, beta: f64) -> Result<f64> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")));
    }
    if !logp_policy.is_finite() || !logp_ref.is_finite() {
        return Err(Error::NonFinite("implicit reward inputs".into()));
    }
    Ok(beta * (logp_policy - logp_ref))
}

pub fn shaped_reward(reward: f64, length: u32, alpha: f64) -> f64 {
    debug_assert!(length >= 1 && alpha >= 0.0);
    reward - alpha * length as f64
}

impl ScoredResponse {
    fn build(
        prompt_id: PromptId,
        response_id: ResponseId,
        length: u32,
        logp_policy: f64,
        logp_ref: f64,
        beta: f64,
        alpha: f64,
    ) -> Result<Self> {
        if length == 0 {
            return Err(Error::InvalidArgument(format!(
                "response ({prompt_id}, {response_id}) has zero length"
            )));
        }
        if !(alpha.is_finite() && alpha >= 0.0) {
            return Err(Error::InvalidArgument(format!("alpha must be >= 0, got {alpha}")));
        }
        let r = implicit_reward(logp_policy, logp_ref, beta)?;
        Ok(Self {
            prompt_id,
            response_id,
            logp_policy,
            logp_ref,
            implicit_reward: r,
            shaped_reward: shaped_reward(r, length, alpha),
            length,
            alpha,
        })
    }

    /// Same record with the shaping recomputed for a new `alpha`.
    pub fn with_alpha(&self, alpha: f64) -> Self {
        Self {
            shaped_reward: shaped_reward(self.implicit_reward, self.length, alpha),
            alpha,
            ..self.clone()
        }
    }
}

/// Scores each requested `(prompt, response)` with `policy` against
/// `reference`. Duplicated requests produce duplicated rows.
pub fn score_responses(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    universe: &CandidateIndex,
    requests: &[(PromptId, ResponseId)],
    beta: f64,
    alpha: f64,
) -> Result<Vec<ScoredResponse>> {
    policy.check_universe(universe)?;
    reference.check_universe(universe)?;
    requests
        .iter()
        .map(|&(p, r)| {
            let length = universe.length(p, r)?;
            ScoredResponse::build(p, r, length, policy.log_prob(p, r)?, reference.log_prob(p, r)?, beta, alpha)
        })
        .collect()
}

/// Scores every candidate of every prompt once.
pub fn score_all(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    universe: &CandidateIndex,
    beta: f64,
    alpha: f64,
) -> Result<Vec<ScoredResponse>> {
    let requests: Vec<_> = universe.iter().map(|c| (c.prompt_id, c.response_id)).collect();
    score_responses(policy, reference, universe, &requests, beta, alpha)
}

/// Scores externally supplied log-probabilities.
pub fn score_external(records: &[ExternalResponse], beta: f64, alpha: f64) -> Result<Vec<ScoredResponse>> {
    records
        .iter()
        .map(|e| ScoredResponse::build(e.prompt_id, e.response_id, e.length, e.logp_policy, e.logp_ref, beta, alpha))
        .collect()
}

/// Groups scored rows by prompt, preserving row order within each prompt.
/// Prompts come out in ascending id order.
pub fn group_by_prompt(scored: &[ScoredResponse]) -> Vec<Vec<ScoredResponse>> {
    let mut groups: std::collections::BTreeMap<PromptId, Vec<ScoredResponse>> = Default::default();
    for s in scored {
        groups.entry(s.prompt_id).or_default().push(s.clone());
    }
    groups.into_values().collect()
}

/// Fraction of positions where two label sequences agree.
pub fn alignment_rate<T: PartialEq>(labels_a: &[T], labels_b: &[T]) -> Result<f64> {
    if labels_a.len() != labels_b.len() {
        return Err(Error::LengthMismatch {
            left: labels_a.len(),
            right: labels_b.len(),
        });
    }
    if labels_a.is_empty() {
        return Err(Error::Empty);
    }
    let matches = labels_a.iter().zip(labels_b).filter(|(a, b)| a == b).count();
    Ok(matches as f64 / labels_a.len() as f64)
}
