//! Choice of the length-penalty weight `alpha`.
//!
//! For a given `alpha`, each prompt's winner is the sample with the highest
//! shaped reward and its loser the one with the lowest. The objective is the
//! absolute mean of `|y_w| - |y_l|` over prompts. It is piecewise constant in
//! `alpha`, so a small random search finds flat optimal cells.
//!
//! Tie rule: among exactly equal shaped rewards the smallest response id wins
//! the argmax and the largest id wins the argmin.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ResponseId;
use crate::reward::{shaped_reward, ScoredResponse};
use crate::rng::{self, tag};

/// Best and worst sample of one prompt under shaping `alpha`. Returns `None`
/// when every sample is the same candidate.
pub fn select_pair(group: &[ScoredResponse], alpha: f64) -> Option<(&ScoredResponse, &ScoredResponse)> {
    let mut iter = group.iter();
    let first = iter.next()?;
    let first_r = shaped_reward(first.implicit_reward, first.length, alpha);
    let (mut best, mut best_r) = (first, first_r);
    let (mut worst, mut worst_r) = (first, first_r);
    for s in iter {
        let r = shaped_reward(s.implicit_reward, s.length, alpha);
        if r > best_r || (r == best_r && s.response_id < best.response_id) {
            best = s;
            best_r = r;
        }
        if r < worst_r || (r == worst_r && s.response_id > worst.response_id) {
            worst = s;
            worst_r = r;
        }
    }
    (best.response_id != worst.response_id).then_some((best, worst))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LengthObjective {
    /// `|signed_mean|`.
    pub value: f64,
    pub signed_mean: f64,
    pub used: usize,
    pub excluded: usize,
}

pub fn length_diff_objective(groups: &[Vec<ScoredResponse>], alpha: f64) -> Result<LengthObjective> {
    let mut total: i64 = 0;
    let mut used = 0;
    for g in groups {
        if let Some((w, l)) = select_pair(g, alpha) {
            total += w.length as i64 - l.length as i64;
            used += 1;
        }
    }
    let excluded = groups.len() - used;
    if used == 0 {
        return Err(Error::AllDegenerate { excluded });
    }
    let signed_mean = total as f64 / used as f64;
    Ok(LengthObjective {
        value: signed_mean.abs(),
        signed_mean,
        used,
        excluded,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaProbe {
    pub alpha: f64,
    pub objective: f64,
    pub signed_mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSearchResult {
    pub alpha_star: f64,
    pub objective_value: f64,
    pub alpha_max: f64,
    /// Probes in the order they were drawn (alpha = 0 first).
    pub evaluations: Vec<AlphaProbe>,
}

impl AlphaSearchResult {
    /// Probe trace as CSV rows `alpha,objective,signed_mean`, sorted by alpha.
    pub fn trace_rows(&self) -> Vec<Vec<String>> {
        let mut probes = self.evaluations.clone();
        probes.sort_by(|a, b| a.alpha.total_cmp(&b.alpha));
        probes
            .iter()
            .map(|p| vec![p.alpha.to_string(), p.objective.to_string(), p.signed_mean.to_string()])
            .collect()
    }
}

/// Largest alpha at which any within-prompt ordering can still change:
/// `(max r - min r) / (min positive length difference)`.
pub fn default_alpha_max(groups: &[Vec<ScoredResponse>]) -> f64 {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    let mut min_gap = u32::MAX;
    for g in groups {
        for s in g {
            lo = lo.min(s.implicit_reward);
            hi = hi.max(s.implicit_reward);
        }
        let mut lengths: Vec<u32> = g.iter().map(|s| s.length).collect();
        lengths.sort_unstable();
        lengths.dedup();
        for w in lengths.windows(2) {
            min_gap = min_gap.min(w[1] - w[0]);
        }
    }
    if min_gap == u32::MAX || hi <= lo {
        return 0.0;
    }
    (hi - lo) / min_gap as f64
}

/// Random search: probes `alpha = 0` plus `budget - 1` uniform draws on
/// `[0, alpha_max]`, returning the minimal objective (ties to smallest alpha).
pub fn search_alpha(
    groups: &[Vec<ScoredResponse>],
    budget: usize,
    alpha_max: Option<f64>,
    seed: u64,
) -> Result<AlphaSearchResult> {
    if budget < 2 {
        return Err(Error::InvalidArgument(format!("alpha search budget must be >= 2, got {budget}")));
    }
    let alpha_max = alpha_max.unwrap_or_else(|| default_alpha_max(groups));
    if !(alpha_max.is_finite() && alpha_max >= 0.0) {
        return Err(Error::InvalidArgument(format!("alpha_max must be >= 0, got {alpha_max}")));
    }
    let mut rng = rng::substream(seed, &[tag::ALPHA], 0);
    let mut alphas = vec![0.0];
    alphas.extend((1..budget).map(|_| rng.random::<f64>() * alpha_max));
    let evaluations = alphas
        .iter()
        .map(|&alpha| {
            let o = length_diff_objective(groups, alpha)?;
            Ok(AlphaProbe {
                alpha,
                objective: o.value,
                signed_mean: o.signed_mean,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let best = evaluations
        .iter()
        .min_by(|a, b| a.objective.total_cmp(&b.objective).then(a.alpha.total_cmp(&b.alpha)))
        .expect("budget >= 2");
    Ok(AlphaSearchResult {
        alpha_star: best.alpha,
        objective_value: best.objective,
        alpha_max,
        evaluations,
    })
}

/// Convenience for callers holding winner ids only.
pub fn selected_ids(groups: &[Vec<ScoredResponse>], alpha: f64) -> Vec<Option<(ResponseId, ResponseId)>> {
    groups
        .iter()
        .map(|g| select_pair(g, alpha).map(|(w, l)| (w.response_id, l.response_id)))
        .collect()
}
