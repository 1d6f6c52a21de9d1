//! Preference-dataset construction: best/worst-of-K selection and the
//! experience-replay mixture with offline data.

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::alpha::select_pair;
use crate::error::{Error, Result};
use crate::model::{PreferenceDataset, PreferencePair, ReplayMode, Source};
use crate::reward::ScoredResponse;
use crate::rng::{self, tag};

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedDataset {
    pub dataset: PreferenceDataset,
    /// Prompts whose samples all collapsed onto one candidate.
    pub skipped: usize,
}

/// One pair per prompt group: winner is the argmax of the shaped reward
/// under `alpha`, loser the argmin. Groups are the scored `K` samples of each
/// prompt; their order does not matter.
pub fn build_generated_dataset(groups: &[Vec<ScoredResponse>], alpha: f64, round: i64) -> GeneratedDataset {
    let mut pairs = Vec::with_capacity(groups.len());
    let mut skipped = 0;
    for g in groups {
        match select_pair(g, alpha) {
            Some((w, l)) => pairs.push(PreferencePair::new(w.prompt_id, w.response_id, l.response_id, Source::Generated)),
            None => skipped += 1,
        }
    }
    GeneratedDataset {
        dataset: PreferenceDataset::new(pairs, Some(alpha), round),
        skipped,
    }
}

/// Sidecar written next to `dataset.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub round: i64,
    pub alpha_used: Option<f64>,
    pub gamma: Option<f64>,
    pub skip_count: usize,
    pub seed: u64,
    pub generated_count: usize,
    pub offline_count: usize,
}

impl DatasetMeta {
    pub fn describe(ds: &PreferenceDataset, gamma: Option<f64>, skip_count: usize, seed: u64) -> Self {
        Self {
            round: ds.round,
            alpha_used: ds.alpha_used,
            gamma,
            skip_count,
            seed,
            generated_count: ds.count_source(Source::Generated),
            offline_count: ds.count_source(Source::Offline),
        }
    }
}

/// Offline share of a stratified mixture of size `n`.
pub fn offline_share(gamma: f64, n: usize) -> usize {
    (gamma * n as f64).round() as usize
}

/// Largest `n` whose stratified shares fit the two pools.
pub fn max_mix_size(gamma: f64, generated: usize, offline: usize) -> usize {
    let upper = generated + offline;
    (0..=upper)
        .rev()
        .find(|&n| {
            let off = offline_share(gamma, n);
            off <= offline && n - off <= generated
        })
        .unwrap_or(0)
}

fn take(pool: &[PreferencePair], k: usize, rng: &mut impl Rng, source: Source) -> Result<Vec<PreferencePair>> {
    if k > pool.len() {
        return Err(Error::InsufficientSource {
            pool: source,
            requested: k,
            available: pool.len(),
        });
    }
    let mut idx = index::sample(rng, pool.len(), k).into_vec();
    idx.sort_unstable();
    Ok(idx.into_iter().map(|i| pool[i].clone()).collect())
}

/// The replay mixture `D_t`: `round(gamma * N)` pairs drawn uniformly without
/// replacement from `offline` and the rest from `generated` (stratified
/// mode). Selected pairs keep their pool order, generated first.
pub fn mix_replay(
    generated: &PreferenceDataset,
    offline: &PreferenceDataset,
    gamma: f64,
    target_size: usize,
    seed: u64,
    mode: ReplayMode,
) -> Result<PreferenceDataset> {
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::config("gamma", format!("must be in [0, 1], got {gamma}")));
    }
    let mut rng = rng::substream(seed, &[tag::MIX, generated.round as u64], 0);
    let n_off = match mode {
        ReplayMode::Stratified => offline_share(gamma, target_size),
        ReplayMode::Bernoulli => (0..target_size).filter(|_| rng.random::<f64>() < gamma).count(),
    };
    let n_gen = target_size - n_off;
    let mut pairs = take(&generated.pairs, n_gen, &mut rng, Source::Generated)?;
    pairs.extend(take(&offline.pairs, n_off, &mut rng, Source::Offline)?);
    Ok(PreferenceDataset::new(pairs, generated.alpha_used, generated.round))
}
