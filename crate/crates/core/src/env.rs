//! Synthetic alignment environment.
//!
//! Each prompt owns a handful of candidate responses with a hidden true
//! reward `r*` and a token length. Annotators turn `r*` into Bradley-Terry
//! preference probabilities; the biased annotator additionally favours the
//! longer response by `bias * (|y1| - |y2|)` inside the logistic, which is how
//! verbosity bias enters the offline data without touching `r*` itself.

use std::path::Path;

use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;
use crate::model::{
    CandidateIndex, CandidateResponse, PreferenceDataset, PreferencePair, PromptId, ResponseId, Source,
};
use crate::policy::TabularPolicy;
use crate::rng::{self, tag};

/// Logistic arguments are clamped to this magnitude.
pub const SIGMOID_CLAMP: f64 = 30.0;

/// Logistic function with `sigmoid(x) + sigmoid(-x) == 1` exactly.
pub fn sigmoid(x: f64) -> f64 {
    let x = x.clamp(-SIGMOID_CLAMP, SIGMOID_CLAMP);
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        1.0 - 1.0 / (1.0 + x.exp())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub num_prompts: usize,
    pub candidates_per_prompt: usize,
    /// Inclusive token-length range.
    pub min_length: u32,
    pub max_length: u32,
    /// Verbosity bias `b` applied by the biased annotator.
    pub verbosity_bias: f64,
    /// Standard deviation of the initial reference logits.
    pub reference_scale: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            num_prompts: 50,
            candidates_per_prompt: 8,
            min_length: 5,
            max_length: 50,
            verbosity_bias: 0.1,
            reference_scale: 1.0,
            seed: 0,
        }
    }
}

/// Ground-truth preference models.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AnnotatorKind {
    ExactBt,
    BiasedBt { bias: f64 },
    /// Discretises `r*` into `num_bins` equal-width levels over the
    /// environment's reward range before applying the logistic, mimicking a
    /// judge that emits coarse integer scores.
    CoarseJudge { num_bins: u32 },
}

impl AnnotatorKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            AnnotatorKind::CoarseJudge { num_bins } if num_bins < 2 => {
                Err(Error::config("num_bins", format!("must be >= 2, got {num_bins}")))
            }
            AnnotatorKind::BiasedBt { bias } if !(bias.is_finite() && bias >= 0.0) => {
                Err(Error::config("bias", format!("must be >= 0, got {bias}")))
            }
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub seed: u64,
    pub verbosity_bias: f64,
    pub reference_scale: f64,
    candidates: CandidateIndex,
    reward_range: (f64, f64),
}

/// First line of `env.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvHeader {
    pub seed: u64,
    pub verbosity_bias: f64,
    pub reference_scale: f64,
    pub num_prompts: usize,
}

impl Environment {
    /// Wraps an explicit candidate set (used for hand-built fixtures).
    pub fn from_candidates(candidates: CandidateIndex, verbosity_bias: f64, seed: u64) -> Result<Self> {
        if candidates.num_prompts() == 0 {
            return Err(Error::InvalidSize("environment needs at least one prompt".into()));
        }
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for p in candidates.prompt_ids() {
            let cands = candidates.candidates(p);
            if cands.len() < 2 {
                return Err(Error::InvalidSize(format!("prompt {p} has fewer than 2 candidates")));
            }
            for c in cands {
                if !c.true_reward.is_finite() {
                    return Err(Error::NonFinite(format!("true reward of ({p}, {})", c.response_id)));
                }
                lo = lo.min(c.true_reward);
                hi = hi.max(c.true_reward);
            }
        }
        if !(verbosity_bias.is_finite() && verbosity_bias >= 0.0) {
            return Err(Error::config("bias", format!("must be >= 0, got {verbosity_bias}")));
        }
        Ok(Self {
            seed,
            verbosity_bias,
            reference_scale: 1.0,
            candidates,
            reward_range: (lo, hi),
        })
    }

    pub fn candidates(&self) -> &CandidateIndex {
        &self.candidates
    }

    pub fn num_prompts(&self) -> usize {
        self.candidates.num_prompts()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.candidates.shape()
    }

    pub fn true_rewards(&self) -> Vec<Vec<f64>> {
        self.candidates.true_rewards()
    }

    /// Token lengths per prompt as reals, for expectations.
    pub fn lengths(&self) -> Vec<Vec<f64>> {
        self.candidates
            .prompt_ids()
            .map(|p| self.candidates.candidates(p).iter().map(|c| c.length as f64).collect())
            .collect()
    }

    /// The initial reference policy `pi_{theta^(-1)}` implied by the seed.
    pub fn initial_reference(&self) -> TabularPolicy {
        TabularPolicy::random(&self.shape(), self.reference_scale, self.seed, -1)
    }

    /// Annotator matching the environment's configured bias.
    pub fn default_annotator(&self) -> AnnotatorKind {
        if self.verbosity_bias > 0.0 {
            AnnotatorKind::BiasedBt {
                bias: self.verbosity_bias,
            }
        } else {
            AnnotatorKind::ExactBt
        }
    }

    fn coarse_level(&self, r: f64, num_bins: u32) -> f64 {
        let (lo, hi) = self.reward_range;
        if hi <= lo {
            return 0.0;
        }
        let width = (hi - lo) / num_bins as f64;
        (((r - lo) / width).floor()).clamp(0.0, (num_bins - 1) as f64)
    }

    pub fn header(&self) -> EnvHeader {
        EnvHeader {
            seed: self.seed,
            verbosity_bias: self.verbosity_bias,
            reference_scale: self.reference_scale,
            num_prompts: self.num_prompts(),
        }
    }

    /// `env.jsonl`: header line, then one candidate per line.
    pub fn to_jsonl(&self) -> String {
        let header = serde_json::to_string(&self.header()).expect("header serializes");
        format!("{header}\n{}", io::to_jsonl(self.candidates.iter()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        io::write_atomic(path, self.to_jsonl().as_bytes())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let lines = io::jsonl_lines(path)?;
        let (first_no, first) = lines.first().ok_or_else(|| Error::Parse {
            path: path.to_path_buf(),
            line: 1,
            message: "empty environment file".into(),
        })?;
        let header: EnvHeader = io::parse_line(path, *first_no, first)?;
        let flat = lines[1..]
            .iter()
            .map(|(n, l)| io::parse_line::<CandidateResponse>(path, *n, l))
            .collect::<Result<Vec<_>>>()?;
        let mut env = Self::from_candidates(CandidateIndex::from_flat(flat)?, header.verbosity_bias, header.seed)?;
        env.reference_scale = header.reference_scale;
        if env.num_prompts() != header.num_prompts {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                line: *first_no,
                message: format!(
                    "header declares {} prompts, file holds {}",
                    header.num_prompts,
                    env.num_prompts()
                ),
            });
        }
        Ok(env)
    }
}

/// Draws rewards `N(0, 1)` and lengths uniform on the configured range.
///
/// Lengths are redrawn for a prompt until at least two distinct values occur.
pub fn generate_environment(config: &EnvConfig) -> Result<Environment> {
    if config.num_prompts == 0 {
        return Err(Error::InvalidSize("num_prompts must be >= 1".into()));
    }
    if config.candidates_per_prompt < 2 {
        return Err(Error::InvalidSize("candidates_per_prompt must be >= 2".into()));
    }
    if config.min_length == 0 || config.min_length >= config.max_length {
        return Err(Error::InvalidSize(format!(
            "length range [{}, {}] must be positive and span at least two values",
            config.min_length, config.max_length
        )));
    }
    let prompts = (0..config.num_prompts as u32)
        .map(|p| {
            let mut rng = rng::substream(config.seed, &[tag::ENV], p as u64);
            let rewards: Vec<f64> = (0..config.candidates_per_prompt)
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            let lengths = loop {
                let ls: Vec<u32> = (0..config.candidates_per_prompt)
                    .map(|_| rng.random_range(config.min_length..=config.max_length))
                    .collect();
                if ls.iter().any(|&l| l != ls[0]) {
                    break ls;
                }
            };
            rewards
                .into_iter()
                .zip(lengths)
                .enumerate()
                .map(|(r, (true_reward, length))| CandidateResponse {
                    prompt_id: PromptId(p),
                    response_id: ResponseId(r as u32),
                    length,
                    true_reward,
                })
                .collect()
        })
        .collect();
    let mut env = Environment::from_candidates(CandidateIndex::new(prompts)?, config.verbosity_bias, config.seed)?;
    env.reference_scale = config.reference_scale;
    Ok(env)
}

/// Probability that `y1` is preferred over `y2` for `prompt`.
pub fn bt_preference_prob(
    env: &Environment,
    prompt: PromptId,
    y1: ResponseId,
    y2: ResponseId,
    annotator: AnnotatorKind,
) -> Result<f64> {
    let a = env.candidates.get(prompt, y1)?;
    let b = env.candidates.get(prompt, y2)?;
    let margin = match annotator {
        AnnotatorKind::ExactBt => a.true_reward - b.true_reward,
        AnnotatorKind::BiasedBt { bias } => {
            a.true_reward - b.true_reward + bias * (a.length as f64 - b.length as f64)
        }
        AnnotatorKind::CoarseJudge { num_bins } => {
            annotator.validate()?;
            env.coarse_level(a.true_reward, num_bins) - env.coarse_level(b.true_reward, num_bins)
        }
    };
    Ok(sigmoid(margin))
}

fn unordered_pairs(env: &Environment) -> Vec<(PromptId, ResponseId, ResponseId)> {
    let mut out = Vec::new();
    for p in env.candidates.prompt_ids() {
        let n = env.candidates.candidates(p).len() as u32;
        for i in 0..n {
            for j in i + 1..n {
                out.push((p, ResponseId(i), ResponseId(j)));
            }
        }
    }
    out
}

/// Samples `num_pairs` distinct candidate pairs uniformly without replacement
/// and labels each with one Bernoulli draw from the annotator.
pub fn sample_offline_dataset(
    env: &Environment,
    annotator: AnnotatorKind,
    num_pairs: usize,
    seed: u64,
) -> Result<PreferenceDataset> {
    annotator.validate()?;
    let all = unordered_pairs(env);
    if num_pairs > all.len() {
        return Err(Error::NotEnoughPairs {
            requested: num_pairs,
            available: all.len(),
        });
    }
    let mut rng = rng::substream(seed, &[tag::OFFLINE], 0);
    let mut chosen = index::sample(&mut rng, all.len(), num_pairs).into_vec();
    chosen.sort_unstable();
    let mut pairs = Vec::with_capacity(num_pairs);
    for i in chosen {
        let (p, a, b) = all[i];
        let prob = bt_preference_prob(env, p, a, b, annotator)?;
        let (w, l) = if rng.random::<f64>() < prob { (a, b) } else { (b, a) };
        pairs.push(PreferencePair::new(p, w, l, Source::Offline));
    }
    Ok(PreferenceDataset::new(pairs, None, 0))
}

/// Every candidate pair in both orientations, weighted by the annotator's
/// probability for that orientation. Its population DPO minimiser is the
/// closed-form optimal policy for the annotator's reward.
pub fn full_preference_set(env: &Environment, annotator: AnnotatorKind) -> Result<PreferenceDataset> {
    annotator.validate()?;
    let mut pairs = Vec::new();
    for (p, a, b) in unordered_pairs(env) {
        let prob = bt_preference_prob(env, p, a, b, annotator)?;
        for (w, l, weight) in [(a, b, prob), (b, a, 1.0 - prob)] {
            if weight > 0.0 {
                let mut pair = PreferencePair::new(p, w, l, Source::Offline);
                pair.weight = weight;
                pairs.push(pair);
            }
        }
    }
    Ok(PreferenceDataset::new(pairs, None, 0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn env_with(cands: &[(f64, u32)], bias: f64) -> Environment {
        let row = cands
            .iter()
            .enumerate()
            .map(|(r, &(true_reward, length))| CandidateResponse {
                prompt_id: PromptId(0),
                response_id: ResponseId(r as u32),
                length,
                true_reward,
            })
            .collect();
        Environment::from_candidates(CandidateIndex::new(vec![row]).unwrap(), bias, 0).unwrap()
    }

    #[test]
    fn smallest_environment() {
        let env = generate_environment(&EnvConfig {
            num_prompts: 1,
            candidates_per_prompt: 2,
            seed: 0,
            ..EnvConfig::default()
        })
        .unwrap();
        let c = env.candidates().candidates(PromptId(0));
        assert_eq!(c.len(), 2);
        assert_ne!(c[0].response_id, c[1].response_id);
    }

    #[test]
    fn generation_is_deterministic() {
        let cfg = EnvConfig {
            seed: 42,
            ..EnvConfig::default()
        };
        assert_eq!(
            generate_environment(&cfg).unwrap().to_jsonl(),
            generate_environment(&cfg).unwrap().to_jsonl()
        );
    }

    #[test]
    fn lengths_span_two_values() {
        let env = generate_environment(&EnvConfig {
            num_prompts: 50,
            candidates_per_prompt: 8,
            seed: 7,
            ..EnvConfig::default()
        })
        .unwrap();
        for p in env.candidates().prompt_ids() {
            let mut ls: Vec<u32> = env.candidates().candidates(p).iter().map(|c| c.length).collect();
            ls.sort_unstable();
            ls.dedup();
            assert!(ls.len() >= 2);
        }
        // Even a two-value range with two candidates must end up mixed.
        let tight = generate_environment(&EnvConfig {
            num_prompts: 30,
            candidates_per_prompt: 2,
            min_length: 3,
            max_length: 4,
            seed: 1,
            ..EnvConfig::default()
        })
        .unwrap();
        for p in tight.candidates().prompt_ids() {
            let c = tight.candidates().candidates(p);
            assert_ne!(c[0].length, c[1].length);
        }
    }

    #[test]
    fn invalid_sizes() {
        for cfg in [
            EnvConfig { num_prompts: 0, ..EnvConfig::default() },
            EnvConfig { candidates_per_prompt: 1, ..EnvConfig::default() },
            EnvConfig { min_length: 5, max_length: 5, ..EnvConfig::default() },
        ] {
            assert!(matches!(generate_environment(&cfg), Err(Error::InvalidSize(_))));
        }
    }

    #[test]
    fn bt_examples() {
        let env = env_with(&[(0.2, 3), (0.2, 9)], 0.0);
        let p = bt_preference_prob(&env, PromptId(0), ResponseId(0), ResponseId(1), AnnotatorKind::ExactBt).unwrap();
        assert_eq!(p, 0.5);
        let env = env_with(&[(3f64.ln(), 3), (0.0, 9)], 0.0);
        let p = bt_preference_prob(&env, PromptId(0), ResponseId(0), ResponseId(1), AnnotatorKind::ExactBt).unwrap();
        assert!((p - 0.75).abs() < 1e-15);
        assert!(matches!(
            bt_preference_prob(&env, PromptId(0), ResponseId(0), ResponseId(2), AnnotatorKind::ExactBt),
            Err(Error::ForeignCandidate { .. })
        ));
    }

    #[test]
    fn coarse_judge_ties_within_bin() {
        // Reward range [0, 1] with 2 bins: 0.1 and 0.4 share bin 0.
        let env = env_with(&[(0.1, 3), (0.4, 9), (1.0, 2), (0.0, 4)], 0.0);
        let judge = AnnotatorKind::CoarseJudge { num_bins: 2 };
        let p = bt_preference_prob(&env, PromptId(0), ResponseId(0), ResponseId(1), judge).unwrap();
        assert_eq!(p, 0.5);
        let p = bt_preference_prob(&env, PromptId(0), ResponseId(2), ResponseId(1), judge).unwrap();
        assert!((p - sigmoid(1.0)).abs() < 1e-15);
        assert!(AnnotatorKind::CoarseJudge { num_bins: 1 }.validate().is_err());
    }

    #[test]
    fn offline_sampling_edges() {
        let env = generate_environment(&EnvConfig {
            num_prompts: 3,
            candidates_per_prompt: 4,
            ..EnvConfig::default()
        })
        .unwrap();
        assert!(sample_offline_dataset(&env, AnnotatorKind::ExactBt, 0, 1).unwrap().is_empty());
        let all = sample_offline_dataset(&env, AnnotatorKind::ExactBt, 18, 1).unwrap();
        assert_eq!(all.len(), 18);
        all.validate(env.candidates()).unwrap();
        assert!(matches!(
            sample_offline_dataset(&env, AnnotatorKind::ExactBt, 19, 1),
            Err(Error::NotEnoughPairs { requested: 19, available: 18 })
        ));
    }

    #[test]
    fn saturated_gap_always_picks_higher_reward() {
        let env = env_with(&[(100.0, 3), (-100.0, 9)], 0.0);
        for seed in 0..200 {
            let ds = sample_offline_dataset(&env, AnnotatorKind::ExactBt, 1, seed).unwrap();
            assert_eq!(ds.pairs[0].winner_id, ResponseId(0));
        }
    }

    #[test]
    fn biased_annotator_prefers_longer_when_lengths_oppose_quality() {
        // Lengths strongly anticorrelated with r*; b = 0.5.
        let cfg = EnvConfig {
            num_prompts: 60,
            candidates_per_prompt: 6,
            seed: 3,
            ..EnvConfig::default()
        };
        let base = generate_environment(&cfg).unwrap();
        let prompts = base
            .candidates()
            .prompt_ids()
            .map(|p| {
                let mut cands = base.candidates().candidates(p).to_vec();
                let mut by_reward: Vec<usize> = (0..cands.len()).collect();
                by_reward.sort_by(|&a, &b| cands[a].true_reward.total_cmp(&cands[b].true_reward));
                for (rank, &i) in by_reward.iter().enumerate() {
                    cands[i].length = 40 - 6 * rank as u32;
                }
                cands
            })
            .collect();
        let env = Environment::from_candidates(CandidateIndex::new(prompts).unwrap(), 0.5, 3).unwrap();
        let ds = sample_offline_dataset(&env, AnnotatorKind::BiasedBt { bias: 0.5 }, 900, 5).unwrap();
        let diffs: Vec<f64> = ds
            .pairs
            .iter()
            .map(|p| p.length_diff(env.candidates()).unwrap() as f64)
            .collect();
        let n = diffs.len() as f64;
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean - 1.96 * (var / n).sqrt() > 0.0, "mean {mean}");

        // Independent Monte-Carlo estimate of the same expectation.
        let mut expected = 0.0;
        let mut count = 0.0;
        for p in env.candidates().prompt_ids() {
            let c = env.candidates().candidates(p);
            for i in 0..c.len() {
                for j in i + 1..c.len() {
                    let z = c[i].true_reward - c[j].true_reward + 0.5 * (c[i].length as f64 - c[j].length as f64);
                    let pi = 1.0 / (1.0 + (-z).exp());
                    let d = c[i].length as f64 - c[j].length as f64;
                    expected += pi * d - (1.0 - pi) * d;
                    count += 1.0;
                }
            }
        }
        assert!(expected / count > 0.0);
    }

    #[test]
    fn winner_frequencies_follow_bt_probability() {
        // Chi-square goodness of fit over 4000 single-pair draws, df = 1.
        let env = env_with(&[(0.4, 3), (-0.3, 9)], 0.0);
        let p = bt_preference_prob(&env, PromptId(0), ResponseId(0), ResponseId(1), AnnotatorKind::ExactBt).unwrap();
        let n = 4000;
        let wins = (0..n)
            .filter(|&s| sample_offline_dataset(&env, AnnotatorKind::ExactBt, 1, s).unwrap().pairs[0].winner_id == ResponseId(0))
            .count() as f64;
        let e1 = p * n as f64;
        let e2 = (1.0 - p) * n as f64;
        let chi2 = (wins - e1).powi(2) / e1 + ((n as f64 - wins) - e2).powi(2) / e2;
        assert!(chi2 < 10.83, "chi2 {chi2}");
    }

    #[test]
    fn full_set_weights_sum_per_pair() {
        let env = env_with(&[(0.4, 3), (-0.3, 9), (1.0, 4)], 0.0);
        let ds = full_preference_set(&env, AnnotatorKind::ExactBt).unwrap();
        assert_eq!(ds.len(), 6);
        let total: f64 = ds.pairs.iter().map(|p| p.weight).sum();
        assert!((total - 3.0).abs() < 1e-12);
        ds.validate(env.candidates()).unwrap();
    }

    #[test]
    fn env_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let env = generate_environment(&EnvConfig {
            num_prompts: 4,
            candidates_per_prompt: 3,
            verbosity_bias: 0.25,
            seed: 9,
            ..EnvConfig::default()
        })
        .unwrap();
        let path = dir.path().join("env.jsonl");
        env.write(&path).unwrap();
        assert_eq!(Environment::read(&path).unwrap(), env);
    }

    proptest! {
        #[test]
        fn bt_complementary(r1 in -5.0f64..5.0, r2 in -5.0f64..5.0, l1 in 1u32..60, l2 in 1u32..60, b in 0.0f64..1.0) {
            let env = env_with(&[(r1, l1), (r2, l2)], b);
            for ann in [AnnotatorKind::ExactBt, AnnotatorKind::BiasedBt { bias: b }] {
                let p12 = bt_preference_prob(&env, PromptId(0), ResponseId(0), ResponseId(1), ann).unwrap();
                let p21 = bt_preference_prob(&env, PromptId(0), ResponseId(1), ResponseId(0), ann).unwrap();
                prop_assert_eq!(p12 + p21, 1.0);
            }
            let zero = AnnotatorKind::BiasedBt { bias: 0.0 };
            for (a, c) in [(0u32, 1u32), (1, 0)] {
                prop_assert_eq!(
                    bt_preference_prob(&env, PromptId(0), ResponseId(a), ResponseId(c), zero).unwrap(),
                    bt_preference_prob(&env, PromptId(0), ResponseId(a), ResponseId(c), AnnotatorKind::ExactBt).unwrap()
                );
            }
        }
    }
}
