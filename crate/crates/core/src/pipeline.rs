//! The self-alignment loop: sample, score, choose alpha, build, mix, train.
//!
//! Round `t` scores samples of `pi_{t-1}` with `pi_{t-2}` as the implicit
//! reward's reference and trains `pi_t` starting from `pi_{t-1}`, which also
//! serves as the loss reference. Baselines are the same loop under a
//! different configuration: `gamma = 1` retrains on offline data with a
//! rotating reference, and `rotate_reference = false` keeps the initial
//! reference throughout.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alpha::{search_alpha, AlphaSearchResult};
use crate::builder::{build_generated_dataset, max_mix_size, mix_replay, DatasetMeta, GeneratedDataset};
use crate::env::{sigmoid, Environment};
use crate::error::{Error, Result};
use crate::io;
use crate::loss::{train, TrainOutcome, TrainParams};
use crate::model::{AlphaMode, CandidateIndex, LossKind, PreferenceDataset, PromptId, RoundConfig};
use crate::oracle::{closed_form_optimal_policy, kl_divergence};
use crate::policy::{checkpoint_jsonl, PolicySnapshot, TabularPolicy};
use crate::reward::{score_responses, ScoredResponse};
use crate::rng::derive_seed;

/// Post-round evaluation against the hidden ground truth.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: i64,
    /// `E_{x, y ~ pi}[r*(x, y)]`.
    pub expected_true_reward: f64,
    /// Probability that a draw from the policy beats a draw from the base
    /// policy under exact Bradley-Terry.
    pub true_win_rate: f64,
    /// `KL(pi* || pi)` with `pi*` the closed-form optimum for `r*` around the
    /// initial reference, averaged over prompts.
    pub kl_to_optimal: f64,
    /// `E_{x, y ~ pi}[|y|]`.
    pub expected_length: f64,
    pub mean_chosen_length: Option<f64>,
    /// Mean `|y_w| - |y_l|` of the generated pairs without shaping.
    pub length_diff_unshaped: Option<f64>,
    /// Same, with the alpha actually used.
    pub length_diff_shaped: Option<f64>,
    pub alpha_star: Option<f64>,
    pub skip_count: usize,
    pub generated_pairs: usize,
    pub offline_pairs: usize,
    pub loss_initial: f64,
    pub loss_final: f64,
    pub policy_hash: String,
    pub scoring_reference_hash: Option<String>,
    pub training_reference_hash: String,
}

/// Ground-truth quantities shared by every round of an experiment.
#[derive(Debug, Clone)]
pub struct Evaluator {
    true_rewards: Vec<Vec<f64>>,
    lengths: Vec<Vec<f64>>,
    base: TabularPolicy,
    optimal: TabularPolicy,
}

impl Evaluator {
    pub fn new(env: &Environment, anchor: &TabularPolicy, base: &TabularPolicy, beta: f64) -> Result<Self> {
        let true_rewards = env.true_rewards();
        Ok(Self {
            optimal: closed_form_optimal_policy(anchor, &true_rewards, beta)?,
            lengths: env.lengths(),
            true_rewards,
            base: base.clone(),
        })
    }

    pub fn optimal(&self) -> &TabularPolicy {
        &self.optimal
    }

    pub fn expected_true_reward(&self, policy: &TabularPolicy) -> f64 {
        policy.mean_expectation(&self.true_rewards)
    }

    pub fn expected_length(&self, policy: &TabularPolicy) -> f64 {
        policy.mean_expectation(&self.lengths)
    }

    pub fn kl_to_optimal(&self, policy: &TabularPolicy) -> f64 {
        kl_divergence(&self.optimal, policy)
    }

    /// Win rate of `policy` against `other` under exact Bradley-Terry.
    pub fn win_rate_against(&self, policy: &TabularPolicy, other: &TabularPolicy) -> f64 {
        let n = policy.num_prompts();
        let total: f64 = (0..n)
            .map(|p| {
                let id = PromptId(p as u32);
                let a = policy.probs(id).expect("prompt in range");
                let b = other.probs(id).expect("prompt in range");
                let r = &self.true_rewards[p];
                let mut s = 0.0;
                for (i, pa) in a.iter().enumerate() {
                    for (j, pb) in b.iter().enumerate() {
                        s += pa * pb * sigmoid(r[i] - r[j]);
                    }
                }
                s
            })
            .sum();
        total / n as f64
    }

    pub fn win_rate(&self, policy: &TabularPolicy) -> f64 {
        self.win_rate_against(policy, &self.base)
    }
}

/// Policies entering round `t`.
#[derive(Debug, Clone)]
pub struct RoundState {
    /// Initial reference `pi_{theta^(-1)}`.
    pub anchor: PolicySnapshot,
    /// `pi_{t-2}`.
    pub previous: PolicySnapshot,
    /// `pi_{t-1}`.
    pub current: PolicySnapshot,
    /// Index of the round about to run.
    pub round: i64,
}

impl RoundState {
    pub fn initial(anchor: PolicySnapshot, base: PolicySnapshot) -> Self {
        Self {
            previous: anchor.clone(),
            anchor,
            current: base,
            round: 1,
        }
    }

    pub fn advance(&self, next: PolicySnapshot) -> Self {
        Self {
            anchor: self.anchor.clone(),
            previous: self.current.clone(),
            current: next,
            round: self.round + 1,
        }
    }
}

#[derive(Debug, Clone)]
pub struct RoundOutcome {
    pub policy: TabularPolicy,
    pub scored: Vec<Vec<ScoredResponse>>,
    pub alpha: f64,
    pub search: Option<AlphaSearchResult>,
    pub generated: GeneratedDataset,
    pub unshaped: GeneratedDataset,
    pub mixed: PreferenceDataset,
    pub training: TrainOutcome,
    pub metrics: RoundMetrics,
    pub scoring_reference_hash: String,
    pub training_reference_hash: String,
}

/// Samples `k` responses per prompt from `sampler` and scores them.
/// Prompts are processed on `parallel` worker threads; the result does not
/// depend on the thread count.
pub fn sample_and_score(
    sampler: &TabularPolicy,
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    universe: &CandidateIndex,
    k: usize,
    beta: f64,
    seed: u64,
    parallel: usize,
) -> Result<Vec<Vec<ScoredResponse>>> {
    let work = |p: usize| -> Result<Vec<ScoredResponse>> {
        let id = PromptId(p as u32);
        let requests: Vec<_> = sampler.sample_k(id, k, seed)?.into_iter().map(|r| (id, r)).collect();
        score_responses(policy, reference, universe, &requests, beta, 0.0)
    };
    let n = universe.num_prompts();
    if parallel <= 1 {
        return (0..n).map(work).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?;
    pool.install(|| (0..n).into_par_iter().map(work).collect())
}

fn train_params(config: &RoundConfig, round: i64, steps: usize) -> TrainParams {
    TrainParams {
        steps,
        learning_rate: config.learning_rate,
        batch_size: config.batch_size,
        seed: derive_seed(config.seed, &[round as u64]),
    }
}

/// One round of the loop.
pub fn run_round(
    state: &RoundState,
    env: &Environment,
    offline: &PreferenceDataset,
    config: &RoundConfig,
    evaluator: &Evaluator,
    parallel: usize,
) -> Result<RoundOutcome> {
    config.validate()?;
    let universe = env.candidates();
    let t = state.round;
    let round_seed = derive_seed(config.seed, &[t as u64]);
    let current = state.current.policy();
    let scoring_ref = if config.rotate_reference { &state.previous } else { &state.anchor };
    let training_ref = if config.rotate_reference { &state.current } else { &state.anchor };

    let sampler = current.temperature_scale(config.temperature)?;
    let scored = sample_and_score(
        &sampler,
        current,
        scoring_ref.policy(),
        universe,
        config.k_samples,
        config.beta,
        round_seed,
        parallel,
    )?;

    let (alpha, search) = match config.alpha_mode {
        AlphaMode::Off => (0.0, None),
        AlphaMode::Fixed(a) => (a, None),
        AlphaMode::Auto => match search_alpha(&scored, config.alpha_search_budget, config.alpha_max, round_seed) {
            Ok(res) => (res.alpha_star, Some(res)),
            // Every prompt collapsed onto one candidate: no pairs for any alpha.
            Err(Error::AllDegenerate { .. }) => (0.0, None),
            Err(e) => return Err(e),
        },
    };
    let generated = build_generated_dataset(&scored, alpha, t);
    let unshaped = build_generated_dataset(&scored, 0.0, t);

    let n = config
        .mix_size
        .unwrap_or_else(|| max_mix_size(config.gamma, generated.dataset.len(), offline.len()));
    let mixed = mix_replay(&generated.dataset, offline, config.gamma, n, round_seed, config.replay)?;

    let training = train(
        current,
        training_ref.policy(),
        &mixed,
        universe,
        config.loss_kind,
        config.beta,
        &train_params(config, t, config.steps),
    )?;
    let mut policy = training.policy.clone();
    policy.round = t;

    let mean_chosen_length = if generated.dataset.is_empty() {
        None
    } else {
        let total: f64 = generated
            .dataset
            .pairs
            .iter()
            .map(|p| universe.length(p.prompt_id, p.winner_id).map(f64::from))
            .sum::<Result<f64>>()?;
        Some(total / generated.dataset.len() as f64)
    };
    let metrics = RoundMetrics {
        round: t,
        expected_true_reward: evaluator.expected_true_reward(&policy),
        true_win_rate: evaluator.win_rate(&policy),
        kl_to_optimal: evaluator.kl_to_optimal(&policy),
        expected_length: evaluator.expected_length(&policy),
        mean_chosen_length,
        length_diff_unshaped: unshaped.dataset.mean_length_diff(universe)?,
        length_diff_shaped: generated.dataset.mean_length_diff(universe)?,
        alpha_star: Some(alpha),
        skip_count: generated.skipped,
        generated_pairs: mixed.count_source(crate::model::Source::Generated),
        offline_pairs: mixed.count_source(crate::model::Source::Offline),
        loss_initial: training.initial_loss(),
        loss_final: training.final_loss(),
        policy_hash: policy.content_hash(),
        scoring_reference_hash: Some(scoring_ref.content_hash.clone()),
        training_reference_hash: training_ref.content_hash.clone(),
    };
    Ok(RoundOutcome {
        policy,
        scored,
        alpha,
        search,
        generated,
        unshaped,
        mixed,
        training,
        metrics,
        scoring_reference_hash: scoring_ref.content_hash.clone(),
        training_reference_hash: training_ref.content_hash.clone(),
    })
}

/// DPO-tunes the base policy `pi_0` from the initial reference on the
/// offline data.
pub fn train_base_policy(
    env: &Environment,
    anchor: &TabularPolicy,
    offline: &PreferenceDataset,
    config: &RoundConfig,
) -> Result<TrainOutcome> {
    let steps = config.base_steps.unwrap_or(config.steps);
    let mut out = train(
        anchor,
        anchor,
        offline,
        env.candidates(),
        LossKind::Dpo,
        config.beta,
        &train_params(config, 0, steps),
    )?;
    out.policy.round = 0;
    Ok(out)
}

pub fn base_metrics(evaluator: &Evaluator, base: &TabularPolicy, training: Option<&TrainOutcome>, anchor_hash: &str) -> RoundMetrics {
    RoundMetrics {
        round: 0,
        expected_true_reward: evaluator.expected_true_reward(base),
        true_win_rate: evaluator.win_rate(base),
        kl_to_optimal: evaluator.kl_to_optimal(base),
        expected_length: evaluator.expected_length(base),
        mean_chosen_length: None,
        length_diff_unshaped: None,
        length_diff_shaped: None,
        alpha_star: None,
        skip_count: 0,
        generated_pairs: 0,
        offline_pairs: 0,
        loss_initial: training.map_or(0.0, TrainOutcome::initial_loss),
        loss_final: training.map_or(0.0, TrainOutcome::final_loss),
        policy_hash: base.content_hash(),
        scoring_reference_hash: None,
        training_reference_hash: anchor_hash.to_owned(),
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub anchor: TabularPolicy,
    pub base: TabularPolicy,
    pub base_metrics: RoundMetrics,
    pub rounds: Vec<RoundOutcome>,
}

impl ExperimentOutcome {
    pub fn metrics(&self) -> Vec<&RoundMetrics> {
        std::iter::once(&self.base_metrics)
            .chain(self.rounds.iter().map(|r| &r.metrics))
            .collect()
    }

    pub fn final_policy(&self) -> &TabularPolicy {
        self.rounds.last().map_or(&self.base, |r| &r.policy)
    }
}

/// Runs `rounds` rounds. When `base` is `None` the base policy is trained
/// from `anchor` on `offline` first. With `out_dir` set, each round's
/// checkpoint, data and metrics are written atomically under `round_{t}/`.
pub fn run_experiment(
    env: &Environment,
    offline: &PreferenceDataset,
    anchor: &TabularPolicy,
    base: Option<&TabularPolicy>,
    config: &RoundConfig,
    rounds: usize,
    parallel: usize,
    out_dir: Option<&Path>,
) -> Result<ExperimentOutcome> {
    config.validate()?;
    if rounds < 1 {
        return Err(Error::config("rounds", "must be >= 1"));
    }
    let universe = env.candidates();
    anchor.check_universe(universe)?;
    offline.validate(universe)?;
    let hash = config.config_hash();

    let (base, base_training) = match base {
        Some(b) => {
            b.check_universe(universe)?;
            (b.clone(), None)
        }
        None => {
            let out = train_base_policy(env, anchor, offline, config)?;
            (out.policy.clone(), Some(out))
        }
    };
    let evaluator = Evaluator::new(env, anchor, &base, config.beta)?;
    let anchor_snap = anchor.snapshot(hash.clone());
    let base_metrics = base_metrics(&evaluator, &base, base_training.as_ref(), &anchor_snap.content_hash);
    if let Some(dir) = out_dir {
        io::write_json(&dir.join("config.json"), config)?;
        let mut files = vec![
            ("policy.jsonl".to_owned(), checkpoint_jsonl(&base, &hash)),
            ("metrics.json".to_owned(), json_pretty(&base_metrics)),
        ];
        if let Some(t) = &base_training {
            files.push(("loss_trace.csv".to_owned(), csv_text(&["step", "mean_loss", "grad_norm"], t.trace_rows())));
        }
        write_round_dir(dir, 0, &files)?;
    }

    let mut state = RoundState::initial(anchor_snap, base.snapshot(hash.clone()));
    let mut outcomes = Vec::with_capacity(rounds);
    for _ in 0..rounds {
        let outcome = run_round(&state, env, offline, config, &evaluator, parallel)?;
        if let Some(dir) = out_dir {
            write_round_dir(dir, state.round, &round_files(env, config, &outcome, &hash))?;
        }
        state = state.advance(outcome.policy.snapshot(hash.clone()));
        outcomes.push(outcome);
    }
    Ok(ExperimentOutcome {
        anchor: anchor.clone(),
        base,
        base_metrics,
        rounds: outcomes,
    })
}

fn json_pretty<T: Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("value serializes");
    s.push('\n');
    s
}

fn csv_text(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut out = header.join(",");
    out.push('\n');
    for r in rows {
        out.push_str(&r.join(","));
        out.push('\n');
    }
    out
}

/// `bin_left, bin_right, count` rows of `|y_w| - |y_l|`. Bins are
/// left-closed, span `[-S, S]` with `S` the length range of the universe.
pub fn length_histogram(ds: &PreferenceDataset, universe: &CandidateIndex) -> Result<Vec<(i64, i64, usize)>> {
    let (lo, hi) = universe
        .iter()
        .fold((u32::MAX, 0u32), |(lo, hi), c| (lo.min(c.length), hi.max(c.length)));
    let span = (hi - lo) as i64;
    let width = ((2 * span + 1) as f64 / 20.0).ceil().max(1.0) as i64;
    let bins = ((2 * span + 1) + width - 1) / width;
    let mut counts = vec![0usize; bins as usize];
    for pair in &ds.pairs {
        let d = pair.length_diff(universe)?;
        counts[((d + span) / width) as usize] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| {
            let left = -span + i as i64 * width;
            (left, left + width, c)
        })
        .collect())
}

fn hist_csv(ds: &PreferenceDataset, universe: &CandidateIndex) -> Result<String> {
    let rows = length_histogram(ds, universe)?
        .into_iter()
        .map(|(l, r, c)| vec![l.to_string(), r.to_string(), c.to_string()])
        .collect();
    Ok(csv_text(&["bin_left", "bin_right", "count"], rows))
}

fn round_files(env: &Environment, config: &RoundConfig, outcome: &RoundOutcome, hash: &str) -> Vec<(String, String)> {
    let universe = env.candidates();
    let meta = DatasetMeta::describe(&outcome.mixed, Some(config.gamma), outcome.generated.skipped, config.seed);
    let mut files = vec![
        ("policy.jsonl".to_owned(), checkpoint_jsonl(&outcome.policy, hash)),
        ("dataset.jsonl".to_owned(), io::to_jsonl(&outcome.mixed.pairs)),
        ("dataset.meta.json".to_owned(), json_pretty(&meta)),
        ("metrics.json".to_owned(), json_pretty(&outcome.metrics)),
        (
            "length_hist.csv".to_owned(),
            hist_csv(&outcome.generated.dataset, universe).expect("pairs validated against universe"),
        ),
        (
            "length_hist_alpha0.csv".to_owned(),
            hist_csv(&outcome.unshaped.dataset, universe).expect("pairs validated against universe"),
        ),
        (
            "loss_trace.csv".to_owned(),
            csv_text(&["step", "mean_loss", "grad_norm"], outcome.training.trace_rows()),
        ),
    ];
    if let Some(search) = &outcome.search {
        files.push((
            "alpha_trace.csv".to_owned(),
            csv_text(&["alpha", "objective", "signed_mean"], search.trace_rows()),
        ));
    }
    files
}

/// Writes all files into a hidden temp directory, then renames it onto
/// `round_{t}`; a failure part-way leaves any existing round untouched.
fn write_round_dir(root: &Path, round: i64, files: &[(String, String)]) -> Result<()> {
    let io_err = |path: PathBuf| move |source| Error::Io { path, source };
    let target = root.join(format!("round_{round}"));
    let tmp = root.join(format!(".round_{round}.tmp"));
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(io_err(tmp.clone()))?;
    }
    fs::create_dir_all(&tmp).map_err(io_err(tmp.clone()))?;
    for (name, body) in files {
        io::write_atomic(&tmp.join(name), body.as_bytes())?;
    }
    if target.exists() {
        fs::remove_dir_all(&target).map_err(io_err(target.clone()))?;
    }
    fs::rename(&tmp, &target).map_err(io_err(target.clone()))
}
