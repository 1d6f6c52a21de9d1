//! Brute-force checks that do not share code paths with the machinery they
//! verify: the closed-form KL-regularised optimum, reward recovery from a
//! policy ratio, finite-difference gradients, the exact alpha landscape and
//! the never-sampled-response demonstration.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::env::Environment;
use crate::error::{Error, Result};
use crate::io;
use crate::loss::pair_loss;
use crate::model::{
    AlphaMode, CandidateIndex, CandidateResponse, LossKind, PreferenceDataset, PreferencePair, PromptId, ResponseId,
    RoundConfig, Source,
};
use crate::pipeline::run_experiment;
use crate::policy::{logsumexp, TabularPolicy};
use crate::reward::ScoredResponse;
use crate::rng::{self, tag};

fn check_beta(beta: f64) -> Result<()> {
    if beta.is_finite() && beta > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("beta must be > 0, got {beta}")))
    }
}

fn check_table(reference: &TabularPolicy, table: &[Vec<f64>], what: &str) -> Result<()> {
    let shape: Vec<usize> = table.iter().map(Vec::len).collect();
    if shape != reference.shape() {
        return Err(Error::MismatchedUniverse(format!("{what} table does not match the policy shape")));
    }
    if table.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!("{what} table")));
    }
    Ok(())
}

/// `pi*(y|x) ∝ pi_ref(y|x) exp(r(x,y) / beta)`, normalised by summing over
/// each prompt's candidates.
pub fn closed_form_optimal_policy(reference: &TabularPolicy, rewards: &[Vec<f64>], beta: f64) -> Result<TabularPolicy> {
    check_beta(beta)?;
    check_table(reference, rewards, "reward")?;
    let logits = (0..reference.num_prompts())
        .map(|p| {
            let log_ref = reference.log_probs(PromptId(p as u32))?;
            let unnorm: Vec<f64> = log_ref.iter().zip(&rewards[p]).map(|(l, r)| l + r / beta).collect();
            let z = logsumexp(&unnorm);
            Ok(unnorm.into_iter().map(|u| u - z).collect())
        })
        .collect::<Result<Vec<Vec<f64>>>>()?;
    TabularPolicy::from_logits(logits, reference.round)
}

/// `KL(p || q)` averaged over prompts.
pub fn kl_divergence(p: &TabularPolicy, q: &TabularPolicy) -> f64 {
    let n = p.num_prompts();
    let total: f64 = (0..n)
        .map(|i| {
            let id = PromptId(i as u32);
            let lp = p.log_probs(id).expect("prompt in range");
            let lq = q.log_probs(id).expect("prompt in range");
            lp.iter()
                .zip(&lq)
                .map(|(a, b)| {
                    let pa = a.exp();
                    if pa == 0.0 {
                        0.0
                    } else {
                        pa * (a - b)
                    }
                })
                .sum::<f64>()
        })
        .sum();
    total / n as f64
}

pub const CONSISTENCY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    pub pass: bool,
    pub tolerance: f64,
    /// Largest per-prompt spread of `implicit_reward - r`.
    pub max_spread: f64,
    pub worst_prompt: PromptId,
    /// Candidate of the worst prompt furthest from that prompt's mean offset.
    pub worst_response: ResponseId,
    pub spreads: Vec<f64>,
}

/// Checks that `beta * log(pi / pi_ref)` equals `r` up to one constant per
/// prompt.
pub fn verify_implicit_reward_consistency(
    policy: &TabularPolicy,
    reference: &TabularPolicy,
    rewards: &[Vec<f64>],
    beta: f64,
) -> Result<ConsistencyReport> {
    check_beta(beta)?;
    if policy.shape() != reference.shape() {
        return Err(Error::MismatchedUniverse("policy and reference shapes differ".into()));
    }
    check_table(reference, rewards, "reward")?;
    let mut spreads = Vec::with_capacity(policy.num_prompts());
    let mut worst = (0usize, 0usize, f64::NEG_INFINITY);
    for p in 0..policy.num_prompts() {
        let id = PromptId(p as u32);
        let lp = policy.log_probs(id)?;
        let lr = reference.log_probs(id)?;
        let offsets: Vec<f64> = (0..lp.len()).map(|y| beta * (lp[y] - lr[y]) - rewards[p][y]).collect();
        let lo = offsets.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = offsets.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let spread = hi - lo;
        if spread > worst.2 {
            let mean = offsets.iter().sum::<f64>() / offsets.len() as f64;
            let y = (0..offsets.len())
                .max_by(|&a, &b| (offsets[a] - mean).abs().total_cmp(&(offsets[b] - mean).abs()))
                .unwrap_or(0);
            worst = (p, y, spread);
        }
        spreads.push(spread);
    }
    Ok(ConsistencyReport {
        pass: worst.2 <= CONSISTENCY_TOLERANCE,
        tolerance: CONSISTENCY_TOLERANCE,
        max_spread: worst.2,
        worst_prompt: PromptId(worst.0 as u32),
        worst_response: ResponseId(worst.1 as u32),
        spreads,
    })
}

/// A single-pair loss evaluation point.
#[derive(Debug, Clone)]
pub struct GradInstance {
    pub policy: TabularPolicy,
    pub reference: TabularPolicy,
    pub universe: CandidateIndex,
    pub pair: PreferencePair,
}

impl GradInstance {
    /// One prompt with `n` candidates: standard-normal policy and reference
    /// logits, lengths in `1..=50` and a random distinct pair.
    pub fn random(seed: u64, n: usize) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidSize(format!("need at least 2 candidates, got {n}")));
        }
        let mut rng = rng::substream(seed, &[tag::ORACLE], 0);
        let normals = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
            (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
        };
        let policy = TabularPolicy::from_logits(vec![normals(&mut rng)], 0)?;
        let reference = TabularPolicy::from_logits(vec![normals(&mut rng)], -1)?;
        let candidates = (0..n)
            .map(|y| CandidateResponse {
                prompt_id: PromptId(0),
                response_id: ResponseId(y as u32),
                length: rng.random_range(1..=50),
                true_reward: 0.0,
            })
            .collect();
        let universe = CandidateIndex::new(vec![candidates])?;
        let w = rng.random_range(0..n);
        let l = (w + rng.random_range(1..n)) % n;
        let pair = PreferencePair::new(PromptId(0), ResponseId(w as u32), ResponseId(l as u32), Source::Offline);
        Ok(Self {
            policy,
            reference,
            universe,
            pair,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckStatus {
    Pass,
    Fail,
    Skip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FiniteDifferenceReport {
    pub status: CheckStatus,
    pub loss: String,
    pub value: f64,
    pub max_relative_error: f64,
    /// `(prompt, candidate)` of the worst entry.
    pub worst_entry: (usize, usize),
    pub h: f64,
    pub tolerance: f64,
    pub note: Option<String>,
}

/// Gradient magnitude below which errors are measured absolutely.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-8;

/// Compares the analytic gradient with central differences of the loss value
/// in every logit. Errors are relative to the largest gradient entry, so
/// entries that are exactly zero analytically are judged against the
/// gradient's scale rather than their own. The hinge loss is skipped within a few `h` of its kink.
pub fn finite_difference_check(
    kind: LossKind,
    instance: &GradInstance,
    beta: f64,
    h: f64,
    tolerance: f64,
) -> Result<FiniteDifferenceReport> {
    if !(h.is_finite() && h > 0.0) {
        return Err(Error::InvalidArgument(format!("h must be > 0, got {h}")));
    }
    let GradInstance {
        policy,
        reference,
        universe,
        pair,
    } = instance;
    let eval = |p: &TabularPolicy| pair_loss(kind, p, reference, pair, Some(universe), beta);
    let analytic = eval(policy)?;
    let mut report = FiniteDifferenceReport {
        status: CheckStatus::Pass,
        loss: kind.name().to_owned(),
        value: analytic.value,
        max_relative_error: 0.0,
        worst_entry: (0, 0),
        h,
        tolerance,
        note: None,
    };
    if let LossKind::Hinge = kind {
        let a = crate::loss::margin(policy, reference, pair)?;
        let distance = (1.0 - beta * a).abs();
        if distance <= 10.0 * beta * h {
            report.status = CheckStatus::Skip;
            report.note = Some(format!("hinge kink within {distance:e} of the evaluation point"));
            return Ok(report);
        }
    }
    let base = policy.logit_table().to_vec();
    let mut numeric_grad = analytic.grad.clone();
    for (p, row) in base.iter().enumerate() {
        for y in 0..row.len() {
            let shifted = |delta: f64| {
                let mut logits = base.clone();
                logits[p][y] += delta;
                TabularPolicy::from_logits(logits, policy.round)
            };
            let plus = eval(&shifted(h)?)?.value;
            let minus = eval(&shifted(-h)?)?.value;
            numeric_grad[p][y] = (plus - minus) / (2.0 * h);
        }
    }
    let max_abs = |g: &[Vec<f64>]| g.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    let scale = max_abs(&analytic.grad).max(max_abs(&numeric_grad)).max(RELATIVE_ERROR_FLOOR);
    for (p, (exact, numeric)) in analytic.grad.iter().zip(&numeric_grad).enumerate() {
        for (y, (e, n)) in exact.iter().zip(numeric).enumerate() {
            let err = (e - n).abs() / scale;
            if err > report.max_relative_error {
                report.max_relative_error = err;
                report.worst_entry = (p, y);
            }
        }
    }
    if report.max_relative_error > tolerance {
        report.status = CheckStatus::Fail;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSuiteEntry {
    pub loss: String,
    pub passed: usize,
    pub skipped: usize,
    pub failed: usize,
    pub max_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradientSuiteReport {
    pub pass: bool,
    pub instances: usize,
    pub h: f64,
    pub tolerance: f64,
    pub entries: Vec<GradientSuiteEntry>,
}

/// The losses checked by [`gradient_suite`] with their per-instance beta.
fn suite_losses(seed: u64) -> [(LossKind, f64); 4] {
    let beta = [0.1, 0.5, 1.0][(seed % 3) as usize];
    [
        (LossKind::Dpo, beta),
        (LossKind::Ipo { tau: Some(0.5) }, 0.5),
        (LossKind::Hinge, beta),
        (LossKind::DpoLengthPenalized { lambda: 0.05 }, beta),
    ]
}

/// Finite-difference checks of every loss on `instances` random instances
/// with 2 to 8 candidates.
pub fn gradient_suite(instances: usize, h: f64, tolerance: f64) -> Result<GradientSuiteReport> {
    let mut entries: Vec<GradientSuiteEntry> = suite_losses(0)
        .iter()
        .map(|(k, _)| GradientSuiteEntry {
            loss: k.name().to_owned(),
            passed: 0,
            skipped: 0,
            failed: 0,
            max_relative_error: 0.0,
        })
        .collect();
    for seed in 0..instances as u64 {
        let inst = GradInstance::random(seed, 2 + (seed % 7) as usize)?;
        for (entry, (kind, beta)) in entries.iter_mut().zip(suite_losses(seed)) {
            let r = finite_difference_check(kind, &inst, beta, h, tolerance)?;
            match r.status {
                CheckStatus::Pass => entry.passed += 1,
                CheckStatus::Skip => entry.skipped += 1,
                CheckStatus::Fail => entry.failed += 1,
            }
            entry.max_relative_error = entry.max_relative_error.max(r.max_relative_error);
        }
    }
    Ok(GradientSuiteReport {
        pass: entries.iter().all(|e| e.failed == 0 && e.passed > 0),
        instances,
        h,
        tolerance,
        entries,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundTripReport {
    pub pass: bool,
    pub seeds: usize,
    pub beta: f64,
    pub max_spread: f64,
    pub worst_seed: u64,
}

/// Random reference and rewards for a round-trip check: four prompts with
/// 2 to 10 candidates each.
pub fn random_reward_instance(seed: u64) -> (TabularPolicy, Vec<Vec<f64>>) {
    let mut rng = rng::substream(seed, &[tag::ORACLE], 2);
    let shape: Vec<usize> = (0..4).map(|_| rng.random_range(2..=10)).collect();
    let reference = TabularPolicy::random(&shape, 2.0, seed, -1);
    let rewards = shape
        .iter()
        .map(|&n| (0..n).map(|_| 2.0 * rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    (reference, rewards)
}

/// Builds `pi*` and checks that its implicit rewards recover `r` for each of
/// `seeds` random instances.
pub fn round_trip_suite(seeds: usize, beta: f64) -> Result<RoundTripReport> {
    let mut report = RoundTripReport {
        pass: true,
        seeds,
        beta,
        max_spread: 0.0,
        worst_seed: 0,
    };
    for seed in 0..seeds as u64 {
        let (reference, rewards) = random_reward_instance(seed);
        let star = closed_form_optimal_policy(&reference, &rewards, beta)?;
        let r = verify_implicit_reward_consistency(&star, &reference, &rewards, beta)?;
        if r.max_spread > report.max_spread {
            report.max_spread = r.max_spread;
            report.worst_seed = seed;
        }
        report.pass &= r.pass;
    }
    Ok(report)
}

/// One constant piece of the alpha objective.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    pub lo: f64,
    /// `None` for the unbounded last cell.
    pub hi: Option<f64>,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaLandscape {
    /// Positive alphas where some within-prompt ordering changes, ascending.
    pub breakpoints: Vec<f64>,
    /// Open cells between consecutive breakpoints, starting at zero.
    pub cells: Vec<Cell>,
    /// Objective exactly at each breakpoint.
    pub at_breakpoints: Vec<f64>,
    pub global_min: f64,
}

/// Direct evaluation of `|mean(|y_w| - |y_l|)|` for one
/// alpha. Written independently of the search module.
fn landscape_objective(groups: &[Vec<ScoredResponse>], alpha: f64) -> Option<f64> {
    let mut sum = 0.0;
    let mut used = 0usize;
    for g in groups {
        if g.is_empty() {
            continue;
        }
        let key = |s: &ScoredResponse| s.implicit_reward - alpha * s.length as f64;
        let mut order: Vec<&ScoredResponse> = g.iter().collect();
        // Descending shaped reward, ascending id among ties.
        order.sort_by(|a, b| key(b).total_cmp(&key(a)).then(a.response_id.cmp(&b.response_id)));
        let winner = order[0];
        let lowest = key(order[order.len() - 1]);
        let loser = order
            .iter()
            .filter(|s| key(s) == lowest)
            .max_by_key(|s| s.response_id)
            .copied()
            .expect("non-empty");
        if winner.response_id != loser.response_id {
            sum += winner.length as f64 - loser.length as f64;
            used += 1;
        }
    }
    (used > 0).then(|| (sum / used as f64).abs())
}

/// Every breakpoint `(r_i - r_j) / (len_i - len_j) > 0` and the objective on
/// each cell and at each breakpoint.
pub fn breakpoint_scan(groups: &[Vec<ScoredResponse>]) -> Result<AlphaLandscape> {
    let mut breakpoints = Vec::new();
    for g in groups {
        for (i, a) in g.iter().enumerate() {
            for b in &g[i + 1..] {
                if a.length != b.length {
                    let bp = (a.implicit_reward - b.implicit_reward) / (a.length as f64 - b.length as f64);
                    if bp > 0.0 && bp.is_finite() {
                        breakpoints.push(bp);
                    }
                }
            }
        }
    }
    breakpoints.sort_by(f64::total_cmp);
    breakpoints.dedup();
    let eval = |alpha: f64| {
        landscape_objective(groups, alpha).ok_or(Error::AllDegenerate { excluded: groups.len() })
    };
    let mut edges = vec![0.0];
    edges.extend(&breakpoints);
    let mut cells = Vec::with_capacity(edges.len());
    for (i, &lo) in edges.iter().enumerate() {
        let (hi, probe) = match edges.get(i + 1) {
            Some(&hi) => (Some(hi), 0.5 * (lo + hi)),
            None => (None, if lo > 0.0 { 2.0 * lo } else { 1.0 }),
        };
        cells.push(Cell {
            lo,
            hi,
            objective: eval(probe)?,
        });
    }
    let mut at_breakpoints = vec![eval(0.0)?];
    for &bp in &breakpoints {
        at_breakpoints.push(eval(bp)?);
    }
    let global_min = cells
        .iter()
        .map(|c| c.objective)
        .chain(at_breakpoints.iter().copied())
        .fold(f64::INFINITY, f64::min);
    Ok(AlphaLandscape {
        breakpoints,
        at_breakpoints,
        cells,
        global_min,
    })
}

impl AlphaLandscape {
    /// Index of the open cell containing `alpha`, or `None` when `alpha` is
    /// zero or sits exactly on a breakpoint.
    pub fn cell_of(&self, alpha: f64) -> Option<usize> {
        if alpha <= 0.0 || self.breakpoints.binary_search_by(|b| b.total_cmp(&alpha)).is_ok() {
            return None;
        }
        Some(self.breakpoints.partition_point(|&b| b < alpha))
    }

    /// Objective at `alpha` as read off the landscape.
    pub fn objective_at(&self, alpha: f64) -> f64 {
        match self.cell_of(alpha) {
            Some(i) => self.cells[i].objective,
            None if alpha <= 0.0 => self.at_breakpoints[0],
            None => {
                let i = self.breakpoints.binary_search_by(|b| b.total_cmp(&alpha)).expect("on a breakpoint");
                self.at_breakpoints[i + 1]
            }
        }
    }

    /// Whether `alpha` attains the global minimum.
    pub fn is_global_min(&self, alpha: f64) -> bool {
        self.objective_at(alpha) <= self.global_min
    }
}

/// A tabular instance with a high-mass, low-reward candidate `y_minus` that
/// the offline data never mentions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeverSampledFixture {
    pub rewards: Vec<Vec<f64>>,
    pub lengths: Vec<Vec<u32>>,
    /// Initial reference `pi_{-1}`.
    pub anchor_logits: Vec<Vec<f64>>,
    /// Base policy `pi_0` shared by both arms.
    pub base_logits: Vec<Vec<f64>>,
    pub offline: Vec<PreferencePair>,
    pub prompt: PromptId,
    pub y_minus: ResponseId,
    pub y_star: ResponseId,
    pub rounds: usize,
    /// Offline arm passes when it keeps at least this fraction of the
    /// initial `y_minus` mass.
    pub retain_ratio: f64,
    /// On-policy arm passes when the final `y_minus` mass is below this.
    pub threshold: f64,
    /// Configuration of the on-policy arm; the offline arm overrides `gamma`
    /// to 1.
    pub config: RoundConfig,
}

const DESIGNED_FIXTURE: &str = include_str!("../fixtures/never_sampled.json");

impl NeverSampledFixture {
    /// The calibrated fixture shipped with the crate.
    pub fn designed() -> Self {
        serde_json::from_str(DESIGNED_FIXTURE).expect("bundled fixture parses")
    }

    pub fn read(path: &Path) -> Result<Self> {
        io::read_json(path)
    }

    pub fn environment(&self) -> Result<Environment> {
        if self.rewards.len() != self.lengths.len() {
            return Err(Error::LengthMismatch {
                left: self.rewards.len(),
                right: self.lengths.len(),
            });
        }
        let prompts = self
            .rewards
            .iter()
            .zip(&self.lengths)
            .enumerate()
            .map(|(p, (r, l))| {
                if r.len() != l.len() {
                    return Err(Error::LengthMismatch {
                        left: r.len(),
                        right: l.len(),
                    });
                }
                Ok(r.iter()
                    .zip(l)
                    .enumerate()
                    .map(|(y, (&true_reward, &length))| CandidateResponse {
                        prompt_id: PromptId(p as u32),
                        response_id: ResponseId(y as u32),
                        length,
                        true_reward,
                    })
                    .collect())
            })
            .collect::<Result<Vec<_>>>()?;
        Environment::from_candidates(CandidateIndex::new(prompts)?, 0.0, self.config.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeverSampledReport {
    pub pass: bool,
    pub initial_mass: f64,
    /// `pi(y_minus)` at rounds `0..=T` of each arm.
    pub offline_trajectory: Vec<f64>,
    pub on_policy_trajectory: Vec<f64>,
    /// `pi(y_star)` at the same checkpoints.
    pub offline_star: Vec<f64>,
    pub on_policy_star: Vec<f64>,
    /// `initial_mass - final offline mass`.
    pub leakage: f64,
    pub retained_ratio: f64,
    pub retain_ratio_required: f64,
    pub threshold: f64,
    /// `pi(y_star) <= 1 - pi(y_minus)` at every checkpoint of both arms.
    pub bound_holds: bool,
    pub shared_initialization: bool,
}

/// Runs the fixture's offline-only arm (`gamma = 1`) and on-policy arm for
/// `rounds` rounds from the same base policy and records the mass on
/// `y_minus` and `y_star` after each round.
pub fn demonstrate_never_sampled(fixture: &NeverSampledFixture, rounds: usize) -> Result<NeverSampledReport> {
    let env = fixture.environment()?;
    let universe = env.candidates();
    let offline = PreferenceDataset::new(fixture.offline.clone(), None, 0);
    offline.validate(universe)?;
    if let Some(i) = offline
        .pairs
        .iter()
        .position(|p| p.prompt_id == fixture.prompt && (p.winner_id == fixture.y_minus || p.loser_id == fixture.y_minus))
    {
        return Err(Error::SetupViolation(format!(
            "offline pair {i} contains the never-sampled candidate {}",
            fixture.y_minus
        )));
    }
    let anchor = TabularPolicy::from_logits(fixture.anchor_logits.clone(), -1)?;
    let base = TabularPolicy::from_logits(fixture.base_logits.clone(), 0)?;
    anchor.check_universe(universe)?;
    base.check_universe(universe)?;
    let mass = |p: &TabularPolicy, y: ResponseId| p.log_prob(fixture.prompt, y).map(f64::exp);
    let initial_mass = mass(&base, fixture.y_minus)?;

    let offline_config = RoundConfig {
        gamma: 1.0,
        alpha_mode: AlphaMode::Off,
        ..fixture.config.clone()
    };
    let arm = |config: &RoundConfig| -> Result<(Vec<TabularPolicy>, String)> {
        if rounds == 0 {
            return Ok((vec![base.clone()], base.content_hash()));
        }
        let out = run_experiment(&env, &offline, &anchor, Some(&base), config, rounds, 1, None)?;
        let init_hash = out.base.content_hash();
        let mut checkpoints = vec![out.base];
        checkpoints.extend(out.rounds.into_iter().map(|r| r.policy));
        Ok((checkpoints, init_hash))
    };
    let (off, off_hash) = arm(&offline_config)?;
    let (on, on_hash) = arm(&fixture.config)?;

    let trajectory = |ps: &[TabularPolicy], y| ps.iter().map(|p| mass(p, y)).collect::<Result<Vec<f64>>>();
    let offline_trajectory = trajectory(&off, fixture.y_minus)?;
    let on_policy_trajectory = trajectory(&on, fixture.y_minus)?;
    let offline_star = trajectory(&off, fixture.y_star)?;
    let on_policy_star = trajectory(&on, fixture.y_star)?;
    let bound_holds = offline_star
        .iter()
        .zip(&offline_trajectory)
        .chain(on_policy_star.iter().zip(&on_policy_trajectory))
        .all(|(s, m)| *s <= 1.0 - m);
    let final_off = *offline_trajectory.last().expect("at least the initial checkpoint");
    let final_on = *on_policy_trajectory.last().expect("at least the initial checkpoint");
    let retained_ratio = final_off / initial_mass;
    let shared_initialization = off_hash == on_hash && off_hash == base.content_hash();
    let pass = if rounds == 0 {
        bound_holds
    } else {
        retained_ratio >= fixture.retain_ratio && final_on < fixture.threshold && bound_holds && shared_initialization
    };
    Ok(NeverSampledReport {
        pass,
        initial_mass,
        leakage: initial_mass - final_off,
        retained_ratio,
        retain_ratio_required: fixture.retain_ratio,
        threshold: fixture.threshold,
        offline_trajectory,
        on_policy_trajectory,
        offline_star,
        on_policy_star,
        bound_holds,
        shared_initialization,
    })
}

/// Writes any report as `oracle_report.json` under `dir`.
pub fn write_report<T: Serialize>(dir: &Path, report: &T) -> Result<()> {
    io::write_json(&dir.join("oracle_report.json"), report)
}
