//! The `dice` command line.
//!
//! Every subcommand accepts `--config FILE` plus one flag per config key (see
//! [`crate::config::KEYS`]). Human-readable summaries go to stdout; data goes
//! to files; failures print one JSON error record to stderr and exit with
//! the error's code.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::alpha::{search_alpha, AlphaSearchResult};
use crate::builder::{build_generated_dataset, max_mix_size, mix_replay, DatasetMeta};
use crate::config::{load_table, Settings, Table};
use crate::env::{generate_environment, sample_offline_dataset, Environment};
use crate::error::{Error, Result};
use crate::io;
use crate::loss::{train, TrainParams};
use crate::model::{AlphaMode, PreferenceDataset, PreferencePair};
use crate::oracle::{
    breakpoint_scan, demonstrate_never_sampled, gradient_suite, round_trip_suite, write_report, NeverSampledFixture,
};
use crate::pipeline::{run_experiment, sample_and_score, Evaluator};
use crate::policy::{read_checkpoint, write_checkpoint, TabularPolicy};
use crate::reward::{group_by_prompt, score_all, score_external, ExternalResponse, ScoredResponse};
use crate::rng::derive_seed;

#[derive(Debug, Parser)]
#[command(name = "dice", version, about = "Iterative self-alignment with DPO implicit rewards")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate an environment, offline preference data and the initial reference.
    Init(InitArgs),
    /// Score responses with implicit rewards.
    Score(ScoreArgs),
    /// Search the length penalty alpha and emit the probe trace.
    Alpha(AlphaArgs),
    /// Build a best/worst-of-K preference dataset from scored responses.
    Build(BuildArgs),
    /// Mix generated and offline pairs.
    Mix(MixArgs),
    /// Train a policy on a preference dataset.
    Train(TrainArgs),
    /// Run the full loop for T rounds.
    Run(RunArgs),
    /// Evaluate a checkpoint against the hidden rewards.
    Eval(EvalArgs),
    /// Run an oracle check.
    Oracle(OracleArgs),
}

/// Config file and per-key overrides shared by every subcommand.
#[derive(Debug, Clone, Default, Args)]
pub struct Keys {
    /// Flat TOML config file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub prompts: Option<u64>,
    #[arg(long, global = true)]
    pub candidates: Option<u64>,
    #[arg(long, global = true)]
    pub min_length: Option<u64>,
    #[arg(long, global = true)]
    pub max_length: Option<u64>,
    #[arg(long, global = true)]
    pub verbosity_bias: Option<f64>,
    #[arg(long, global = true)]
    pub reference_scale: Option<f64>,
    #[arg(long, global = true)]
    pub annotator: Option<String>,
    #[arg(long, global = true)]
    pub num_bins: Option<u64>,
    #[arg(long, global = true)]
    pub offline_pairs: Option<u64>,
    #[arg(long, global = true)]
    pub beta: Option<f64>,
    #[arg(long, global = true)]
    pub gamma: Option<f64>,
    #[arg(long, global = true)]
    pub k_samples: Option<u64>,
    #[arg(long, global = true)]
    pub alpha_mode: Option<String>,
    #[arg(long, global = true)]
    pub alpha: Option<f64>,
    #[arg(long, global = true)]
    pub alpha_search_budget: Option<u64>,
    #[arg(long, global = true)]
    pub alpha_max: Option<f64>,
    #[arg(long, global = true)]
    pub loss: Option<String>,
    #[arg(long, global = true)]
    pub ipo_tau: Option<f64>,
    #[arg(long, global = true)]
    pub lambda: Option<f64>,
    #[arg(long, global = true)]
    pub steps: Option<u64>,
    #[arg(long, global = true)]
    pub base_steps: Option<u64>,
    #[arg(long, global = true)]
    pub learning_rate: Option<f64>,
    #[arg(long, global = true)]
    pub batch_size: Option<u64>,
    #[arg(long, global = true)]
    pub temperature: Option<f64>,
    #[arg(long, global = true)]
    pub mix_size: Option<u64>,
    #[arg(long, global = true)]
    pub replay: Option<String>,
    #[arg(long, global = true)]
    pub rotate_reference: Option<bool>,
    /// Number of rounds T.
    #[arg(short = 'T', long, global = true)]
    pub rounds: Option<u64>,
    #[arg(long, global = true)]
    pub parallel: Option<u64>,
}

impl Keys {
    /// The flags given on the command line as a config table.
    pub fn overrides(&self) -> Table {
        let mut t = Table::new();
        macro_rules! put {
            ($conv:expr => $($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    t.insert(stringify!($field).to_owned(), $conv(v.clone()));
                })*
            };
        }
        put!(|v: u64| toml::Value::Integer(v as i64) =>
            seed, prompts, candidates, min_length, max_length, num_bins, offline_pairs, k_samples,
            alpha_search_budget, steps, base_steps, batch_size, mix_size, rounds, parallel);
        put!(toml::Value::Float =>
            verbosity_bias, reference_scale, beta, gamma, alpha, alpha_max, ipo_tau, lambda,
            learning_rate, temperature);
        put!(toml::Value::String => annotator, alpha_mode, loss, replay);
        put!(toml::Value::Boolean => rotate_reference);
        t
    }

    pub fn settings(&self) -> Result<Settings> {
        let file = self.config.as_deref().map(load_table).transpose()?;
        Settings::layered(file.as_ref(), &self.overrides())
    }
}

#[derive(Debug, Args)]
pub struct InitArgs {
    /// Output directory for env.jsonl, offline.jsonl and reference.jsonl.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    #[command(flatten)]
    pub keys: Keys,
}

#[derive(Debug, Args)]
pub struct ScoreArgs {
    #[arg(long, default_value = "env.jsonl")]
    pub env: PathBuf,
    /// Policy checkpoint to sample from and score.
    #[arg(long)]
    pub policy: Option<PathBuf>,
    /// Reference checkpoint; defaults to the environment's initial reference.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Externally computed log-probabilities; bypasses --env and --policy.
    #[arg(long)]
    pub responses: Option<PathBuf>,
    /// Score every candidate once instead of sampling K per prompt.
    #[arg(long)]
    pub all: bool,
    #[arg(long, default_value = "scored.jsonl")]
    pub out: PathBuf,
    #[command(flatten)]
    pub keys: Keys,
}

#[derive(Debug, Args)]
pub struct AlphaArgs {
    #[arg(long, default_value = "scored.jsonl")]
    pub scored: PathBuf,
    /// Alias for --alpha-search-budget.
    #[arg(long)]
    pub budget: Option<u64>,
    /// Round index mixed into the search seed.
    #[arg(long, default_value_t = 1)]
    pub round: i64,
    #[arg(long, default_value = "alpha.json")]
    pub out: PathBuf,
    /// Probe trace CSV; defaults to `alpha_trace.csv` next to --out.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    #[command(flatten)]
    pub keys: Keys,
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[arg(long, default_value = "scored.jsonl")]
    pub scored: PathBuf,
    /// Take alpha from a previous `dice alpha` result.
    #[arg(long)]
    pub alpha_file: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub round: i64,
    #[arg(long, default_value = "dataset.jsonl")]
    pub out: PathBuf,
    #[command(flatten)]
    pub keys: Keys,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long, default_value = "dataset.jsonl")]
    pub generated: PathBuf,
    #[arg(long, default_value = "offline.jsonl")]
    pub offline: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub round: i64,
    #[arg(long, default_value = "mixed.jsonl")]
    pub out: PathBuf,
    #[command(flatten)]
    pub keys: Keys,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value = "env.jsonl")]
    pub env: PathBuf,
    /// Initial policy; also the reference unless --reference is given.
    #[arg(long)]
    pub init: PathBuf,
    #[arg(long)]
    pub reference: Option<PathBuf>,
    #[arg(long, default_value = "mixed.jsonl")]
    pub dataset: PathBuf,
    #[arg(long, default_value = "policy.jsonl")]
    pub out: PathBuf,
    #[arg(long, default_value = "loss_trace.csv")]
    pub trace: PathBuf,
    #[command(flatten)]
    pub keys: Keys,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[arg(long, default_value = "env.jsonl")]
    pub env: PathBuf,
    #[arg(long, default_value = "offline.jsonl")]
    pub offline: PathBuf,
    /// Initial reference; defaults to the one implied by the environment.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Base policy; by default it is trained from the reference on the
    /// offline data.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[command(flatten)]
    pub keys: Keys,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long, default_value = "env.jsonl")]
    pub env: PathBuf,
    #[arg(long)]
    pub policy: PathBuf,
    /// Initial reference, used for the optimal policy.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Policy to compute the win rate against; defaults to the reference.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub keys: Keys,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum OracleCheck {
    /// Closed-form optimum and implicit-reward recovery on random instances.
    RoundTrip,
    /// Finite-difference gradients of every loss.
    GradCheck,
    /// Exact alpha landscape of a scored file against random search.
    Breakpoint,
    /// Offline-only versus on-policy training on the never-sampled fixture.
    NeverSampled,
}

#[derive(Debug, Args)]
pub struct OracleArgs {
    pub check: OracleCheck,
    /// Directory receiving oracle_report.json.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Random instances (round-trip, grad-check).
    #[arg(long, default_value_t = 100)]
    pub instances: usize,
    #[arg(long, default_value_t = 1e-5)]
    pub h: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub tolerance: f64,
    /// Scored responses for the breakpoint check.
    #[arg(long, default_value = "scored.jsonl")]
    pub scored: PathBuf,
    /// Fixture for never-sampled; the bundled one by default.
    #[arg(long)]
    pub fixture: Option<PathBuf>,
    #[command(flatten)]
    pub keys: Keys,
}

/// Parses arguments, runs, and maps the outcome to a process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            let mut stderr = std::io::stderr().lock();
            let _ = writeln!(stderr, "{}", e.record());
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Init(a) => init(a),
        Command::Score(a) => score(a),
        Command::Alpha(a) => alpha(a),
        Command::Build(a) => build(a),
        Command::Mix(a) => mix(a),
        Command::Train(a) => train_cmd(a),
        Command::Run(a) => run_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Oracle(a) => oracle(a),
    }
}

fn init(a: InitArgs) -> Result<()> {
    let s = a.keys.settings()?;
    let env = generate_environment(&s.env)?;
    let offline = sample_offline_dataset(&env, s.annotator_kind(), s.offline_pairs, s.env.seed)?;
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    env.write(&a.out.join("env.jsonl"))?;
    io::write_jsonl(&a.out.join("offline.jsonl"), &offline.pairs)?;
    write_checkpoint(&a.out.join("reference.jsonl"), &env.initial_reference(), &s.round.config_hash())?;
    let diff = offline.mean_length_diff(env.candidates())?.unwrap_or(0.0);
    println!(
        "environment: {} prompts x {} candidates, seed {}",
        env.num_prompts(),
        s.env.candidates_per_prompt,
        s.env.seed
    );
    println!("offline: {} pairs, mean |y_w| - |y_l| = {diff:.3}", offline.len());
    Ok(())
}

fn reference_or_default(env: &Environment, path: Option<&Path>) -> Result<TabularPolicy> {
    match path {
        Some(p) => {
            let (policy, _) = read_checkpoint(p)?;
            policy.check_universe(env.candidates())?;
            Ok(policy)
        }
        None => Ok(env.initial_reference()),
    }
}

fn shaping_alpha(mode: AlphaMode) -> f64 {
    match mode {
        AlphaMode::Fixed(a) => a,
        _ => 0.0,
    }
}

fn score(a: ScoreArgs) -> Result<()> {
    let s = a.keys.settings()?;
    let alpha = shaping_alpha(s.round.alpha_mode);
    let scored: Vec<ScoredResponse> = if let Some(path) = &a.responses {
        let records: Vec<ExternalResponse> = io::read_jsonl(path)?;
        score_external(&records, s.round.beta, alpha)?
    } else {
        let env = Environment::read(&a.env)?;
        let policy_path = a
            .policy
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("score needs --policy or --responses".into()))?;
        let (policy, _) = read_checkpoint(policy_path)?;
        policy.check_universe(env.candidates())?;
        let reference = reference_or_default(&env, a.reference.as_deref())?;
        let mut rows = if a.all {
            score_all(&policy, &reference, env.candidates(), s.round.beta, 0.0)?
        } else {
            let seed = derive_seed(s.round.seed, &[(policy.round + 1) as u64]);
            let sampler = policy.temperature_scale(s.round.temperature)?;
            sample_and_score(
                &sampler,
                &policy,
                &reference,
                env.candidates(),
                s.round.k_samples,
                s.round.beta,
                seed,
                s.parallel,
            )?
            .concat()
        };
        rows = rows.iter().map(|r| r.with_alpha(alpha)).collect();
        rows
    };
    io::write_jsonl(&a.out, &scored)?;
    println!("scored {} responses -> {}", scored.len(), a.out.display());
    Ok(())
}

fn read_groups(path: &Path) -> Result<Vec<Vec<ScoredResponse>>> {
    let rows: Vec<ScoredResponse> = io::read_jsonl(path)?;
    if rows.is_empty() {
        return Err(Error::Empty);
    }
    Ok(group_by_prompt(&rows))
}

fn alpha(a: AlphaArgs) -> Result<()> {
    let mut s = a.keys.settings()?;
    if let Some(b) = a.budget {
        s.round.alpha_search_budget = b as usize;
        s.validate()?;
    }
    let groups = read_groups(&a.scored)?;
    let seed = derive_seed(s.round.seed, &[a.round as u64]);
    let result = search_alpha(&groups, s.round.alpha_search_budget, s.round.alpha_max, seed)?;
    io::write_json(&a.out, &result)?;
    let trace = a
        .trace
        .unwrap_or_else(|| a.out.with_file_name("alpha_trace.csv"));
    io::write_csv(&trace, &["alpha", "objective", "signed_mean"], result.trace_rows())?;
    println!(
        "alpha* = {} (objective {}, range [0, {}], {} probes)",
        result.alpha_star,
        result.objective_value,
        result.alpha_max,
        result.evaluations.len()
    );
    Ok(())
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("meta.json")
}

fn build(a: BuildArgs) -> Result<()> {
    let s = a.keys.settings()?;
    let groups = read_groups(&a.scored)?;
    let alpha = match (&a.alpha_file, s.round.alpha_mode) {
        (Some(path), _) => io::read_json::<AlphaSearchResult>(path)?.alpha_star,
        (None, AlphaMode::Fixed(v)) => v,
        (None, AlphaMode::Off) => 0.0,
        (None, AlphaMode::Auto) => {
            let seed = derive_seed(s.round.seed, &[a.round as u64]);
            search_alpha(&groups, s.round.alpha_search_budget, s.round.alpha_max, seed)?.alpha_star
        }
    };
    let built = build_generated_dataset(&groups, alpha, a.round);
    io::write_jsonl(&a.out, &built.dataset.pairs)?;
    io::write_json(
        &sidecar(&a.out),
        &DatasetMeta::describe(&built.dataset, None, built.skipped, s.round.seed),
    )?;
    println!(
        "built {} pairs with alpha = {alpha} ({} prompts skipped) -> {}",
        built.dataset.len(),
        built.skipped,
        a.out.display()
    );
    Ok(())
}

fn mix(a: MixArgs) -> Result<()> {
    let s = a.keys.settings()?;
    let generated = PreferenceDataset::new(io::read_jsonl::<PreferencePair>(&a.generated)?, None, a.round);
    let offline = PreferenceDataset::new(io::read_jsonl::<PreferencePair>(&a.offline)?, None, 0);
    let gamma = s.round.gamma;
    let n = s
        .round
        .mix_size
        .unwrap_or_else(|| max_mix_size(gamma, generated.len(), offline.len()));
    let seed = derive_seed(s.round.seed, &[a.round as u64]);
    let mixed = mix_replay(&generated, &offline, gamma, n, seed, s.round.replay)?;
    io::write_jsonl(&a.out, &mixed.pairs)?;
    let meta = DatasetMeta::describe(&mixed, Some(gamma), 0, s.round.seed);
    io::write_json(&sidecar(&a.out), &meta)?;
    println!(
        "mixed {} pairs: {} generated + {} offline -> {}",
        mixed.len(),
        meta.generated_count,
        meta.offline_count,
        a.out.display()
    );
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let s = a.keys.settings()?;
    let env = Environment::read(&a.env)?;
    let (init, _) = read_checkpoint(&a.init)?;
    let reference = match &a.reference {
        Some(p) => read_checkpoint(p)?.0,
        None => init.clone(),
    };
    let dataset = PreferenceDataset::new(io::read_jsonl::<PreferencePair>(&a.dataset)?, None, init.round + 1);
    let params = TrainParams {
        steps: s.round.steps,
        learning_rate: s.round.learning_rate,
        batch_size: s.round.batch_size,
        seed: derive_seed(s.round.seed, &[(init.round + 1) as u64]),
    };
    let out = train(&init, &reference, &dataset, env.candidates(), s.round.loss_kind, s.round.beta, &params)?;
    let mut policy = out.policy.clone();
    policy.round = init.round + 1;
    write_checkpoint(&a.out, &policy, &s.round.config_hash())?;
    io::write_csv(&a.trace, &["step", "mean_loss", "grad_norm"], out.trace_rows())?;
    println!(
        "{} loss {:.6} -> {:.6} over {} steps -> {}",
        s.round.loss_kind.name(),
        out.initial_loss(),
        out.final_loss(),
        s.round.steps,
        a.out.display()
    );
    Ok(())
}

fn run_cmd(a: RunArgs) -> Result<()> {
    let s = a.keys.settings()?;
    let env = Environment::read(&a.env)?;
    let offline = PreferenceDataset::new(io::read_jsonl::<PreferencePair>(&a.offline)?, None, 0);
    let anchor = reference_or_default(&env, a.reference.as_deref())?;
    let base = a.base.as_deref().map(read_checkpoint).transpose()?.map(|(p, _)| p);
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    let out = run_experiment(
        &env,
        &offline,
        &anchor,
        base.as_ref(),
        &s.round,
        s.rounds,
        s.parallel,
        Some(&a.out),
    )?;
    for m in out.metrics() {
        println!(
            "round {}: E[r*] = {:.4}, win rate = {:.4}, KL* = {:.4}, E|y| = {:.2}, alpha* = {}",
            m.round,
            m.expected_true_reward,
            m.true_win_rate,
            m.kl_to_optimal,
            m.expected_length,
            m.alpha_star.map_or("-".to_owned(), |v| format!("{v:.4}"))
        );
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    round: i64,
    expected_true_reward: f64,
    true_win_rate: f64,
    kl_to_optimal: f64,
    expected_length: f64,
}

fn eval(a: EvalArgs) -> Result<()> {
    let s = a.keys.settings()?;
    let env = Environment::read(&a.env)?;
    let (policy, _) = read_checkpoint(&a.policy)?;
    policy.check_universe(env.candidates())?;
    let anchor = reference_or_default(&env, a.reference.as_deref())?;
    let base = match &a.base {
        Some(p) => read_checkpoint(p)?.0,
        None => anchor.clone(),
    };
    base.check_universe(env.candidates())?;
    let ev = Evaluator::new(&env, &anchor, &base, s.round.beta)?;
    let report = EvalReport {
        round: policy.round,
        expected_true_reward: ev.expected_true_reward(&policy),
        true_win_rate: ev.win_rate(&policy),
        kl_to_optimal: ev.kl_to_optimal(&policy),
        expected_length: ev.expected_length(&policy),
    };
    if let Some(out) = &a.out {
        io::write_json(out, &report)?;
    }
    println!(
        "round {}: E[r*] = {:.4}, win rate = {:.4}, KL* = {:.4}, E|y| = {:.2}",
        report.round, report.expected_true_reward, report.true_win_rate, report.kl_to_optimal, report.expected_length
    );
    Ok(())
}

fn finish(pass: bool, name: &str, summary: String) -> Result<()> {
    println!("{name}: {} ({summary})", if pass { "PASS" } else { "FAIL" });
    if pass {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!("{name}: {summary}")))
    }
}

fn oracle(a: OracleArgs) -> Result<()> {
    let s = a.keys.settings()?;
    std::fs::create_dir_all(&a.out).map_err(|source| Error::Io {
        path: a.out.clone(),
        source,
    })?;
    match a.check {
        OracleCheck::RoundTrip => {
            let r = round_trip_suite(a.instances, s.round.beta)?;
            write_report(&a.out, &r)?;
            finish(r.pass, "round-trip", format!("max spread {:e} over {} seeds", r.max_spread, r.seeds))
        }
        OracleCheck::GradCheck => {
            let r = gradient_suite(a.instances, a.h, a.tolerance)?;
            write_report(&a.out, &r)?;
            let worst = r.entries.iter().map(|e| e.max_relative_error).fold(0.0, f64::max);
            finish(r.pass, "grad-check", format!("max relative error {worst:e}"))
        }
        OracleCheck::Breakpoint => {
            let groups = read_groups(&a.scored)?;
            let landscape = breakpoint_scan(&groups)?;
            let search = search_alpha(
                &groups,
                s.round.alpha_search_budget,
                s.round.alpha_max,
                derive_seed(s.round.seed, &[1]),
            )?;
            let pass = landscape.is_global_min(search.alpha_star);
            #[derive(Serialize)]
            struct Report<'a> {
                pass: bool,
                alpha_star: f64,
                search_objective: f64,
                landscape: &'a crate::oracle::AlphaLandscape,
            }
            write_report(
                &a.out,
                &Report {
                    pass,
                    alpha_star: search.alpha_star,
                    search_objective: search.objective_value,
                    landscape: &landscape,
                },
            )?;
            finish(
                pass,
                "breakpoint",
                format!(
                    "alpha* {} objective {} vs global min {} over {} cells",
                    search.alpha_star,
                    search.objective_value,
                    landscape.global_min,
                    landscape.cells.len()
                ),
            )
        }
        OracleCheck::NeverSampled => {
            let fixture = match &a.fixture {
                Some(p) => NeverSampledFixture::read(p)?,
                None => NeverSampledFixture::designed(),
            };
            let rounds = a.keys.rounds.map_or(fixture.rounds, |r| r as usize);
            let r = demonstrate_never_sampled(&fixture, rounds)?;
            write_report(&a.out, &r)?;
            finish(
                r.pass,
                "never-sampled",
                format!(
                    "offline keeps {:.4} of {:.4} (ratio {:.4}), on-policy ends at {:.4}",
                    r.offline_trajectory.last().copied().unwrap_or(f64::NAN),
                    r.initial_mass,
                    r.retained_ratio,
                    r.on_policy_trajectory.last().copied().unwrap_or(f64::NAN)
                ),
            )
        }
    }
}
