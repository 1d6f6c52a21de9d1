//! Searches the length penalty on round-1 samples of the biased default
//! environment and compares the result with the exact breakpoint landscape.

use dice::alpha::{length_diff_objective, search_alpha};
use dice::config::Settings;
use dice::env::{generate_environment, sample_offline_dataset};
use dice::oracle::breakpoint_scan;
use dice::pipeline::{sample_and_score, train_base_policy};
use dice::rng::derive_seed;
use dice::Result;

pub fn run_example() -> Result<(f64, f64)> {
    let s = Settings::default();
    let env = generate_environment(&s.env)?;
    let offline = sample_offline_dataset(&env, s.annotator_kind(), s.offline_pairs, s.env.seed)?;
    let anchor = env.initial_reference();
    let base = train_base_policy(&env, &anchor, &offline, &s.round)?.policy;
    // Same seed the loop uses for round 1.
    let seed = derive_seed(s.round.seed, &[1]);
    let groups = sample_and_score(&base, &base, &anchor, env.candidates(), s.round.k_samples, s.round.beta, seed, 1)?;

    let at_zero = length_diff_objective(&groups, 0.0)?;
    let found = search_alpha(&groups, s.round.alpha_search_budget, None, seed)?;
    let scan = breakpoint_scan(&groups)?;
    println!("alpha = 0: |mean length diff| = {:.3}", at_zero.value);
    println!(
        "random search ({} probes on [0, {:.4}]): alpha* = {:.6}, objective {:.3}",
        found.evaluations.len(),
        found.alpha_max,
        found.alpha_star,
        found.objective_value
    );
    println!(
        "breakpoint scan: {} cells, global minimum {:.3}; alpha* in a minimal cell: {}",
        scan.cells.len(),
        scan.global_min,
        scan.is_global_min(found.alpha_star)
    );
    Ok((at_zero.value, found.objective_value))
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
