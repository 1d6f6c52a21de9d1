//! Builds best/worst-of-K pairs with and without the length penalty and mixes
//! them with offline data at several replay ratios.

use dice::builder::{build_generated_dataset, max_mix_size, mix_replay};
use dice::config::Settings;
use dice::env::{generate_environment, sample_offline_dataset};
use dice::pipeline::{sample_and_score, train_base_policy};
use dice::{ReplayMode, Result, Source};

pub fn run_example() -> Result<Vec<(f64, usize, usize)>> {
    let s = Settings::default();
    let env = generate_environment(&s.env)?;
    let offline = sample_offline_dataset(&env, s.annotator_kind(), s.offline_pairs, s.env.seed)?;
    let anchor = env.initial_reference();
    let base = train_base_policy(&env, &anchor, &offline, &s.round)?.policy;
    let groups = sample_and_score(&base, &base, &anchor, env.candidates(), s.round.k_samples, s.round.beta, 1, 1)?;

    for alpha in [0.0, 0.0012] {
        let built = build_generated_dataset(&groups, alpha, 1);
        println!(
            "alpha {alpha}: {} pairs, {} skipped, mean |y_w| - |y_l| = {:+.2}",
            built.dataset.len(),
            built.skipped,
            built.dataset.mean_length_diff(env.candidates())?.unwrap_or(0.0)
        );
    }

    let generated = build_generated_dataset(&groups, 0.0012, 1).dataset;
    let mut rows = Vec::new();
    for gamma in [0.0, 0.25, 0.5, 1.0] {
        let n = max_mix_size(gamma, generated.len(), offline.len());
        let mixed = mix_replay(&generated, &offline, gamma, n, 1, ReplayMode::Stratified)?;
        let off = mixed.count_source(Source::Offline);
        println!("gamma {gamma:>4}: {n} pairs, {off} offline");
        rows.push((gamma, n, off));
    }
    Ok(rows)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
