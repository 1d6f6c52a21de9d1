//! Generates the default environment, labels offline pairs with each
//! annotator, and shows how much the biased annotator favours length.

use dice::env::{bt_preference_prob, generate_environment, sample_offline_dataset, AnnotatorKind, EnvConfig};
use dice::{PromptId, ResponseId, Result};

pub fn run_example() -> Result<Vec<(String, f64)>> {
    let env = generate_environment(&EnvConfig::default())?;
    println!("{} prompts, shape of prompt 0: {} candidates", env.num_prompts(), env.shape()[0]);
    for c in env.candidates().candidates(PromptId(0)) {
        println!("  y{}: r* = {:+.3}, length {}", c.response_id.0, c.true_reward, c.length);
    }

    let p = bt_preference_prob(&env, PromptId(0), ResponseId(0), ResponseId(1), AnnotatorKind::ExactBt)?;
    println!("P(y0 > y1) under exact labels: {p:.3}");

    let mut diffs = Vec::new();
    for (name, kind) in [
        ("exact", AnnotatorKind::ExactBt),
        ("biased", AnnotatorKind::BiasedBt { bias: 0.1 }),
        ("coarse", AnnotatorKind::CoarseJudge { num_bins: 5 }),
    ] {
        let data = sample_offline_dataset(&env, kind, 600, 0)?;
        let d = data.mean_length_diff(env.candidates())?.unwrap_or(0.0);
        println!("{name:>6}: mean |y_w| - |y_l| = {d:+.2} over {} pairs", data.len());
        diffs.push((name.to_owned(), d));
    }
    Ok(diffs)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
