//! Scores every candidate of a trained policy against its reference and shows
//! how the length penalty reorders them.

use dice::config::Settings;
use dice::env::{generate_environment, sample_offline_dataset};
use dice::pipeline::train_base_policy;
use dice::reward::{score_all, shaped_reward};
use dice::{PromptId, Result};

pub fn run_example() -> Result<f64> {
    let s = Settings::default();
    let env = generate_environment(&s.env)?;
    let offline = sample_offline_dataset(&env, s.annotator_kind(), s.offline_pairs, s.env.seed)?;
    let reference = env.initial_reference();
    let policy = train_base_policy(&env, &reference, &offline, &s.round)?.policy;

    let scored = score_all(&policy, &reference, env.candidates(), s.round.beta, 0.0)?;
    let alpha = 0.002;
    println!("prompt 0, beta = {}:", s.round.beta);
    let mut corr = (0.0, 0.0, 0.0);
    for row in scored.iter().filter(|r| r.prompt_id == PromptId(0)) {
        let truth = env.candidates().get(row.prompt_id, row.response_id)?.true_reward;
        println!(
            "  y{}: implicit {:+.4}, shaped {:+.4}, r* {:+.3}, length {}",
            row.response_id.0,
            row.implicit_reward,
            shaped_reward(row.implicit_reward, row.length, alpha),
            truth,
            row.length
        );
    }
    for row in &scored {
        let truth = env.candidates().get(row.prompt_id, row.response_id)?.true_reward;
        corr.0 += row.implicit_reward * truth;
        corr.1 += row.implicit_reward * row.implicit_reward;
        corr.2 += truth * truth;
    }
    let cosine = corr.0 / (corr.1.sqrt() * corr.2.sqrt());
    println!("cosine(implicit, true) over all candidates: {cosine:.3}");
    Ok(cosine)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
