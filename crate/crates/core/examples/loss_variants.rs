//! Trains the base policy on the same round-1 dataset with every supported
//! loss and reports the expected true reward of each result.

use dice::config::Settings;
use dice::env::{generate_environment, sample_offline_dataset};
use dice::pipeline::{run_experiment, train_base_policy};
use dice::{LossKind, Result, RoundConfig};

pub fn run_example() -> Result<Vec<(String, f64)>> {
    let s = Settings::default();
    let env = generate_environment(&s.env)?;
    let offline = sample_offline_dataset(&env, s.annotator_kind(), s.offline_pairs, s.env.seed)?;
    let anchor = env.initial_reference();
    let base = train_base_policy(&env, &anchor, &offline, &s.round)?.policy;

    let mut out = Vec::new();
    for loss_kind in [
        LossKind::Dpo,
        LossKind::Ipo { tau: None },
        LossKind::Hinge,
        LossKind::DpoLengthPenalized { lambda: 0.02 },
    ] {
        let config = RoundConfig {
            loss_kind,
            ..s.round.clone()
        };
        let run = run_experiment(&env, &offline, &anchor, Some(&base), &config, 1, 1, None)?;
        let m = run.metrics();
        println!(
            "{:<21} E[r*] {:.4} -> {:.4}, loss {:.4} -> {:.4}",
            loss_kind.name(),
            m[0].expected_true_reward,
            m[1].expected_true_reward,
            m[1].loss_initial,
            m[1].loss_final
        );
        out.push((loss_kind.name().to_owned(), m[1].expected_true_reward - m[0].expected_true_reward));
    }
    Ok(out)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
