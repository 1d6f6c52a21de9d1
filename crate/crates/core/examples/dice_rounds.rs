//! Two rounds of the loop with and without length regularisation, next to
//! the offline-only baseline, writing the first run's files to a temp
//! directory.

use dice::config::Settings;
use dice::env::{generate_environment, sample_offline_dataset};
use dice::pipeline::run_experiment;
use dice::{AlphaMode, Result, RoundConfig};

pub fn run_example() -> Result<Vec<f64>> {
    let s = Settings::default();
    let env = generate_environment(&s.env)?;
    let offline = sample_offline_dataset(&env, s.annotator_kind(), s.offline_pairs, s.env.seed)?;
    let anchor = env.initial_reference();

    let dir = std::env::temp_dir().join(format!("dice-rounds-{}", std::process::id()));
    let auto = run_experiment(&env, &offline, &anchor, None, &s.round, 2, 1, Some(&dir))?;
    let variants = [
        ("alpha off", RoundConfig { alpha_mode: AlphaMode::Off, ..s.round.clone() }),
        ("offline only", RoundConfig { gamma: 1.0, alpha_mode: AlphaMode::Off, ..s.round.clone() }),
    ];
    let mut finals = vec![auto.metrics()[2].true_win_rate];
    println!("{:<13} {:>8} {:>8} {:>8}", "", "round 0", "round 1", "round 2");
    let show = |name: &str, run: &dice::pipeline::ExperimentOutcome| {
        let m = run.metrics();
        println!(
            "{name:<13} {}\n{:<13} {}",
            m.iter().map(|x| format!("{:>8.4}", x.true_win_rate)).collect::<String>(),
            "  length",
            m.iter().map(|x| format!("{:>8.2}", x.expected_length)).collect::<String>()
        );
    };
    show("alpha auto", &auto);
    for (name, config) in variants {
        let run = run_experiment(&env, &offline, &anchor, Some(&auto.base), &config, 2, 1, None)?;
        show(name, &run);
        finals.push(run.metrics()[2].true_win_rate);
    }
    println!("files of the first run: {}", dir.display());
    let _ = std::fs::remove_dir_all(&dir);
    Ok(finals)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
