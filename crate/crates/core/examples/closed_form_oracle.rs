//! The exact oracles: the closed-form KL-regularised optimum, recovery of
//! the reward from its implicit reward, and finite-difference gradients.

use dice::oracle::{
    closed_form_optimal_policy, gradient_suite, random_reward_instance, verify_implicit_reward_consistency,
};
use dice::policy::TabularPolicy;
use dice::{PromptId, Result};

pub fn run_example() -> Result<bool> {
    let reference = TabularPolicy::uniform(&[2], -1);
    let star = closed_form_optimal_policy(&reference, &[vec![3f64.ln(), 0.0]], 1.0)?;
    println!("uniform reference, r = (ln 3, 0), beta = 1 -> pi* = {:?}", star.probs(PromptId(0))?);

    let (reference, rewards) = random_reward_instance(7);
    let beta = 0.1;
    let star = closed_form_optimal_policy(&reference, &rewards, beta)?;
    let report = verify_implicit_reward_consistency(&star, &reference, &rewards, beta)?;
    println!("implicit reward minus true reward varies by at most {:.2e} within a prompt", report.max_spread);

    let grads = gradient_suite(20, 1e-5, 1e-6)?;
    for e in &grads.entries {
        println!("{:<21} max relative error {:.2e}", e.loss, e.max_relative_error);
    }
    Ok(report.pass && grads.pass)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
