//! Offline-only training cannot remove mass from a suboptimal response that
//! never appears in its data; on-policy rounds sample it and push it down.

use dice::oracle::{demonstrate_never_sampled, NeverSampledFixture};
use dice::Result;

pub fn run_example() -> Result<bool> {
    let fixture = NeverSampledFixture::designed();
    let report = demonstrate_never_sampled(&fixture, fixture.rounds)?;
    println!("pi(y-) by checkpoint");
    println!("  offline only: {:?}", report.offline_trajectory);
    println!("  on-policy:    {:?}", report.on_policy_trajectory);
    println!("pi(y*) by checkpoint");
    println!("  offline only: {:?}", report.offline_star);
    println!("  on-policy:    {:?}", report.on_policy_star);
    println!(
        "retained {:.3} of the initial mass (leakage {:.2e}); pi(y*) <= 1 - pi(y-) everywhere: {}",
        report.retained_ratio, report.leakage, report.bound_holds
    );
    Ok(report.pass)
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example().map(|_| ())
}
