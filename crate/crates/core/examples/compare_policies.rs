//! Every cache policy against one shared reference.
//!
//!     cargo run --release --example compare_policies

use offsetlab::acm::{ExecutionMode, PolicyConfig, PolicyKind};
use offsetlab::cli::{compare, policy_label};
use offsetlab::engine::RunConfig;

fn main() -> Result<(), offsetlab::cli::CliError> {
    let config = RunConfig {
        record_states: false,
        ..RunConfig::default()
    };

    let mut binary = PolicyConfig::new(PolicyKind::BinaryThreshold);
    binary.binary_threshold = 1.0;
    let policies = vec![
        PolicyConfig::new(PolicyKind::FullRecompute),
        PolicyConfig::new(PolicyKind::PureReuse),
        PolicyConfig::static_interval(2),
        PolicyConfig::static_interval(4),
        binary,
        PolicyConfig::adaptive(1.0, ExecutionMode::Faithful),
        PolicyConfig::adaptive(1.0, ExecutionMode::Economic),
    ];

    let rows = compare(&config, &policies)?;
    println!(
        "{:<34} {:>11} {:>8} {:>8} {:>8}",
        "policy", "mse", "psnr", "evals", "hit"
    );
    for (p, r) in policies.iter().zip(&rows) {
        println!(
            "{:<34} {:>11.3e} {:>8.2} {:>8.3} {:>8}",
            policy_label(p),
            r.mse_vs_ref,
            r.psnr,
            r.eval_fraction,
            r.hit_rate.map(|h| format!("{h:.3}")).unwrap_or_else(|| "-".into())
        );
    }
    Ok(())
}
