//! Grid over the sensitivity gamma and the spatial weight in Economic mode.
//!
//!     cargo run --release --example sensitivity_sweep

use offsetlab::acm::{ExecutionMode, PolicyConfig};
use offsetlab::cli::sweep;
use offsetlab::engine::RunConfig;

fn main() -> Result<(), offsetlab::cli::CliError> {
    let mut config = RunConfig::default().with_policy(PolicyConfig::adaptive(1.0, ExecutionMode::Economic));
    config.record_states = false;

    let gammas = [0.0, 0.25, 0.5, 1.0, 2.0, 4.0];
    let lambdas = [0.0, 1.0];
    let rows = sweep(&config, &gammas, &lambdas)?;
    println!(
        "{:>6} {:>6} {:>11} {:>8} {:>8}",
        "gamma", "lam_s", "mse", "evals", "hit"
    );
    for r in rows {
        println!(
            "{:>6} {:>6} {:>11.3e} {:>8.3} {:>8.3}",
            r.gamma,
            r.lambda_spatial,
            r.mse_vs_ref,
            r.eval_fraction,
            r.hit_rate.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
