//! Hidden-state deviation from the reference under a contractive model.
//!
//! Weights are scaled down so each step shrinks perturbations, and a
//! periodic full refresh bounds cache age. The deviation should decay
//! toward zero as sampling proceeds.
//!
//!     cargo run --release --example convergence -- [steps]

use offsetlab::acm::{ExecutionMode, PolicyConfig};
use offsetlab::engine::{compare_runs, run_inference, run_reference, RunConfig};

fn main() -> offsetlab::Result<()> {
    let steps: usize = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(2000);
    let mut config = RunConfig {
        weight_scale: 0.5,
        step_size: 0.02,
        policy: PolicyConfig::adaptive(1.0, ExecutionMode::Faithful),
        ..RunConfig::default()
    };
    config.model.max_timesteps = steps;
    config.policy.refresh_interval = Some(8);

    let run = run_inference(&config)?;
    let reference = run_reference(&config)?;
    let report = compare_runs(&run, &reference)?;
    let dev = report.hidden_deviation.as_ref().expect("states are recorded");

    for i in (0..steps).step_by((steps / 10).max(1)) {
        let worst = dev[i].iter().cloned().fold(0.0, f64::max);
        println!("step index {i:>5}: max layer deviation {worst:.3e}");
    }
    println!(
        "last 10% of steps: max deviation {:.3e}",
        report.tail_hidden_deviation(0.1).unwrap_or(f64::NAN)
    );
    Ok(())
}
