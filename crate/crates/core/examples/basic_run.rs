//! One adaptive run on the default toy model, scored against full recompute.
//!
//!     cargo run --release --example basic_run -- [gamma]

use offsetlab::acm::{ExecutionMode, PolicyConfig};
use offsetlab::engine::{compare_runs, run_inference, run_reference, RunConfig};
use offsetlab::metrics::cost_summary;

fn main() -> offsetlab::Result<()> {
    let gamma: f64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(1.0);
    let config = RunConfig::default().with_policy(PolicyConfig::adaptive(gamma, ExecutionMode::Economic));

    let run = run_inference(&config)?;
    let reference = run_reference(&config)?;
    let report = compare_runs(&run, &reference)?;
    let cost = cost_summary(&run);

    println!("gamma {gamma}, {} layers x {} steps", run.layers(), run.steps());
    println!(
        "block evals {} / {} ({:.1}%)",
        cost.total_block_evals,
        cost.max_possible,
        100.0 * cost.eval_fraction
    );
    if let Some(hr) = cost.hit_rate {
        println!("hit rate {hr:.3}, skip rate {:.3}", cost.skip_rate.unwrap_or(0.0));
    }
    let f = report.final_image;
    println!(
        "final image: mse {:.3e}, psnr {:.2} dB, ssim {:?}",
        f.mse, f.psnr, f.ssim
    );
    Ok(())
}
