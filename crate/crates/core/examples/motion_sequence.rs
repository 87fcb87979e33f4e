//! Cache reuse across frames of a moving synthetic scene.
//!
//! The cache for each timestep is carried from one frame to the next. A
//! static refresh schedule is compared with the adaptive policy after
//! tuning the skip threshold until both spend about the same number of
//! block evaluations.
//!
//!     cargo run --release --example motion_sequence

use offsetlab::acm::{ExecutionMode, PolicyConfig};
use offsetlab::cli::evaluate;
use offsetlab::engine::{run_sequence, RunConfig, SceneConfig};

fn main() -> offsetlab::Result<()> {
    let config = RunConfig {
        record_states: false,
        scene: Some(SceneConfig::default()),
        ..RunConfig::default()
    };
    let spec = config.scene.clone().unwrap().to_spec(&config.model)?;
    let reference = run_sequence(&config.reference(), &spec)?;

    let fixed = evaluate(&config.with_policy(PolicyConfig::static_interval(2)), &reference)?;
    let budget = fixed.cost.total_block_evals;
    println!("static N=2: mse {:.4e}, {} evals", fixed.mse(), budget);

    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..30 {
        let eps = 0.5 * (lo + hi);
        let mut p = PolicyConfig::adaptive(1.0, ExecutionMode::Economic);
        p.skip_threshold = eps;
        let e = evaluate(&config.with_policy(p), &reference)?;
        let evals = e.cost.total_block_evals;
        println!("  skip threshold {eps:.6}: mse {:.4e}, {evals} evals", e.mse());
        if (evals as f64 - budget as f64).abs() <= 0.05 * budget as f64 {
            let verdict = if e.mse() <= fixed.mse() {
                "matches or beats"
            } else {
                "trails"
            };
            println!("adaptive {verdict} the static schedule at this budget");
            return Ok(());
        }
        if evals > budget {
            lo = eps;
        } else {
            hi = eps;
        }
    }
    println!("no threshold matched the budget");
    Ok(())
}
