//! Per-layer offset signals, the drift bound and the patch-variation heatmap.
//!
//!     cargo run --release --example diagnostics

use offsetlab::cli::layer_aggregates;
use offsetlab::engine::{compare_runs, run_inference, run_reference, RunConfig};

fn main() -> offsetlab::Result<()> {
    let config = RunConfig {
        trace_images: true,
        ..RunConfig::default()
    };
    let run = run_inference(&config)?;
    let reference = run_reference(&config)?;
    let report = compare_runs(&run, &reference)?;

    println!("layer  eligible  mean score  mean lambda  reuse");
    for a in layer_aggregates(std::slice::from_ref(&run)) {
        println!(
            "{:>5}  {:>8}  {:>10}  {:>11.3}  {:>5.2}",
            a.layer,
            a.eligible,
            a.mean_score.map(|s| format!("{s:.3}")).unwrap_or_else(|| "-".into()),
            a.mean_weight,
            a.reuse_fraction
        );
    }

    if let Some(l) = &report.lipschitz_estimates {
        let s: Vec<String> = l.iter().map(|v| format!("{v:.2}")).collect();
        println!("lipschitz estimates: {}", s.join(" "));
    }
    if let Some(b) = report.bound {
        println!(
            "drift bound holds on {}/{} blended records (min slack {:?})",
            b.satisfied, b.records, b.min_slack
        );
    }
    println!("blend identity max rel error {:?}", report.blend_identity_max_rel_error);

    let layout = config.layout()?;
    if let Some(m) = run.variation_maps.last() {
        println!("patch variation at step {}, layer {}:", m.step, m.layer);
        for row in m.values[0].chunks(layout.grid_cols) {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:6.3}")).collect();
            println!("  {}", cells.join(" "));
        }
    }
    Ok(())
}
