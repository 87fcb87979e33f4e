//! Command-line front end: config parsing, the `run`, `sweep` and `compare`
//! commands, and the JSON / JSONL / CSV writers they use.

use crate::acm::{ExecutionMode, PolicyConfig, PolicyKind};
use crate::cachestore::CacheStats;
use crate::engine::{
    compare_runs, run_inference, run_sequence, ErrorReport, LayerRecord, RunConfig, RunTrace, IMAGE_PEAK,
};
use crate::error::Error;
use crate::metrics::{cost_summary_all, psnr_from_mse, CostSummary, FidelityReport};
use clap::{Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

pub const REPORT_FILE: &str = "report.json";
pub const TRACE_FILE: &str = "trace.jsonl";
pub const LAYERS_FILE: &str = "layers.csv";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const COMPARE_FILE: &str = "compare.csv";
pub const THREADS_ENV: &str = "OFFSETLAB_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "offsetlab",
    version,
    about = "Adaptive offset cache correction on a toy denoiser"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one config against its full-recompute reference.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also export patch-variation heatmaps.
        #[arg(long)]
        trace_images: bool,
    },
    /// Grid over the sensitivity and the spatial weight.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0])]
        gamma: Vec<f64>,
        #[arg(long = "lambda", value_delimiter = ',', default_values_t = vec![0.5, 1.0, 2.0])]
        lambda: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Several policies against one shared reference.
    ///
    /// Policies are `Kind[:param]`: `full`, `reuse`, `static:N`,
    /// `binary:THETA`, `adaptive[:faithful|economic]`.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        policies: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum CliError {
    /// Bad arguments or config; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// Anything that fails after the config was accepted; exit code 1.
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::BadConfig { .. } => CliError::Usage(e.to_string()),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

pub type CliResult<T> = std::result::Result<T, CliError>;

/// Parse a config document, filling omitted fields with their defaults.
pub fn parse_config_str(text: &str) -> CliResult<RunConfig> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let config: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        CliError::Usage(format!("config field `{path}`: {}", e.inner()))
    })?;
    config.validate()?;
    Ok(config)
}

pub fn parse_config(path: &Path) -> CliResult<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    parse_config_str(&text)
}

/// Per-layer aggregates over every record of every frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerAggregate {
    pub layer: usize,
    pub eligible: bool,
    /// Mean raw score over records that had history.
    pub mean_score: Option<f64>,
    pub mean_score_normalized: Option<f64>,
    /// Mean correction weight from the score.
    pub mean_weight: f64,
    /// Mean weight the policy actually applied.
    pub mean_applied_weight: f64,
    pub reuse_fraction: f64,
    pub block_evals: u64,
}

pub fn layer_aggregates(traces: &[RunTrace]) -> Vec<LayerAggregate> {
    let layers = traces.first().map_or(0, |t| t.layers());
    (0..layers)
        .map(|l| {
            let recs: Vec<&LayerRecord> = traces
                .iter()
                .flat_map(|t| t.records.iter().filter(move |r| r.layer == l))
                .collect();
            let n = recs.len().max(1) as f64;
            let finite: Vec<&LayerRecord> = recs.iter().copied().filter(|r| r.signals.score.is_finite()).collect();
            let mean_of = |f: fn(&LayerRecord) -> f64| {
                (!finite.is_empty()).then(|| finite.iter().map(|r| f(r)).sum::<f64>() / finite.len() as f64)
            };
            LayerAggregate {
                layer: l,
                eligible: recs.first().is_some_and(|r| r.eligible),
                mean_score: mean_of(|r| r.signals.score),
                mean_score_normalized: mean_of(|r| r.signals.score_normalized),
                mean_weight: recs.iter().map(|r| r.weight).sum::<f64>() / n,
                mean_applied_weight: recs.iter().map(|r| r.decision.weight).sum::<f64>() / n,
                reuse_fraction: recs.iter().filter(|r| r.block_evals == 0).count() as f64 / n,
                block_evals: recs.iter().map(|r| u64::from(r.block_evals)).sum(),
            }
        })
        .collect()
}

/// Everything `run` writes to `report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportBundle {
    pub tool: String,
    pub version: String,
    pub timestamp: String,
    pub config: RunConfig,
    pub frames: usize,
    pub cost: CostSummary,
    pub reference_cost: CostSummary,
    pub stats: CacheStats,
    /// Final images against the reference, one pair per frame.
    pub fidelity: FidelityReport,
    /// Step-level diagnostics, one entry per frame.
    pub errors: Vec<ErrorReport>,
    pub layers: Vec<LayerAggregate>,
    /// Heatmap files written next to the report.
    pub heatmaps: Vec<String>,
}

/// Test and reference traces for a config: one frame, or every frame of its scene.
pub fn execute_config(config: &RunConfig) -> crate::Result<Vec<RunTrace>> {
    match &config.scene {
        Some(scene) if scene.frames >= 2 => run_sequence(config, &scene.to_spec(&config.model)?),
        _ => Ok(vec![run_inference(config)?]),
    }
}

/// Outcome of comparing a config (possibly multi-frame) with its reference.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub traces: Vec<RunTrace>,
    pub errors: Vec<ErrorReport>,
    pub fidelity: FidelityReport,
    pub cost: CostSummary,
}

impl Evaluation {
    /// Mean final-image MSE over frames.
    pub fn mse(&self) -> f64 {
        self.fidelity.mean_mse
    }
}

pub fn evaluate(config: &RunConfig, reference: &[RunTrace]) -> crate::Result<Evaluation> {
    let traces = execute_config(config)?;
    let errors = traces
        .iter()
        .zip(reference)
        .map(|(t, r)| compare_runs(t, r))
        .collect::<crate::Result<Vec<_>>>()?;
    if errors.len() != traces.len() {
        return Err(Error::IncomparableRuns("reference has fewer frames".into()));
    }
    let fidelity = FidelityReport::from_pairs(errors.iter().map(|e| e.final_image).collect());
    let cost = cost_summary_all(&traces);
    Ok(Evaluation {
        traces,
        errors,
        fidelity,
        cost,
    })
}

fn create_out_dir(out: &Path) -> CliResult<()> {
    fs::create_dir_all(out).map_err(|e| io_err(out, e))
}

fn write_file(path: &Path, contents: &[u8]) -> CliResult<()> {
    fs::write(path, contents).map_err(|e| io_err(path, e))
}

fn csv_writer(path: &Path) -> CliResult<csv::Writer<File>> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_path(path)
        .map_err(|e| io_err(path, e))
}

/// Plain decimal without exponent; `None` becomes an empty field.
fn num(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

fn write_rows(path: &Path, header: &[&str], rows: &[Vec<String>]) -> CliResult<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| io_err(path, e))?;
    for row in rows {
        w.write_record(row).map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

/// One JSON object per record, in execution order.
pub fn write_trace(path: &Path, traces: &[RunTrace]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| io_err(path, e))?;
    let mut w = BufWriter::new(file);
    for r in traces.iter().flat_map(|t| &t.records) {
        let line = serde_json::to_string(r).map_err(|e| io_err(path, e))?;
        writeln!(w, "{line}").map_err(|e| io_err(path, e))?;
    }
    w.flush().map_err(|e| io_err(path, e))
}

fn write_layers(path: &Path, layers: &[LayerAggregate]) -> CliResult<()> {
    let rows: Vec<Vec<String>> = layers
        .iter()
        .map(|l| {
            vec![
                l.layer.to_string(),
                l.eligible.to_string(),
                num(l.mean_score),
                num(l.mean_score_normalized),
                num(Some(l.mean_weight)),
                num(Some(l.mean_applied_weight)),
                num(Some(l.reuse_fraction)),
                l.block_evals.to_string(),
            ]
        })
        .collect();
    write_rows(
        path,
        &[
            "layer",
            "eligible",
            "mean_score",
            "mean_score_normalized",
            "mean_weight",
            "mean_applied_weight",
            "reuse_fraction",
            "block_evals",
        ],
        &rows,
    )
}

/// `heatmap_<step>.csv` per recorded variation map: one line per patch-grid
/// row, batch elements stacked vertically. Sequences prefix the frame.
fn write_heatmaps(out: &Path, traces: &[RunTrace]) -> CliResult<Vec<String>> {
    let mut names = Vec::new();
    for t in traces {
        let layout = t.config.layout()?;
        for m in &t.variation_maps {
            let name = if traces.len() > 1 {
                format!("heatmap_f{}_{}.csv", t.frame, m.step)
            } else {
                format!("heatmap_{}.csv", m.step)
            };
            let path = out.join(&name);
            let mut w = csv::WriterBuilder::new()
                .has_headers(false)
                .terminator(csv::Terminator::Any(b'\n'))
                .from_path(&path)
                .map_err(|e| io_err(&path, e))?;
            for batch in &m.values {
                for row in batch.chunks(layout.grid_cols) {
                    w.write_record(row.iter().map(|v| format!("{v}")))
                        .map_err(|e| io_err(&path, e))?;
                }
            }
            w.flush().map_err(|e| io_err(&path, e))?;
            names.push(name);
        }
    }
    Ok(names)
}

pub fn cmd_run(config_path: &Path, out: &Path, trace_images: bool) -> CliResult<ReportBundle> {
    let mut config = parse_config(config_path)?;
    config.trace_images |= trace_images;
    run_config(&config, out)
}

/// Body of `run` for an already parsed config.
pub fn run_config(config: &RunConfig, out: &Path) -> CliResult<ReportBundle> {
    create_out_dir(out)?;
    let reference = execute_config(&config.reference())?;
    let eval = evaluate(config, &reference)?;

    write_trace(&out.join(TRACE_FILE), &eval.traces)?;
    let layers = layer_aggregates(&eval.traces);
    write_layers(&out.join(LAYERS_FILE), &layers)?;
    let heatmaps = write_heatmaps(out, &eval.traces)?;

    let mut stats = CacheStats::default();
    for t in &eval.traces {
        stats.merge(&t.stats);
    }
    let bundle = ReportBundle {
        tool: env!("CARGO_PKG_NAME").into(),
        version: env!("CARGO_PKG_VERSION").into(),
        timestamp: chrono::Utc::now().to_rfc3339(),
        config: config.clone(),
        frames: eval.traces.len(),
        cost: eval.cost,
        reference_cost: cost_summary_all(&reference),
        stats,
        fidelity: eval.fidelity,
        errors: eval.errors,
        layers,
        heatmaps,
    };
    let json = serde_json::to_vec_pretty(&bundle).map_err(|e| CliError::Runtime(e.to_string()))?;
    write_file(&out.join(REPORT_FILE), &json)?;
    Ok(bundle)
}

fn thread_pool(points: usize) -> CliResult<rayon::ThreadPool> {
    let threads = match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={v} is not a positive integer")))?,
        Err(_) => points.max(1),
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Runtime(e.to_string()))
}

/// One row of `sweep.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub gamma: f64,
    pub lambda_spatial: f64,
    pub mse_vs_ref: f64,
    pub psnr: f64,
    pub hit_rate: Option<f64>,
    pub eval_fraction: f64,
}

pub fn sweep(config: &RunConfig, gammas: &[f64], lambdas: &[f64]) -> CliResult<Vec<SweepRow>> {
    if gammas.is_empty() || lambdas.is_empty() {
        return Err(CliError::Usage("sweep grid is empty".into()));
    }
    let grid: Vec<(f64, f64)> = gammas
        .iter()
        .flat_map(|&g| lambdas.iter().map(move |&l| (g, l)))
        .collect();
    let points = grid
        .iter()
        .map(|&(g, l)| {
            let c = config.with_policy(PolicyConfig {
                gamma: g,
                lambda_spatial: l,
                ..config.policy.clone()
            });
            c.validate()?;
            Ok(c)
        })
        .collect::<CliResult<Vec<_>>>()?;
    let reference = execute_config(&config.reference())?;
    let pool = thread_pool(points.len())?;
    let evals: Vec<crate::Result<Evaluation>> =
        pool.install(|| points.par_iter().map(|c| evaluate(c, &reference)).collect());
    grid.iter()
        .zip(evals)
        .map(|(&(g, l), e)| {
            let e = e?;
            Ok(SweepRow {
                gamma: g,
                lambda_spatial: l,
                mse_vs_ref: e.mse(),
                psnr: psnr_from_mse(e.mse(), IMAGE_PEAK),
                hit_rate: e.cost.hit_rate,
                eval_fraction: e.cost.eval_fraction,
            })
        })
        .collect()
}

pub fn cmd_sweep(config_path: &Path, gammas: &[f64], lambdas: &[f64], out: &Path) -> CliResult<Vec<SweepRow>> {
    let mut config = parse_config(config_path)?;
    config.record_states = false;
    let rows = sweep(&config, gammas, lambdas)?;
    create_out_dir(out)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                num(Some(r.gamma)),
                num(Some(r.lambda_spatial)),
                num(Some(r.mse_vs_ref)),
                num(Some(r.psnr)),
                num(r.hit_rate),
                num(Some(r.eval_fraction)),
            ]
        })
        .collect();
    write_rows(
        &out.join(SWEEP_FILE),
        &[
            "gamma",
            "lambda_spatial",
            "mse_vs_ref",
            "psnr",
            "hit_rate",
            "eval_fraction",
        ],
        &body,
    )?;
    Ok(rows)
}

/// Parse `Kind[:param]`, inheriting every other field from `base`.
pub fn parse_policy(spec: &str, base: &PolicyConfig) -> CliResult<PolicyConfig> {
    let (kind, param) = match spec.split_once(':') {
        Some((k, p)) => (k, Some(p)),
        None => (spec, None),
    };
    let bad = |why: &str| CliError::Usage(format!("policy `{spec}`: {why}"));
    let kind = kind.trim().to_ascii_lowercase().replace(['-', '_'], "");
    let mut p = base.clone();
    match kind.as_str() {
        "full" | "fullrecompute" => p.kind = PolicyKind::FullRecompute,
        "reuse" | "purereuse" => p.kind = PolicyKind::PureReuse,
        "static" | "staticinterval" => {
            p.kind = PolicyKind::StaticInterval;
            if let Some(n) = param {
                p.interval = n.trim().parse().map_err(|_| bad("interval must be an integer"))?;
            }
        }
        "binary" | "binarythreshold" => {
            p.kind = PolicyKind::BinaryThreshold;
            if let Some(t) = param {
                p.binary_threshold = t.trim().parse().map_err(|_| bad("threshold must be a number"))?;
            }
        }
        "adaptive" => {
            p.kind = PolicyKind::Adaptive;
            match param.map(|m| m.trim().to_ascii_lowercase()) {
                None => {}
                Some(m) if m == "faithful" => p.mode = ExecutionMode::Faithful,
                Some(m) if m == "economic" => p.mode = ExecutionMode::Economic,
                Some(_) => return Err(bad("mode must be faithful or economic")),
            }
        }
        _ => return Err(bad("unknown policy kind")),
    }
    p.validate()?;
    Ok(p)
}

/// Short human label, e.g. `StaticInterval(N=2)`.
pub fn policy_label(p: &PolicyConfig) -> String {
    match p.kind {
        PolicyKind::Adaptive => format!("Adaptive({:?} gamma={})", p.mode, p.gamma),
        PolicyKind::StaticInterval => format!("StaticInterval(N={})", p.interval),
        PolicyKind::BinaryThreshold => format!("BinaryThreshold(theta={})", p.binary_threshold),
        PolicyKind::FullRecompute => "FullRecompute".into(),
        PolicyKind::PureReuse => "PureReuse".into(),
    }
}

/// One row of `compare.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareRow {
    pub policy: String,
    pub mse_vs_ref: f64,
    pub psnr: f64,
    pub ssim: Option<f64>,
    pub hit_rate: Option<f64>,
    pub skip_rate: Option<f64>,
    pub eval_fraction: f64,
    pub total_block_evals: u64,
}

pub fn compare(config: &RunConfig, policies: &[PolicyConfig]) -> CliResult<Vec<CompareRow>> {
    if policies.len() < 2 {
        return Err(CliError::Usage("compare needs at least two policies".into()));
    }
    let reference = execute_config(&config.reference())?;
    let pool = thread_pool(policies.len())?;
    let evals: Vec<crate::Result<Evaluation>> = pool.install(|| {
        policies
            .par_iter()
            .map(|p| evaluate(&config.with_policy(p.clone()), &reference))
            .collect()
    });
    policies
        .iter()
        .zip(evals)
        .map(|(p, e)| {
            let e = e?;
            Ok(CompareRow {
                policy: policy_label(p),
                mse_vs_ref: e.mse(),
                psnr: psnr_from_mse(e.mse(), IMAGE_PEAK),
                ssim: e.fidelity.mean_ssim,
                hit_rate: e.cost.hit_rate,
                skip_rate: e.cost.skip_rate,
                eval_fraction: e.cost.eval_fraction,
                total_block_evals: e.cost.total_block_evals,
            })
        })
        .collect()
}

pub fn cmd_compare(config_path: &Path, policies: &[String], out: &Path) -> CliResult<Vec<CompareRow>> {
    let mut config = parse_config(config_path)?;
    config.record_states = false;
    let parsed = policies
        .iter()
        .map(|s| parse_policy(s, &config.policy))
        .collect::<CliResult<Vec<_>>>()?;
    let rows = compare(&config, &parsed)?;
    create_out_dir(out)?;
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.policy.clone(),
                num(Some(r.mse_vs_ref)),
                num(Some(r.psnr)),
                num(r.ssim),
                num(r.hit_rate),
                num(r.skip_rate),
                num(Some(r.eval_fraction)),
                r.total_block_evals.to_string(),
            ]
        })
        .collect();
    write_rows(
        &out.join(COMPARE_FILE),
        &[
            "policy",
            "mse_vs_ref",
            "psnr",
            "ssim",
            "hit_rate",
            "skip_rate",
            "eval_fraction",
            "total_block_evals",
        ],
        &body,
    )?;
    Ok(rows)
}

/// Dispatch a parsed command line.
pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Run {
            config,
            out,
            trace_images,
        } => cmd_run(config, out, *trace_images).map(|_| ()),
        Command::Sweep {
            config,
            gamma,
            lambda,
            out,
        } => cmd_sweep(config, gamma, lambda, out).map(|_| ()),
        Command::Compare { config, policies, out } => cmd_compare(config, policies, out).map(|_| ()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_gets_defaults() {
        let c = parse_config_str(r#"{"policy": {"kind": "Adaptive"}}"#).unwrap();
        assert_eq!(c.policy.gamma, 1.0);
        assert_eq!(c.policy.lambda_spatial, 1.0);
        assert_eq!(c, RunConfig::default());
    }

    #[test]
    fn negative_gamma_is_a_usage_error() {
        let e = parse_config_str(r#"{"policy": {"kind": "Adaptive", "gamma": -1}}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
        assert!(e.to_string().contains("policy.gamma"), "{e}");
    }

    #[test]
    fn type_errors_name_the_path() {
        let e = parse_config_str(r#"{"policy": {"kind": "Adaptive", "tau_max": "x"}}"#).unwrap_err();
        assert!(e.to_string().contains("policy.tau_max"), "{e}");
        let e = parse_config_str(r#"{"modell": {}}"#).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn config_round_trip() {
        let c = parse_config_str(r#"{"policy": {"kind": "StaticInterval", "interval": 3}, "label": 2}"#).unwrap();
        let again = parse_config_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn policy_specs() {
        let base = PolicyConfig::new(PolicyKind::Adaptive);
        assert_eq!(parse_policy("static:3", &base).unwrap().interval, 3);
        assert_eq!(
            parse_policy("StaticInterval", &base).unwrap().kind,
            PolicyKind::StaticInterval
        );
        assert_eq!(
            parse_policy("adaptive:economic", &base).unwrap().mode,
            ExecutionMode::Economic
        );
        assert_eq!(parse_policy("binary:0.25", &base).unwrap().binary_threshold, 0.25);
        assert_eq!(parse_policy("Full", &base).unwrap().kind, PolicyKind::FullRecompute);
        assert!(parse_policy("static:0", &base).is_err());
        assert!(parse_policy("nope", &base).is_err());
    }

    #[test]
    fn decimals_have_no_exponent() {
        assert_eq!(num(Some(1e-7)), "0.0000001");
        assert_eq!(num(Some(2.5)), "2.5");
        assert_eq!(num(None), "");
    }
}
