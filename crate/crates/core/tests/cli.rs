use offsetlab::acm::{PolicyConfig, PolicyKind};
use offsetlab::cli::{parse_policy, ReportBundle, COMPARE_FILE, REPORT_FILE, SWEEP_FILE, TRACE_FILE};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use tempfile::TempDir;

const SMALL: &str = r#"{"model": {"max_timesteps": 8}, "policy": {"kind": "Adaptive", "mode": "Economic"}}"#;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_offsetlab"))
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("config.json");
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\n{}",
        out.status,
        String::from_utf8_lossy(&out.stderr)
    );
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<csv::StringRecord> {
    csv::Reader::from_path(path)
        .unwrap()
        .records()
        .map(|r| r.unwrap())
        .collect()
}

#[test]
fn run_writes_schema_valid_report_and_full_trace() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("out");
    ok(&run(&["run", "--config", s(&cfg), "--out", s(&out), "--trace-images"]));

    let trace = fs::read_to_string(out.join(TRACE_FILE)).unwrap();
    assert_eq!(trace.lines().count(), 8 * 8);
    for line in trace.lines() {
        serde_json::from_str::<serde_json::Value>(line).unwrap();
    }

    let text = fs::read_to_string(out.join(REPORT_FILE)).unwrap();
    let report: serde_json::Value = serde_json::from_str(&text).unwrap();
    let schema_text = fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/schema/report.schema.json")).unwrap();
    let schema: serde_json::Value = serde_json::from_str(&schema_text).unwrap();
    let compiled = jsonschema::JSONSchema::compile(&schema).unwrap();
    if let Err(errors) = compiled.validate(&report) {
        let msgs: Vec<String> = errors.map(|e| format!("{} at {}", e, e.instance_path)).collect();
        panic!("report does not match schema:\n{}", msgs.join("\n"));
    }

    let bundle: ReportBundle = serde_json::from_str(&text).unwrap();
    let again: ReportBundle = serde_json::from_str(&serde_json::to_string(&bundle).unwrap()).unwrap();
    assert_eq!(bundle, again);
    assert!(!bundle.heatmaps.is_empty());
    for name in &bundle.heatmaps {
        let rows = fs::read_to_string(out.join(name)).unwrap();
        assert_eq!(rows.lines().count(), 4);
    }

    for row in csv_rows(&out.join("layers.csv")) {
        for field in row.iter().skip(2).filter(|f| !f.is_empty()) {
            assert!(field.parse::<f64>().unwrap().is_finite());
        }
    }
}

#[test]
fn outputs_are_byte_identical_across_invocations() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let mut traces = Vec::new();
    let mut sweeps = Vec::new();
    for k in 0..2 {
        let out = dir.path().join(format!("r{k}"));
        ok(&run(&["run", "--config", s(&cfg), "--out", s(&out)]));
        traces.push(fs::read(out.join(TRACE_FILE)).unwrap());
        let out = dir.path().join(format!("s{k}"));
        ok(&run(&["sweep", "--config", s(&cfg), "--out", s(&out)]));
        sweeps.push(fs::read(out.join(SWEEP_FILE)).unwrap());
    }
    assert_eq!(traces[0], traces[1]);
    assert_eq!(sweeps[0], sweeps[1]);
}

#[test]
fn sweep_grid_shapes() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("default");
    ok(&run(&["sweep", "--config", s(&cfg), "--out", s(&out)]));
    let rows = csv_rows(&out.join(SWEEP_FILE));
    assert_eq!(rows.len(), 9);
    for row in &rows {
        for field in row.iter().filter(|f| !f.is_empty()) {
            assert!(!field.contains('e'), "exponent in {field}");
            assert!(field.parse::<f64>().unwrap().is_finite());
        }
    }

    let out = dir.path().join("single");
    let one = bin()
        .args([
            "sweep",
            "--config",
            s(&cfg),
            "--gamma",
            "0",
            "--lambda",
            "1",
            "--out",
            s(&out),
        ])
        .env("OFFSETLAB_THREADS", "1")
        .output()
        .unwrap();
    ok(&one);
    let rows = csv_rows(&out.join(SWEEP_FILE));
    assert_eq!(rows.len(), 1);
    let hr: f64 = rows[0][4].parse().unwrap();
    assert!((hr - 7.0 / 8.0).abs() < 1e-12);
}

#[test]
fn compare_reports_one_row_per_policy() {
    let dir = TempDir::new().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let out = dir.path().join("cmp");
    ok(&run(&[
        "compare",
        "--config",
        s(&cfg),
        "--policies",
        "full,reuse,static:2,adaptive:economic",
        "--out",
        s(&out),
    ]));
    let rows = csv_rows(&out.join(COMPARE_FILE));
    assert_eq!(rows.len(), 4);
    assert_eq!(rows[0][1].parse::<f64>().unwrap(), 0.0);
    assert!(rows[1][1].parse::<f64>().unwrap() > 0.0);
}

#[test]
fn exit_codes() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("o");

    let missing = run(&["run", "--config", "/nonexistent/config.json", "--out", s(&out)]);
    assert_eq!(missing.status.code(), Some(2));

    let cfg = write_config(dir.path(), r#"{"policy": {"kind": "Adaptive", "gamma": -1}}"#);
    let bad = run(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(bad.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("policy.gamma"));

    let cfg = write_config(dir.path(), r#"{"model": {"layers": "eight"}}"#);
    let typed = run(&["run", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(typed.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&typed.stderr).contains("model.layers"));

    let cfg = write_config(dir.path(), SMALL);
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    let unwritable = run(&["run", "--config", s(&cfg), "--out", s(&blocker.join("sub"))]);
    assert_eq!(unwritable.status.code(), Some(1));

    let no_args = run(&["compare", "--config", s(&cfg), "--out", s(&out)]);
    assert_eq!(no_args.status.code(), Some(2));

    let bad_threads = bin()
        .args(["sweep", "--config", s(&cfg), "--out", s(&out)])
        .env("OFFSETLAB_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(bad_threads.status.code(), Some(2));
}

#[test]
fn policy_specs_inherit_base_fields() {
    let mut base = PolicyConfig::new(PolicyKind::Adaptive);
    base.tau_max = 7;
    let p = parse_policy("binary:0.3", &base).unwrap();
    assert_eq!(p.kind, PolicyKind::BinaryThreshold);
    assert_eq!(p.binary_threshold, 0.3);
    assert_eq!(p.tau_max, 7);
    assert!(parse_policy("nonsense", &base).is_err());
}
