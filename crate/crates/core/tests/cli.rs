use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use diqnn::model::load_checkpoint;

fn diqnn(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_diqnn"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn iris() -> String {
    let p = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/iris.csv");
    format!("csv:{}", p.display())
}

fn column(csv: &str, name: &str) -> Vec<String> {
    let mut lines = csv.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let idx = header.iter().position(|h| *h == name).unwrap();
    lines.map(|l| l.split(',').nth(idx).unwrap().to_string()).collect()
}

fn train_iris(dir: &Path, model: &str, extra: &[&str]) -> PathBuf {
    let out = dir.join(model.replace(':', "_"));
    let data = iris();
    let mut args = vec!["train", "--model", model, "--data", &data, "--epochs", "3", "--batch", "10"];
    let out_s = out.to_string_lossy().into_owned();
    args.extend(["--out", &out_s]);
    args.extend(extra);
    let o = diqnn(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&diqnn(&["--help"])), 0);
    assert_eq!(code(&diqnn(&["--version"])), 0);
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(code(&diqnn(&[])), 1);
    assert_eq!(code(&diqnn(&["train", "--data", "xor", "--bogus"])), 1);
    let o = diqnn(&["train", "--model", "lowrank:1", "--data", "xor", "--flow-step", "0.1"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("--flow-step"));
    assert_eq!(code(&diqnn(&["train", "--data", "nowhere"])), 1);
    assert_eq!(code(&diqnn(&["train", "--model", "cubic", "--data", "xor"])), 1);
}

#[test]
fn xor_gd_margin_increases_every_step() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("xor");
    let o = diqnn(&[
        "train", "--model", "lowrank:1", "--data", "xor", "--optimizer", "gd", "--lr", "0.1",
        "--xor-paper-init", "--epochs", "60", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(out.join("trace.csv")).unwrap();
    let mu: Vec<f64> = column(&trace, "delta_mu").iter().map(|v| v.parse().unwrap()).collect();
    assert_eq!(mu.len(), 61);
    assert!(mu.windows(2).all(|w| w[1] > w[0]));
    for f in ["manifest.json", "trace.ndj", "margin.ndj", "checkpoint.bin"] {
        assert!(out.join(f).exists(), "{f}");
    }
}

#[test]
fn manifest_records_config_and_fingerprint() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_iris(dir.path(), "lowrank:2", &["--seed", "4"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "ok");
    assert_eq!(m["seed"], 4);
    assert_eq!(m["config"]["train"]["learning_rate"], 0.01);
    assert_eq!(m["config"]["train"]["batch_size"], 10);
    assert_eq!(m["datasets"]["train"]["samples"], 120);
    assert_eq!(m["datasets"]["test"]["samples"], 30);
    assert_eq!(m["datasets"]["train"]["sha256"].as_str().unwrap().len(), 64);
    assert!(m["finished_at"].is_string());
    let first = fs::read_to_string(out.join("margin.ndj")).unwrap();
    let head: serde_json::Value = serde_json::from_str(first.lines().next().unwrap()).unwrap();
    assert_eq!(head["run_id"], m["run_id"]);
    assert_eq!(first.lines().count(), 121);
}

#[test]
fn same_seed_gives_identical_traces() {
    let dir = tempfile::tempdir().unwrap();
    let a = train_iris(&dir.path().join("a"), "quadratic", &["--seed", "9"]);
    let b = train_iris(&dir.path().join("b"), "quadratic", &["--seed", "9"]);
    let strip = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("trace.csv"))
            .unwrap()
            .lines()
            .map(|l| l.rsplit_once(',').unwrap().0.to_string())
            .collect()
    };
    assert_eq!(strip(&a), strip(&b));
    // Metadata carries the run id, which depends on the output path.
    let params = |p: &Path| load_checkpoint(p.join("checkpoint.bin")).unwrap().network.theta().to_vec();
    assert_eq!(params(&a), params(&b));
    let samples = |p: &Path| -> Vec<String> {
        fs::read_to_string(p.join("margin.ndj")).unwrap().lines().skip(1).map(String::from).collect()
    };
    assert_eq!(samples(&a), samples(&b));
}

#[test]
fn divergence_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("div");
    let o = diqnn(&[
        "train", "--model", "quadratic", "--data", &iris(), "--optimizer", "gd", "--lr", "1e8",
        "--epochs", "50", "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(m["status"], "diverged");
}

#[test]
fn analyze_rank_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_iris(dir.path(), "quadratic", &[]);
    let ckpt = out.join("checkpoint.bin");
    let o = diqnn(&["analyze", "--checkpoint", ckpt.to_str().unwrap(), "--data", &iris(), "--rank-curve", "1,2,3,full"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("analysis/rank_curve.csv")).unwrap();
    let rows: Vec<&str> = csv.lines().skip(1).collect();
    assert_eq!(rows.len(), 4);
    let curve: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("analysis/rank_curve.json")).unwrap()).unwrap();
    let full = curve["full_accuracy"].as_f64().unwrap();
    assert_eq!(rows[3], format!("full,{full}"));
    assert!(out.join("analysis/rank_curve.manifest.json").exists());
}

#[test]
fn analyze_homogeneity_euler_and_sta() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_iris(dir.path(), "lowrank:1", &[]);
    let ckpt = out.join("checkpoint.bin");
    let ckpt = ckpt.to_str().unwrap();
    let o = diqnn(&["analyze", "--checkpoint", ckpt, "--data", &iris(), "--homogeneity"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("degree=2"));
    let err: f64 = stdout(&o).split("worst_relative_error=").nth(1).unwrap().trim().parse().unwrap();
    assert!(err < 1e-10);

    let o = diqnn(&["analyze", "--checkpoint", ckpt, "--data", &iris(), "--euler"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(out.join("analysis/euler.csv").exists());

    let o = diqnn(&["analyze", "--checkpoint", ckpt, "--data", &iris(), "--sta"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let sta = fs::read_to_string(out.join("analysis/sta.csv")).unwrap();
    assert_eq!(sta.lines().count(), 4);
}

#[test]
fn analyze_theorem_diag_on_two_classes() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("two.csv");
    let mut body = String::new();
    for i in 0..40 {
        let t = i as f64 / 40.0;
        let label = i % 2;
        let (x, y) = if label == 0 { (1.0 + t, 0.3 * t) } else { (0.2 * t, 1.0 + t) };
        body.push_str(&format!("{x},{y},{label}\n"));
    }
    fs::write(&csv, body).unwrap();
    let data = format!("csv:{}", csv.display());
    let out = dir.path().join("run");
    let o = diqnn(&[
        "train", "--model", "lowrank:1", "--data", &data, "--epochs", "5", "--batch", "8",
        "--out", out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = out.join("checkpoint.bin");
    let o = diqnn(&["analyze", "--checkpoint", ckpt.to_str().unwrap(), "--data", &data, "--theorem-diag"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let rec: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("analysis/theorem_diag.json")).unwrap()).unwrap();
    assert_eq!(rec["bound"].as_f64(), Some(0.0));
}

#[test]
fn analyze_rejects_mismatched_data_and_double_choice() {
    let dir = tempfile::tempdir().unwrap();
    let out = train_iris(dir.path(), "lowrank:1", &[]);
    let ckpt = out.join("checkpoint.bin");
    let ckpt = ckpt.to_str().unwrap();
    let o = diqnn(&["analyze", "--checkpoint", ckpt, "--data", "xor", "--homogeneity"]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("format error"), "{}", stderr(&o));
    let o = diqnn(&["analyze", "--checkpoint", ckpt, "--data", &iris(), "--sta", "--euler"]);
    assert_eq!(code(&o), 1);
    let o = diqnn(&["analyze", "--checkpoint", ckpt, "--data", &iris()]);
    assert_eq!(code(&o), 1);
}

#[test]
fn xor_verify_coarse_step_breaks_conservation() {
    let o = diqnn(&["xor-verify", "--flow-step", "1.0"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("FAIL conserved_product"));
    assert!(stderr(&o).contains("conserved_product"));
}

#[test]
fn xor_verify_zero_time_is_vacuous() {
    let o = diqnn(&["xor-verify", "--total-time", "0"]);
    let out = stdout(&o);
    assert!(out.contains("PASS monotone_margin"));
    assert!(out.contains("final_delta_mu=0.000000"));
    assert_eq!(code(&o), 3);
}

#[test]
fn xor_verify_defaults_report_trajectory() {
    let dir = tempfile::tempdir().unwrap();
    let o = diqnn(&["xor-verify", "--out", dir.path().to_str().unwrap()]);
    let out = stdout(&o);
    for check in ["conserved_product", "symmetry", "monotone_margin"] {
        assert!(out.contains(&format!("PASS {check}")), "{out}");
    }
    // The measured rate is twice the closed form, and Δμ is still below
    // 0.99 at t = 50; both checks report failure.
    assert!(out.contains("FAIL closed_form_rate"), "{out}");
    assert!(out.contains("rate_ratio=2.000"), "{out}");
    assert_eq!(code(&o), 3);
    let trace = fs::read_to_string(dir.path().join("xor_trace.csv")).unwrap();
    assert_eq!(trace.lines().count(), 5002);
}
