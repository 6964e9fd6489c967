//! End-to-end runs of the command-line tool on small problems.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use fredholm_mri::experiment::{AggregateRow, CompareRow, MetricsRow, OUT_ENV};

const SMALL: &str = r#"{
    "phantom": {"kind": "shepp_logan", "n": 16, "m": 16},
    "coils": {"coils": 8, "normalize": true},
    "acs": 4,
    "max_iter": 100
}"#;

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.json");
    std::fs::write(&path, text).unwrap();
    path
}

fn run(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_fredholm-mri"))
        .args(args)
        .arg("--out")
        .arg(out)
        .env_remove(OUT_ENV)
        .output()
        .unwrap()
}

fn run_small(args: &[&str], dir: &Path) -> Output {
    let cfg = write_config(dir, SMALL);
    let mut all = args.to_vec();
    all.extend(["--config", cfg.to_str().unwrap()]);
    run(&all, &dir.join("out"))
}

fn read_csv<T: serde::de::DeserializeOwned>(path: &Path) -> Vec<T> {
    csv::Reader::from_path(path)
        .unwrap()
        .deserialize()
        .collect::<Result<Vec<T>, _>>()
        .unwrap()
}

fn assert_ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn simulate_writes_inputs_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(&["simulate"], dir.path());
    assert_ok(&out);
    for f in ["phantom.cstack", "maps.cstack", "mask.json", "kspace.cstack", "manifest.json"] {
        assert!(dir.path().join("out").join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(manifest["command"], "simulate");
}

#[test]
fn simulate_is_deterministic_for_a_seed() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let args = ["simulate", "--config", cfg.to_str().unwrap(), "--scan-time", "0.5", "--seed", "7"];
    assert_ok(&run(&args, &dir.path().join("a")));
    assert_ok(&run(&args, &dir.path().join("b")));
    for f in ["mask.json", "kspace.cstack", "maps.cstack"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f} differs between runs");
    }
}

#[test]
fn scan_time_below_calibration_block_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(&["simulate", "--scan-time", "0.1"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("scan time"));
}

#[test]
fn unknown_config_field_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), r#"{"alfa": 0.1}"#);
    let out = run(&["simulate", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn missing_input_directory_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere");
    let out = run_small(&["reconstruct", "--input", missing.to_str().unwrap()], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn reconstruct_scores_each_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(&["reconstruct", "--methods", "ac,zero_fill,tikhonov"], dir.path());
    assert_ok(&out);
    let root = dir.path().join("out");
    let rows: Vec<MetricsRow> = read_csv(&root.join("metrics.csv"));
    let names: Vec<&str> = rows.iter().map(|r| r.method.as_str()).collect();
    assert_eq!(names, ["ac", "zero_fill", "tikhonov"]);
    for r in &rows {
        assert!(r.epsilon.is_finite() && r.epsilon >= 0.0);
        assert!(r.ssim_mu > 0.0 && r.ssim_mu <= 1.0 + 1e-12);
    }
    let ac = &rows[0];
    let zf = &rows[1];
    assert!(ac.epsilon < zf.epsilon, "ac {} vs zero fill {}", ac.epsilon, zf.epsilon);
    for f in ["truth.png", "ac.png", "ac.cstack", "ac_diagnostics.json", "reconstruct_report.json"] {
        assert!(root.join(f).exists(), "missing {f}");
    }
}

#[test]
fn reconstruct_reuses_simulated_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let cfg = write_config(dir.path(), SMALL);
    assert_ok(&run(&["simulate", "--config", cfg.to_str().unwrap()], &data));
    let out = run(
        &["reconstruct", "--config", cfg.to_str().unwrap(), "--input", data.to_str().unwrap(), "--methods", "zero_fill"],
        &dir.path().join("recon"),
    );
    assert_ok(&out);
    assert!(!dir.path().join("recon").join("kspace.cstack").exists());
    assert!(dir.path().join("recon").join("metrics.csv").exists());
}

#[test]
fn zero_fill_on_full_noiseless_data_matches_truth() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "phantom": {"kind": "shepp_logan", "n": 16, "m": 16},
            "coils": {"coils": 4, "normalize": true},
            "acs": 4, "rate": 1, "noise_sigma": 0.0, "methods": ["zero_fill"]
        }"#,
    );
    let out = run(&["reconstruct", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_ok(&out);
    let rows: Vec<MetricsRow> = read_csv(&dir.path().join("out").join("metrics.csv"));
    assert_eq!(rows.len(), 1);
    assert!(rows[0].epsilon < 1e-12, "epsilon {}", rows[0].epsilon);
    assert!((rows[0].ssim_mu - 1.0).abs() < 1e-12);
}

#[test]
fn metrics_command_scores_stacks() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("out");
    assert_ok(&run_small(&["reconstruct", "--methods", "zero_fill"], dir.path()));
    let truth = root.join("phantom.cstack");
    let est = root.join("zero_fill.cstack");
    let out = run(
        &["metrics", "--truth", truth.to_str().unwrap(), "--estimate", est.to_str().unwrap()],
        &dir.path().join("scores"),
    );
    assert_ok(&out);
    let scored: Vec<MetricsRow> = read_csv(&dir.path().join("scores").join("metrics.csv"));
    let reference: Vec<MetricsRow> = read_csv(&root.join("metrics.csv"));
    assert_eq!(scored[0].method, "zero_fill");
    assert!((scored[0].epsilon - reference[0].epsilon).abs() < 1e-12);
    assert!((scored[0].ssim_mu - reference[0].ssim_mu).abs() < 1e-12);
}

#[test]
fn svd_sweep_covers_every_rate_and_coil_count() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "phantom": {"kind": "shepp_logan", "n": 16, "m": 16},
            "coils": {"coils": 8, "normalize": true},
            "acs": 4, "rates": [2, 3, 4], "coil_counts": [1, 2, 4, 8]
        }"#,
    );
    let out = run(&["svd", "--config", cfg.to_str().unwrap()], &dir.path().join("out"));
    assert_ok(&out);
    let root = dir.path().join("out");
    let text = std::fs::read_to_string(root.join("svd_summary.csv")).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("label,kappa,null_dim,t,scan_time"));
    assert_eq!(lines.count(), 12);
    assert!(root.join("sigma_K8_R2.csv").exists());
    assert!(root.join("rsv_K1_R4.png").exists());
}

#[test]
fn svd_of_uniform_coil_on_full_data_is_perfectly_conditioned() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "phantom": {"kind": "shepp_logan", "n": 8, "m": 8},
            "coils": {"coils": 1, "uniform": true},
            "acs": 2, "rate": 1
        }"#,
    );
    assert_ok(&run(&["svd", "--config", cfg.to_str().unwrap()], &dir.path().join("out")));
    let text = std::fs::read_to_string(dir.path().join("out").join("svd_summary.csv")).unwrap();
    let row: Vec<&str> = text.lines().nth(1).unwrap().split(',').collect();
    assert!((row[1].parse::<f64>().unwrap() - 1.0).abs() < 1e-12);
    assert_eq!(row[2], "0");
}

#[test]
fn compare_single_point_gives_one_row_per_method() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_small(&["compare", "--scan-time", "0.5", "--seed", "3", "--methods", "zero_fill"], dir.path());
    assert_ok(&out);
    let rows: Vec<CompareRow> = read_csv(&dir.path().join("out").join("compare.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!((rows[0].scan_time, rows[0].seed), (0.5, 3));
    assert_eq!(rows[0].status, "ok");
}

#[test]
fn compare_aggregate_is_the_mean_over_seeds() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        r#"{
            "phantom": {"kind": "shepp_logan", "n": 16, "m": 16},
            "coils": {"coils": 4, "normalize": true},
            "acs": 4, "scheme": "random", "scan_times": [0.5, 0.75], "seeds": [0, 1, 2],
            "methods": ["zero_fill", "tikhonov"]
        }"#,
    );
    assert_ok(&run(&["compare", "--config", cfg.to_str().unwrap()], &dir.path().join("out")));
    let root = dir.path().join("out");
    let rows: Vec<CompareRow> = read_csv(&root.join("compare.csv"));
    let agg: Vec<AggregateRow> = read_csv(&root.join("compare_aggregate.csv"));
    assert_eq!(rows.len(), 12);
    assert_eq!(agg.len(), 4);
    for a in &agg {
        let group: Vec<&CompareRow> = rows.iter().filter(|r| r.method == a.method && r.scan_time == a.scan_time).collect();
        assert_eq!(group.len(), a.count);
        let eps = group.iter().map(|r| r.epsilon.unwrap()).sum::<f64>() / group.len() as f64;
        let ssim = group.iter().map(|r| r.ssim_mu.unwrap()).sum::<f64>() / group.len() as f64;
        assert!((eps - a.epsilon_mean).abs() < 1e-12);
        assert!((ssim - a.ssim_mu_mean).abs() < 1e-12);
    }
    assert!(root.join("epsilon_vs_scan_time.png").exists());
}

#[test]
fn output_root_defaults_to_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), SMALL);
    let env_out = dir.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_fredholm-mri"))
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env(OUT_ENV, &env_out)
        .output()
        .unwrap();
    assert_ok(&out);
    assert!(env_out.join("kspace.cstack").exists());
}
