use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_qnd-squeeze"))
}

fn run(args: &[&str], dir: &Path) -> Output {
    bin().args(args).current_dir(dir).output().unwrap()
}

fn data_lines(text: &str) -> Vec<&str> {
    text.lines().filter(|l| !l.starts_with('#')).collect()
}

const PURE: &str = r#"
[system]
n_atoms = 40

[initial]
theta = 0.0
phi = 0.0

[light]
intensity_l = 9.0
intensity_r = 9.0

[pure]
gt_times_sqrt_n = 0.05
"#;

#[test]
fn pure_writes_pmf_and_grid_with_header() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), PURE).unwrap();
    let out = run(&["pure", "--config", "c.toml", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pmf = std::fs::read_to_string(dir.path().join("res/conditional_pmf.csv")).unwrap();
    assert!(pmf.starts_with("# qnd-squeeze "));
    assert!(pmf.contains("# n_atoms = 40"));
    assert!(pmf.contains("# outcome = \"9,9\""));
    let rows = data_lines(&pmf);
    assert_eq!(rows[0], "k,p_exact,p_gaussian");
    assert_eq!(rows.len(), 42);
    let total: f64 = rows[1..].iter().map(|r| r.split(',').nth(1).unwrap().parse::<f64>().unwrap()).sum();
    assert!((total - 1.0).abs() < 1e-12);

    let grid = std::fs::read_to_string(dir.path().join("res/detection_grid.csv")).unwrap();
    let rows = data_lines(&grid);
    assert_eq!(rows[0], "n_c,n_d,p");
    assert_eq!(rows.len(), 1 + 40 * 40);
    assert!(!grid.contains('\r'));
}

#[test]
fn zero_coupling_pmf_is_binomial_prior() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = PURE.replace("gt_times_sqrt_n = 0.05", "gt = 0.0").replace("theta = 0.0", "theta = 1.0");
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let out = run(&["pure", "--config", "c.toml", "--out", "res"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let pmf = std::fs::read_to_string(dir.path().join("res/conditional_pmf.csv")).unwrap();
    let p: Vec<f64> = data_lines(&pmf)[1..]
        .iter()
        .map(|r| r.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let n = 40usize;
    let q = p.iter().enumerate().map(|(k, x)| k as f64 * x).sum::<f64>() / n as f64;
    let mut binom = 1.0f64;
    for (k, pk) in p.iter().enumerate() {
        let expected = binom * q.powi(k as i32) * (1.0 - q).powi((n - k) as i32);
        assert!((pk - expected).abs() < 1e-12, "k = {k}: {pk} vs {expected}");
        binom = binom * (n - k) as f64 / (k + 1) as f64;
    }
}

#[test]
fn outputs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), PURE).unwrap();
    for out in ["a", "b"] {
        let o = run(&["pure", "--config", "c.toml", "--out", out, "--seedless"], dir.path());
        assert!(o.status.success());
    }
    for f in ["conditional_pmf.csv", "detection_grid.csv"] {
        let a = std::fs::read(dir.path().join("a").join(f)).unwrap();
        let b = std::fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
}

#[test]
fn unknown_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), format!("{PURE}\n[time]\ndtt = 0.1\n")).unwrap();
    let out = run(&["pure", "--config", "c.toml"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("dtt"));
}

#[test]
fn unreachable_outcome_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("c.toml"), PURE).unwrap();
    let out = run(&["pure", "--config", "c.toml", "--outcome", "0,400", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unreachable outcome"));
}

#[test]
fn master_rejects_coarse_step() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[system]\nn_atoms = 10\ngamma = 2.0\n[time]\nt_max = 1.0\ndt = 0.5\n";
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let out = run(&["master", "--config", "c.toml", "--out", "res"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("exceeds"));
}

#[test]
fn master_timeseries_columns_and_sampling() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = "[system]\nn_atoms = 6\ng = 0.05\ngamma = 0.01\n[time]\nt_max = 1.0\ndt = 0.01\nsample_stride = 30\n";
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let out = run(&["master", "--config", "c.toml", "--out", "res", "--dephasing", "literal"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ts = std::fs::read_to_string(dir.path().join("res/timeseries.csv")).unwrap();
    assert!(ts.contains("# dephasing = \"literal\""));
    let rows = data_lines(&ts);
    assert_eq!(
        rows[0],
        "t,omega_t,jx_mean,jy_mean,jz_mean,jx_var_norm,jy_var_norm,jz_var_norm,trace_err,herm_err"
    );
    // steps 0, 30, 60, 90 and the final 100
    assert_eq!(rows.len(), 6);
    assert!(rows[5].starts_with("1.0000000000000000e0,"));
}

#[test]
fn validate_default_passes() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["validate", "--out", "v"], dir.path());
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    let text = std::fs::read_to_string(dir.path().join("v/validation_report.txt")).unwrap();
    assert!(text.lines().last().unwrap().starts_with("PASS overall"));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v/validation_report.json")).unwrap()).unwrap();
    assert_eq!(json["passed"], true);
    assert!(json["reports"].as_array().unwrap().len() > 10);
}

#[test]
fn validate_with_injected_fault_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["validate", "--out", "v", "--suites", "stirling", "--inject-fault"], dir.path());
    assert_eq!(out.status.code(), Some(3));
    let text = std::fs::read_to_string(dir.path().join("v/validation_report.txt")).unwrap();
    assert!(text.contains("FAIL fault/"));
}

#[test]
fn validate_empty_selection_passes_with_empty_report() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["validate", "--out", "v", "--suites="], dir.path());
    assert_eq!(out.status.code(), Some(0));
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("v/validation_report.json")).unwrap()).unwrap();
    assert!(json["reports"].as_array().unwrap().is_empty());
}

#[test]
fn bad_arguments_use_usage_exit_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["pure"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["validate", "--suites", "bogus"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn qfunc_writes_grid_and_lobes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{PURE}\n[qgrid]\nn_theta = 24\nn_phi = 20\n");
    std::fs::write(dir.path().join("c.toml"), cfg).unwrap();
    let out = run(&["qfunc", "--config", "c.toml", "--out", "q", "--source", "initial"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let grid = std::fs::read_to_string(dir.path().join("q/qgrid_initial.csv")).unwrap();
    assert_eq!(data_lines(&grid).len(), 1 + 24 * 20);
    let lobes = std::fs::read_to_string(dir.path().join("q/qgrid_initial_lobes.csv")).unwrap();
    let rows = data_lines(&lobes);
    assert_eq!(rows.len(), 2);
    let theta: f64 = rows[1].split(',').nth(2).unwrap().parse().unwrap();
    assert!(theta < 0.3);
}
