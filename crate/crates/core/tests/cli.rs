use std::path::Path;
use std::process::{Command, Output};

use gmcf::io::commands::{execute_run, recompute_from_outputs, OUTPUT_DIR_ENV};
use gmcf::io::config::RunConfig;
use gmcf::io::output::{parse_series_csv, RunSummary, SERIES_FILE, SUMMARY_FILE, SUMMARY_SCHEMA};

const BIN: &str = env!("CARGO_BIN_EXE_gmcf");

const CONSTANT: &str = r#"
mode = "full_grid"

[domain]
kind = "flat_torus"
periods = [1.0, 1.0]
resolution = [8, 8]

[target]
kind = "flat_torus"
periods = [1.0, 1.0]

[initial_map]
family = "constant"
value = [0.25, 0.5]

[flow]
dt = 0.001
scheme = "ForwardEuler"
t_end = 0.1
output_stride = 10
"#;

const CAP: &str = r#"
mode = "equivariant"

[domain]
kind = "round_sphere"
radius = 1.0
resolution = [32]

[target]
kind = "round_sphere"
radius = 1.0

[initial_map]
family = "cap"
a = 0.5

[flow]
dt = "auto"
scheme = "ForwardEuler"
t_end = 50.0
output_stride = 100

[flow.stop_rules]
sup_lambda_below = 1e-3
"#;

fn gmcf(args: &[&str], env_out: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove(OUTPUT_DIR_ENV);
    if let Some(dir) = env_out {
        cmd.env(OUTPUT_DIR_ENV, dir);
    }
    cmd.output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn summary(dir: &Path) -> RunSummary {
    serde_json::from_str(&std::fs::read_to_string(dir.join(SUMMARY_FILE)).unwrap()).unwrap()
}

#[test]
fn constant_map_run_writes_expected_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", CONSTANT);
    let out = tmp.path().join("out");
    let o = gmcf(&["--output-dir", out.to_str().unwrap(), "run", &cfg], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let series = parse_series_csv(&std::fs::read_to_string(out.join(SERIES_FILE)).unwrap()).unwrap();
    // t_end / (dt · stride) + 1
    assert_eq!(series.len(), 11);
    assert!(series.min_omega.iter().all(|w| *w == 1.0));
    let s = summary(&out);
    assert_eq!(s.schema, SUMMARY_SCHEMA);
    assert!(s.success);
    assert_eq!(s.final_time, 0.1);
}

#[test]
fn cap_run_converges() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cap.toml", CAP);
    let out = tmp.path().join("out");
    let o = gmcf(&["--output-dir", out.to_str().unwrap(), "run", &cfg], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let s = summary(&out);
    assert_eq!(s.status.to_string(), "Converged");
    assert!(s.final_sup_lambda < 1e-3);
    assert!(s.flags.iter().all(|f| f.applicable && f.passed), "{:?}", s.flags);
}

#[test]
fn environment_sets_output_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", CONSTANT);
    let out = tmp.path().join("from-env");
    let o = gmcf(&["run", &cfg], Some(&out));
    assert_eq!(o.status.code(), Some(0));
    assert!(out.join(SUMMARY_FILE).exists());
}

#[test]
fn low_resolution_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &CONSTANT.replace("[8, 8]", "[4, 4]"));
    let o = gmcf(&["--output-dir", tmp.path().to_str().unwrap(), "run", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("resolution"));
}

#[test]
fn unknown_field_reports_line() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "c.toml", &CONSTANT.replace("scheme =", "schem ="));
    let o = gmcf(&["--output-dir", tmp.path().to_str().unwrap(), "run", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("schem") && err.contains("line"), "{err}");
}

#[test]
fn numerical_failure_exits_three_with_step() {
    let tmp = tempfile::tempdir().unwrap();
    let unstable = CONSTANT
        .replace("family = \"constant\"\nvalue = [0.25, 0.5]", "family = \"random_fourier\"\nseed = 1\nmax_mode = 2\namplitude = 0.05")
        .replace("dt = 0.001", "dt = 1.0")
        .replace("t_end = 0.1", "t_end = 1000.0");
    let cfg = write_config(tmp.path(), "u.toml", &unstable);
    let o = gmcf(&["--output-dir", tmp.path().to_str().unwrap(), "run", &cfg], None);
    assert_eq!(o.status.code(), Some(3), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(String::from_utf8_lossy(&o.stderr).contains("step"));
}

#[test]
fn verify_inequalities_small_and_invalid() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("o");
    let o = gmcf(&["--output-dir", out.to_str().unwrap(), "verify-inequalities", "--samples", "10"], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(out.join("inequalities.json")).unwrap()).unwrap();
    assert_eq!(v["schema"], "gmcf.inequalities/1");
    assert!(v["reports"].as_array().unwrap().iter().all(|r| r["worst_margin"].is_number()));

    let spec = r#"
[[jobs]]
check = "II_lower_bound"
[jobs.domain]
n = 2
m = 2
lambda_constraint = "DetRatioBelow"
epsilon = 0.0
k1 = 1.0
k2 = 1.0
sample_count = 10
seed = 1
"#;
    let path = write_config(tmp.path(), "spec.toml", spec);
    let o = gmcf(&["--output-dir", out.to_str().unwrap(), "verify-inequalities", &path], None);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn residual_ladder_rules() {
    let tmp = tempfile::tempdir().unwrap();
    let stationary = format!("{CONSTANT}\n[residual]\nlevels = 2\nsnapshot_time = 0.01\n");
    let cfg = write_config(tmp.path(), "r.toml", &stationary);
    let o = gmcf(&["--output-dir", tmp.path().to_str().unwrap(), "residual", &cfg], None);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let table = std::fs::read_to_string(tmp.path().join("residual.csv")).unwrap();
    assert_eq!(table.lines().count(), 3);

    let single = stationary.replace("levels = 2", "levels = 1");
    let cfg = write_config(tmp.path(), "r1.toml", &single);
    let o = gmcf(&["--output-dir", tmp.path().to_str().unwrap(), "residual", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn report_agrees_with_series() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "cap.toml", CAP);
    let out = tmp.path().join("out");
    assert_eq!(gmcf(&["--output-dir", out.to_str().unwrap(), "run", &cfg], None).status.code(), Some(0));
    let (s, flags) = recompute_from_outputs(&out).unwrap();
    assert_eq!(s.flags, flags);
    let o = gmcf(&["report", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("Converged"));

    // tampering with the series is detected
    let path = out.join(SERIES_FILE);
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let mut cols: Vec<String> = lines[3].split(',').map(String::from).collect();
    cols[1] = "0.1".into();
    lines[3] = cols.join(",");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    assert_eq!(gmcf(&["report", out.to_str().unwrap()], None).status.code(), Some(4));
}

#[test]
fn independent_reader_recovers_flags() {
    // min *Ω monotonicity read straight from the CSV text
    let cfg = RunConfig::from_toml(CAP).unwrap();
    let o = execute_run(&cfg).unwrap();
    let csv = gmcf::io::output::series_csv(&o.series);
    let min_omega: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    let tol = o.summary.tolerances.monotone;
    let monotone = min_omega.windows(2).all(|w| w[1] >= w[0] - tol);
    let flag = o.summary.flags.iter().find(|f| f.name == "monotone_min_omega").unwrap();
    assert_eq!(flag.passed, monotone);
    let pair: Vec<f64> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(3).unwrap().parse().unwrap())
        .collect();
    let area = o.summary.flags.iter().find(|f| f.name == "area_decreasing_preserved").unwrap();
    assert_eq!(area.applicable, pair[0] < 1.0);
}
