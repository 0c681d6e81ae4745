use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn mks(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mks"))
        .args(args)
        .env_remove("MKS_OUT_DIR")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn json(path: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn write(dir: &TempDir, name: &str, text: &str) -> PathBuf {
    let p = dir.path().join(name);
    fs::write(&p, text).unwrap();
    p
}

fn run(args: &[&str]) -> Output {
    let o = mks(args);
    assert_eq!(code(&o), 0, "{args:?}\n{}\n{}", stdout(&o), stderr(&o));
    o
}

const SIMULATE: &str = r#"
observers = [0.0, 0.05, 0.1]

[sim]
n_particles = 100
dt = 0.01
t_end = 0.1
seed = 11
neighbor_mode = { kind = "direct" }
mass = 6.0
cutoff = { a = 2.0 }
mollifier = { alpha = 0.15, n_particles = 100, profile = { kind = "gaussian", sigma = 1.0 } }

[initial]
total_mass = 6.0
shape = { kind = "gaussian", mean = { x = 0.0, y = 0.0 }, sigma = 1.0 }

[monitor]
grid = { half_extent = 6.0, n = 32 }
"#;

fn pde_config(mass: f64, sigma: f64, half_extent: f64, n: usize, dt: f64, t_end: f64, extra: &str) -> String {
    format!(
        r#"
[pde]
grid = {{ half_extent = {half_extent}, n = {n} }}
dt = {dt}
t_end = {t_end}
poisson_mode = "free_space_padded"
observers = [{t_end}]
{extra}

[initial]
total_mass = {mass}
shape = {{ kind = "gaussian", mean = {{ x = 0.0, y = 0.0 }}, sigma = {sigma} }}
"#
    )
}

#[test]
fn simulate_writes_a_self_contained_run_directory() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "sim.toml", SIMULATE);
    let out = dir.path().join("run");
    run(&["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    for f in ["manifest.json", "config.canonical", "data/trajectory.mks", "report/summary.json", "report/moments.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let m = json(out.join("manifest.json"));
    let canonical = fs::read(out.join("config.canonical")).unwrap();
    assert_eq!(m["config_digest"], mks_verify::digest::digest_bytes(&canonical));
    assert_eq!(m["seed"], 11);
    // Defaults are materialized.
    let c: Value = serde_json::from_slice(&canonical).unwrap();
    assert_eq!(c["beta"], 1.5);
    assert_eq!(c["sim"]["noise_scale"], 1.0);
    let traj = mks_core::io::load_trajectory(out.join("data/trajectory.mks")).unwrap();
    assert_eq!(traj.n_particles, 100);
    assert_eq!(traj.snapshots.len(), 3);
    assert_eq!(json(out.join("report/summary.json"))["digest"], m["summary_digest"]);
    assert!(m["diagnostics"]["dt_policy"].as_str().unwrap().contains("not coupled to N"));
    assert!(json(out.join("report/summary.json"))["moments"]["initial_norm"].as_f64().unwrap() > 0.0);
}

#[test]
fn reruns_reproduce_the_summary_digest() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "sim.toml", SIMULATE);
    let digest = |out: &str, extra: &[&str]| {
        let out = dir.path().join(out);
        let mut args = vec!["simulate", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        run(&args);
        json(out.join("manifest.json"))["summary_digest"].as_str().unwrap().to_string()
    };
    let a = digest("a", &["--threads", "1"]);
    assert_eq!(a, digest("b", &["--threads", "3"]));
    assert_ne!(a, digest("c", &["--seed", "12"]));
    // The canonical config is itself a valid config.
    let canonical = dir.path().join("a/config.canonical");
    let again = dir.path().join("d");
    run(&["simulate", "--config", canonical.to_str().unwrap(), "--out", again.to_str().unwrap()]);
    assert_eq!(json(again.join("manifest.json"))["summary_digest"], a.as_str());
}

#[test]
fn config_errors_exit_with_code_two() {
    let dir = TempDir::new().unwrap();
    let alpha = write(&dir, "alpha.toml", &SIMULATE.replace("alpha = 0.15", "alpha = 0.2"));
    let o = mks(&["simulate", "--config", alpha.to_str().unwrap(), "--out", dir.path().join("x").to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("1/(2+2·beta)"), "{}", stderr(&o));
    assert!(!dir.path().join("x").exists(), "no run directory for a rejected config");

    let typo = write(&dir, "typo.toml", &SIMULATE.replace("seed = 11", "seed = 11\nsede = 3"));
    let o = mks(&["simulate", "--config", typo.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sim") && stderr(&o).contains("sede"), "{}", stderr(&o));

    assert_eq!(code(&mks(&["simulate"])), 2);
    assert_eq!(code(&mks(&["simulate", "--bogus"])), 2);
}

#[test]
fn json_config_and_out_dir_env() {
    let dir = TempDir::new().unwrap();
    let text = r#"{
      "sim": {"n_particles": 50, "dt": 0.01, "t_end": 0.02, "seed": 3, "neighbor_mode": {"kind": "direct"},
              "mass": 1.0, "cutoff": {"a": 1.0},
              "mollifier": {"alpha": 0.1, "n_particles": 50, "profile": {"kind": "gaussian", "sigma": 1.0}}},
      "initial": {"total_mass": 1.0, "shape": {"kind": "gaussian", "mean": {"x": 0.0, "y": 0.0}, "sigma": 1.0}}
    }"#;
    let cfg = write(&dir, "sim.json", text);
    let root = dir.path().join("root");
    let o = Command::new(env!("CARGO_BIN_EXE_mks"))
        .args(["simulate", "--config", cfg.to_str().unwrap()])
        .env("MKS_OUT_DIR", &root)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let runs: Vec<_> = fs::read_dir(&root).unwrap().map(|e| e.unwrap().path()).collect();
    assert_eq!(runs.len(), 1);
    assert!(runs[0].file_name().unwrap().to_str().unwrap().starts_with("simulate-"));
    assert!(runs[0].join("manifest.json").is_file());
}

#[test]
fn solve_pde_reports_the_dichotomy() {
    let dir = TempDir::new().unwrap();
    let sub = write(&dir, "sub.toml", &pde_config(4.0 * std::f64::consts::PI, 1.0, 8.0, 64, 0.01, 0.5, ""));
    let out = dir.path().join("sub");
    run(&["solve-pde", "--config", sub.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let s = json(out.join("report/summary.json"));
    assert_eq!(s["blew_up"], false);
    assert!(s["a0_estimate"].as_f64().unwrap() > 0.0);
    assert!(out.join("data/rho_0000.mkf").is_file());
    assert!(out.join("report/peak_linf.csv").is_file());

    let sup = write(&dir, "sup.toml", &pde_config(10.0 * std::f64::consts::PI, 0.3, 4.0, 128, 0.002, 2.0, ""));
    let out = dir.path().join("sup");
    let o = run(&["solve-pde", "--config", sup.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(stderr(&o).contains("8π"), "supercritical mass should warn: {}", stderr(&o));
    let s = json(out.join("report/summary.json"));
    assert_eq!(s["blew_up"], true);
    assert!(s["t_detected"].as_f64().unwrap() < 2.0);
}

#[test]
fn low_cutoff_warns_and_estimate_a0_suggests_a_level() {
    let dir = TempDir::new().unwrap();
    let mass = 4.0 * std::f64::consts::PI;
    let base = pde_config(mass, 1.0, 8.0, 64, 0.01, 0.3, "");
    let cfg = write(&dir, "a0.toml", &base);
    let out = dir.path().join("a0");
    let o = run(&["estimate-a0", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(stdout(&o).contains("A0 estimate"));
    let r = json(out.join("report/a0.json"));
    let a0 = r["a0_estimate"].as_f64().unwrap();
    assert!((r["suggested_cutoff"].as_f64().unwrap() - 1.1 * a0).abs() < 1e-12);

    let low = write(&dir, "low.toml", &pde_config(mass, 1.0, 8.0, 64, 0.01, 0.3, &format!("cutoff = {{ a = {} }}", 0.5 * a0)));
    let out = dir.path().join("low");
    let o = run(&["solve-pde", "--config", low.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(stderr(&o).contains("below the uncut A0"), "{}", stderr(&o));
    let warnings = json(out.join("manifest.json"))["diagnostics"]["warnings"].to_string();
    assert!(warnings.contains("below the uncut A0"));

    let ok = write(&dir, "ok.toml", &pde_config(mass, 1.0, 8.0, 64, 0.01, 0.3, &format!("cutoff = {{ a = {} }}", 1.1 * a0)));
    let o = run(&["solve-pde", "--config", ok.to_str().unwrap(), "--out", dir.path().join("ok").to_str().unwrap()]);
    assert!(!stderr(&o).contains("below the uncut A0"));
}

fn converge_config(gamma: f64) -> String {
    format!(
        r#"
n_ladder = [200, 800]
replicas = 4
beta = 1.5
gamma = {gamma}
local_radius = 3.0
mass = 6.0
cutoff_margin = 0.1
observers = [0.0, 0.125, 0.25]

[sim]
n_particles = 200
dt = 0.01
t_end = 0.25
seed = 5
neighbor_mode = {{ kind = "direct" }}
mass = 6.0
cutoff = {{ a = 1.0 }}
mollifier = {{ alpha = 0.15, n_particles = 200, profile = {{ kind = "gaussian", sigma = 1.0 }} }}

[initial]
total_mass = 6.0
shape = {{ kind = "gaussian", mean = {{ x = 0.0, y = 0.0 }}, sigma = 1.0 }}

[pde]
grid = {{ half_extent = 7.0, n = 64 }}
dt = 0.005
t_end = 0.25
"#
    )
}

#[test]
fn converge_writes_the_report() {
    let dir = TempDir::new().unwrap();
    let cfg = write(&dir, "conv.toml", &converge_config(1.1));
    let out = dir.path().join("conv");
    let o = run(&["converge", "--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap()]);
    assert!(stdout(&o).contains("monotone within 1 stderr: local true, weak true"), "{}", stdout(&o));
    let csv = fs::read_to_string(out.join("report/convergence.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("N,metric,mean,stderr"));
    assert!(lines.all(|l| l.split(',').count() == 4));
    let rep = json(out.join("report/convergence.json"));
    assert_eq!(rep["rungs"].as_array().unwrap().len(), 2);

    let bad = write(&dir, "bad.toml", &converge_config(1.5));
    let o = mks(&["converge", "--config", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("gamma"), "{}", stderr(&o));
}

#[test]
fn verify_passes_and_names_a_corrupted_kernel() {
    let dir = TempDir::new().unwrap();
    let out = dir.path().join("ok");
    run(&["verify", "--only", "3,4", "--out", out.to_str().unwrap()]);
    let xml = fs::read_to_string(out.join("report/verify.junit.xml")).unwrap();
    assert!(xml.contains("tests=\"2\" failures=\"0\""));

    let o = mks(&["verify", "--only", "1", "--kernel-scale", "0.5", "--out", dir.path().join("bad").to_str().unwrap()]);
    assert_eq!(code(&o), 1);
    assert!(stderr(&o).contains("01-kernel-fixtures"), "{}", stderr(&o));
    assert!(stdout(&o).contains("green mismatch at"), "{}", stdout(&o));
}
