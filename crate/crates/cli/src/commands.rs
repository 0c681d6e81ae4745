use std::path::{Path, PathBuf};

use mks_core::analysis::{moment_monitor, ConvergenceConfig, MomentOptions};
use mks_core::io::{save_field, save_trajectory, write_field_csv, write_series_csv, TrajectoryRecord};
use mks_core::particles::simulate;
use mks_core::pde::{solve, PdeSolution};
use mks_verify::digest::{digest_bytes, digest_convergence, digest_pde, digest_snapshots};
use mks_verify::{run_suite, VerifyOptions, DEFAULT_SEED};
use serde::Serialize;
use serde_json::json;

use crate::config::{self, canonical, PdeRunConfig, SimulateConfig};
use crate::error::{runtime, CliError, CliResult};
use crate::run::{now, Diagnostics, RunDir, RunManifest};

/// Options shared by every subcommand.
pub struct Common {
    pub config: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: usize,
}

impl Common {
    fn config_path(&self) -> CliResult<&Path> {
        self.config
            .as_deref()
            .ok_or_else(|| CliError::Config("--config PATH is required".into()))
    }
}

const DT_POLICY: &str =
    "Euler-Maruyama with the configured dt, shrunk per observation gap to divide it exactly; dt is not coupled to N";

fn warn_all(warnings: &[String]) {
    for w in warnings {
        eprintln!("warning: {w}");
    }
}

fn csv(write: impl FnOnce(&mut Vec<u8>) -> mks_core::Result<()>) -> CliResult<Vec<u8>> {
    let mut buf = Vec::new();
    write(&mut buf).map_err(runtime)?;
    Ok(buf)
}

fn pretty(v: &impl Serialize) -> String {
    serde_json::to_string_pretty(v).expect("report serializes") + "\n"
}

/// Starts a run: writes `config.canonical` and returns the run directory,
/// the config digest and the start time.
fn open_run<T: Serialize>(common: &Common, command: &str, cfg: &T) -> CliResult<(RunDir, String, String)> {
    let started = now();
    let (text, digest) = canonical(cfg);
    let mut run = RunDir::create(common.out.as_deref(), command, &digest)?;
    run.write("config.canonical", &text)?;
    Ok((run, digest, started))
}

struct Finish<'a> {
    command: &'a str,
    digest: String,
    seed: u64,
    threads: usize,
    started: String,
    summary_digest: String,
    diagnostics: Diagnostics,
}

fn close_run(run: &RunDir, f: Finish) -> CliResult<RunManifest> {
    let m = RunManifest {
        command: f.command.into(),
        artifact_version: env!("CARGO_PKG_VERSION").into(),
        config_digest: f.digest,
        seed: f.seed,
        threads: f.threads,
        started: f.started,
        finished: now(),
        outputs: run.outputs(),
        summary_digest: f.summary_digest,
        diagnostics: f.diagnostics,
    };
    run.write_manifest(&m)?;
    println!("run directory: {}", run.root.display());
    println!("summary digest: {}", m.summary_digest);
    Ok(m)
}

pub fn cmd_simulate(common: &Common) -> CliResult<RunManifest> {
    let mut cfg: SimulateConfig = config::load(common.config_path()?)?;
    if let Some(s) = common.seed {
        cfg.sim.seed = s;
    }
    let warnings = cfg.validate()?;
    warn_all(&warnings);
    let (mut run, digest, started) = open_run(common, "simulate", &cfg)?;
    let traj = simulate(&cfg.sim, &cfg.initial, &cfg.observers()).map_err(runtime)?;
    save_trajectory(run.path("data/trajectory.mks"), &TrajectoryRecord::from(&traj)).map_err(runtime)?;
    let drift: Vec<(f64, f64)> = traj.steps.iter().map(|s| (s.t, s.max_drift)).collect();
    run.write("report/max_drift.csv", csv(|w| write_series_csv(w, ("t", "max_drift"), &drift))?)?;

    let summary_digest = digest_snapshots(&traj.snapshots);
    let mut boundary = None;
    let mut moments = None;
    if let Some(m) = &cfg.monitor {
        let opts = MomentOptions {
            beta: cfg.beta,
            p: m.p,
            ..MomentOptions::default()
        };
        let series =
            moment_monitor(&traj.snapshots, &cfg.sim.mollifier, m.grid, cfg.sim.mass, opts).map_err(runtime)?;
        let rows: Vec<(f64, f64)> = series.times.iter().copied().zip(series.norm_p.iter().copied()).collect();
        run.write("report/moments.csv", csv(|w| write_series_csv(w, ("t", "norm_p"), &rows))?)?;
        let edge = 0.9 * m.grid.half_extent;
        let outside = traj
            .snapshots
            .iter()
            .map(|s| s.positions.iter().filter(|p| p.x.abs() > edge || p.y.abs() > edge).count() as f64 / s.positions.len() as f64)
            .fold(0.0f64, f64::max);
        boundary = Some(outside);
        let initial = (series.times.first() == Some(&0.0)).then(|| series.norm_p[0].powf(1.0 / m.p));
        moments = Some(json!({
            "initial_norm": initial,
            "max_norm": series.max_norm(m.p),
            "increment_seminorm": series.increment_seminorm,
        }));
    }
    let summary = json!({
        "n_particles": traj.n_particles,
        "dt": traj.dt,
        "t_end": cfg.sim.t_end,
        "seed": traj.seed,
        "times": traj.times(),
        "steps": traj.steps.len(),
        "max_drift": drift.iter().fold(0.0f64, |m, r| m.max(r.1)),
        "moments": moments,
        "digest": summary_digest,
        "wall_seconds": traj.wall_seconds,
    });
    run.write("report/summary.json", pretty(&summary))?;
    close_run(
        &run,
        Finish {
            command: "simulate",
            digest,
            seed: cfg.sim.seed,
            threads: common.threads,
            started,
            summary_digest,
            diagnostics: Diagnostics {
                boundary_mass: boundary,
                dt_adjustments: traj.dt_adjustments.clone(),
                dt_policy: Some(DT_POLICY.into()),
                warnings,
            },
        },
    )
}

fn pde_diagnostics(sol: &PdeSolution, dt: f64, warnings: Vec<String>) -> Diagnostics {
    let d = &sol.diagnostics;
    Diagnostics {
        boundary_mass: Some(d.boundary_mass),
        dt_adjustments: if d.steps > 0 && d.min_dt < dt { vec![d.min_dt] } else { Vec::new() },
        dt_policy: None,
        warnings,
    }
}

fn write_pde_outputs(run: &mut RunDir, sol: &PdeSolution) -> CliResult<()> {
    for (i, s) in sol.snapshots.iter().enumerate() {
        save_field(run.path(&format!("data/rho_{i:04}.mkf")), &s.rho).map_err(runtime)?;
    }
    if let Some(last) = sol.snapshots.last() {
        run.write("report/rho_last.csv", csv(|w| write_field_csv(w, &last.rho))?)?;
    }
    let peaks = &sol.report.peak_linf_history;
    run.write("report/peak_linf.csv", csv(|w| write_series_csv(w, ("t", "peak_linf"), peaks))?)?;
    Ok(())
}

pub fn cmd_solve_pde(common: &Common) -> CliResult<RunManifest> {
    let cfg: PdeRunConfig = config::load(common.config_path()?)?;
    let mut warnings = cfg.validate()?;
    let (mut run, digest, started) = open_run(common, "solve-pde", &cfg)?;
    let rho0 = cfg.rho0();
    let sol = solve(&cfg.pde, &rho0).map_err(runtime)?;
    let mut uncut_a0 = None;
    if let Some(c) = cfg.pde.cutoff {
        let mut plain = cfg.pde.clone();
        plain.cutoff = None;
        let a0 = solve(&plain, &rho0).map_err(runtime)?.a0_estimate;
        uncut_a0 = Some(a0);
        if c.a < a0 {
            warnings.push(format!(
                "cutoff level A = {} is below the uncut A0 estimate {a0:.6}: the convergence result assumes A >= A0, so the cut and uncut solutions may differ",
                c.a
            ));
        }
    }
    warn_all(&warnings);
    write_pde_outputs(&mut run, &sol)?;
    let summary_digest = digest_pde(&sol);
    let r = &sol.report;
    let summary = json!({
        "blew_up": r.blew_up,
        "t_detected": r.t_detected,
        "trigger": r.trigger,
        "a0_estimate": sol.a0_estimate,
        "uncut_a0_estimate": uncut_a0,
        "snapshot_times": sol.snapshots.iter().map(|s| s.t).collect::<Vec<_>>(),
        "diagnostics": sol.diagnostics,
        "digest": summary_digest,
    });
    run.write("report/summary.json", pretty(&summary))?;
    println!(
        "blew_up: {}{}; A0 estimate: {:.6}",
        r.blew_up,
        r.t_detected.map(|t| format!(" at t = {t}")).unwrap_or_default(),
        sol.a0_estimate
    );
    close_run(
        &run,
        Finish {
            command: "solve-pde",
            digest,
            seed: common.seed.unwrap_or(0),
            threads: common.threads,
            started,
            summary_digest,
            diagnostics: pde_diagnostics(&sol, cfg.pde.dt, warnings),
        },
    )
}

pub fn cmd_estimate_a0(common: &Common) -> CliResult<RunManifest> {
    let mut cfg: PdeRunConfig = config::load(common.config_path()?)?;
    let mut warnings = cfg.validate()?;
    if cfg.pde.cutoff.take().is_some() {
        warnings.push("pde.cutoff ignored: A0 is estimated on the uncut equation".into());
    }
    warn_all(&warnings);
    let (mut run, digest, started) = open_run(common, "estimate-a0", &cfg)?;
    let sol = solve(&cfg.pde, &cfg.rho0()).map_err(runtime)?;
    if sol.report.blew_up {
        warnings.push(format!(
            "the uncut solution blew up at t = {:?}; A0 is only a lower bound up to that time",
            sol.report.t_detected
        ));
    }
    write_pde_outputs(&mut run, &sol)?;
    let suggested = (1.0 + cfg.a0_margin) * sol.a0_estimate;
    let summary = json!({
        "a0_estimate": sol.a0_estimate,
        "margin": cfg.a0_margin,
        "suggested_cutoff": suggested,
        "blew_up": sol.report.blew_up,
    });
    run.write("report/a0.json", pretty(&summary))?;
    println!("A0 estimate: {:.6}; suggested cutoff A = {suggested:.6}", sol.a0_estimate);
    close_run(
        &run,
        Finish {
            command: "estimate-a0",
            digest,
            seed: common.seed.unwrap_or(0),
            threads: common.threads,
            started,
            summary_digest: digest_pde(&sol),
            diagnostics: pde_diagnostics(&sol, cfg.pde.dt, warnings),
        },
    )
}

pub fn cmd_converge(common: &Common) -> CliResult<RunManifest> {
    let mut cfg: ConvergenceConfig = config::load(common.config_path()?)?;
    if let Some(s) = common.seed {
        cfg.sim.seed = s;
    }
    let warnings = config::validate_converge(&cfg)?;
    warn_all(&warnings);
    let (mut run, digest, started) = open_run(common, "converge", &cfg)?;
    let report = mks_core::analysis::convergence_study(&cfg).map_err(runtime)?;
    run.write("report/convergence.csv", report.to_csv())?;
    run.write("report/convergence.json", report.to_json())?;
    for r in &report.rungs {
        println!(
            "N = {:6}: local {:.4e} ± {:.1e}, weak {:.4e} ± {:.1e}, moment {:.4e}",
            r.n, r.local.mean, r.local.stderr, r.weak.mean, r.weak.stderr, r.moment.mean
        );
    }
    println!(
        "monotone within 1 stderr: local {}, weak {}",
        report.monotone(|r| r.local, 1.0),
        report.monotone(|r| r.weak, 1.0)
    );
    let truncated: usize = report.rungs.iter().flat_map(|r| &r.replicas).map(|m| m.truncated).sum();
    let mut warnings = warnings;
    if truncated > 0 {
        warnings.push(format!("{truncated} particles fell outside the comparison grid over all replicas"));
    }
    close_run(
        &run,
        Finish {
            command: "converge",
            digest,
            seed: cfg.sim.seed,
            threads: common.threads,
            started,
            summary_digest: digest_convergence(&report),
            diagnostics: Diagnostics {
                boundary_mass: None,
                dt_adjustments: Vec::new(),
                dt_policy: Some(DT_POLICY.into()),
                warnings,
            },
        },
    )
}

#[derive(Serialize)]
struct VerifyConfig {
    seed: u64,
    kernel_scale: f64,
    only: Option<Vec<usize>>,
}

pub fn cmd_verify(common: &Common, only: Option<Vec<usize>>, kernel_scale: f64) -> CliResult<RunManifest> {
    let opts = VerifyOptions {
        seed: common.seed.unwrap_or(DEFAULT_SEED),
        kernel_scale,
        only,
    };
    let vc = VerifyConfig {
        seed: opts.seed,
        kernel_scale,
        only: opts.only.clone(),
    };
    let (mut run, digest, started) = open_run(common, "verify", &vc)?;
    let suite = run_suite(opts, |r| {
        println!("[{}] {} ({:.1}s): {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.seconds, r.detail);
    });
    run.write("report/verify.txt", suite.to_text())?;
    run.write("report/verify.junit.xml", suite.to_junit_xml())?;
    let verdicts: String = suite.cases.iter().map(|c| format!("{}:{}\n", c.name, c.passed)).collect();
    let manifest = close_run(
        &run,
        Finish {
            command: "verify",
            digest,
            seed: vc.seed,
            threads: common.threads,
            started,
            summary_digest: digest_bytes(verdicts.as_bytes()),
            diagnostics: Diagnostics::default(),
        },
    )?;
    let failed: Vec<&str> = suite.failures().map(|c| c.name.as_str()).collect();
    if failed.is_empty() {
        Ok(manifest)
    } else {
        Err(CliError::Verify(failed.join(", ")))
    }
}
