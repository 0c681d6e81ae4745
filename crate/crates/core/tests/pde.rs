use std::f64::consts::PI;

use mks_core::analysis::inequalities::{grad_c_constant_over_gaussians, grad_c_ratio, nash_ratio, NASH_CONSTANT};
use mks_core::grid::{Field, GridSpec};
use mks_core::kernel::CutoffParams;
use mks_core::pde::{cutoff_from_a0, gaussian_density, solve, BlowupTrigger, PdeConfig, PoissonMode};
use mks_core::Vec2;

fn config(n: usize, dt: f64, t_end: f64, observers: Vec<f64>) -> PdeConfig {
    let mut c = PdeConfig::new(GridSpec::new(8.0, n).unwrap(), dt, t_end);
    c.poisson_mode = PoissonMode::FreeSpacePadded;
    c.observers = observers;
    c
}

fn subcritical(n: usize) -> Field {
    gaussian_density(GridSpec::new(8.0, n).unwrap(), Vec2::ZERO, 1.0, 4.0 * PI)
}

#[test]
fn subcritical_run_conserves_mass_and_stays_positive() {
    let cfg = config(128, 0.005, 0.5, vec![0.25, 0.5]);
    let sol = solve(&cfg, &subcritical(128)).unwrap();
    assert!(!sol.report.blew_up);
    assert!(sol.diagnostics.max_mass_drift <= 1e-8, "{:e}", sol.diagnostics.max_mass_drift);
    assert!(sol.diagnostics.worst_undershoot >= -1e-6);
    for s in &sol.snapshots {
        assert!(s.rho.min() >= -1e-6 * s.rho.max());
    }
}

#[test]
fn grad_c_bound_holds_along_the_flow() {
    let g = GridSpec::new(8.0, 128).unwrap();
    let c = grad_c_constant_over_gaussians(g, &[0.5, 0.8, 1.2], &[1.0, 0.5, 0.25], 1.0);
    let cfg = config(128, 0.005, 1.0, vec![0.0, 0.5, 1.0]);
    let sol = solve(&cfg, &subcritical(128)).unwrap();
    for s in &sol.snapshots {
        let r = grad_c_ratio(&s.rho, PoissonMode::FreeSpacePadded, 1.0);
        assert!(r <= c, "t = {}: {r} > {c}", s.t);
        assert!(nash_ratio(&s.rho) <= NASH_CONSTANT);
    }
}

#[test]
fn refinement_changes_the_final_snapshot_little() {
    let refinement_tol = 2e-3;
    let coarse = solve(&config(128, 0.004, 0.5, vec![0.5]), &subcritical(128)).unwrap();
    let fine = solve(&config(256, 0.002, 0.5, vec![0.5]), &subcritical(256)).unwrap();
    let (a, b) = (&coarse.snapshots[0].rho, &fine.snapshots[0].rho);
    let peak = b.max_abs();
    let mut worst: f64 = 0.0;
    for j in 0..128 {
        for k in 0..128 {
            worst = worst.max((a.at(j, k) - b.at(2 * j, 2 * k)).abs());
        }
    }
    assert!(worst <= refinement_tol * peak, "{:e}", worst / peak);
}

#[test]
fn supercritical_concentrated_mass_blows_up() {
    let g = GridSpec::new(4.0, 128).unwrap();
    let mut cfg = PdeConfig::new(g, 0.002, 2.0);
    cfg.poisson_mode = PoissonMode::FreeSpacePadded;
    let sol = solve(&cfg, &gaussian_density(g, Vec2::ZERO, 0.3, 10.0 * PI)).unwrap();
    assert!(sol.report.blew_up);
    assert!(sol.report.t_detected.unwrap() < 2.0);
    assert!(sol.report.trigger.is_some());
    assert_ne!(sol.report.trigger, Some(BlowupTrigger::MassViolation));
}

#[test]
fn cutoff_above_a0_leaves_the_solution_unchanged() {
    let observers = vec![0.1, 0.2, 0.3];
    let uncut = solve(&config(64, 0.005, 0.3, observers.clone()), &subcritical(64)).unwrap();
    let mut cfg = config(64, 0.005, 0.3, observers);
    cfg.cutoff = Some(cutoff_from_a0(uncut.a0_estimate, 0.1).unwrap());
    let cut = solve(&cfg, &subcritical(64)).unwrap();
    for (a, b) in uncut.snapshots.iter().zip(&cut.snapshots) {
        let peak = a.rho.max_abs();
        let dev = a.rho.values.iter().zip(&b.rho.values).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
        assert!(dev <= 1e-6 * peak, "t = {}: {:e}", a.t, dev / peak);
    }
    // A low cutoff genuinely changes the flow.
    let mut low = config(64, 0.005, 0.3, vec![0.3]);
    low.cutoff = Some(CutoffParams::new(0.3 * uncut.a0_estimate).unwrap());
    let clipped = solve(&low, &subcritical(64)).unwrap();
    let peak = uncut.snapshots[2].rho.max();
    assert!((clipped.snapshots[0].rho.max() - peak).abs() > 1e-4 * peak);
}
