//! Martingale residual of the Itô identity for `⟨g^N_t, φ⟩`.
//!
//! With `ψ = V^N ∗ φ` and `S^N = (M/N) Σ δ_{Xⁱ}`,
//!
//! ```text
//! R(φ) = ⟨g_T, φ⟩ − ⟨g_0, φ⟩ − ∫ ⟨S_s, ∇ψ · b⟩ ds − σ² ∫ ⟨g_s, Δφ⟩ ds
//! ```
//!
//! is the terminal value of a mean-zero martingale, up to the time
//! quadrature (trapezoidal on the step mesh). `σ` is the noise scale, so a
//! frozen-noise run carries no generator term.

use rayon::prelude::*;
use serde::Serialize;

use super::battery::{SmoothedTest, TestFunction};
use super::report::Stat;
use crate::error::{invalid, Result};
use crate::kernel::Profile;
use crate::particles::{run_with_model, sample_initial, DriftModel, InitialDensity, Interaction, SimParams};
use crate::rng::child_seed;
use crate::vec2::Vec2;

/// `|z|` above which a residual is declared biased.
pub const Z_THRESHOLD: f64 = 4.0;

#[derive(Debug, Clone, Serialize)]
pub struct ResidualStat {
    pub name: &'static str,
    pub stat: Stat,
    pub z: f64,
    pub threshold: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ItoReport {
    pub n_particles: usize,
    pub replicas: usize,
    pub dt: f64,
    pub t_end: f64,
    pub per_function: Vec<ResidualStat>,
    /// Raw residuals, `[replica][function]`.
    #[serde(skip)]
    pub samples: Vec<Vec<f64>>,
}

impl ItoReport {
    pub fn passed(&self) -> bool {
        self.per_function.iter().all(|r| r.passed)
    }
}

/// `(⟨S, ψ⟩, ⟨S, ∇ψ·b⟩, ⟨S, Δψ⟩)` for each test function.
fn pairings(tests: &[SmoothedTest], positions: &[Vec2], drifts: &[Vec2], weight: f64) -> Vec<[f64; 3]> {
    tests
        .iter()
        .map(|t| {
            let mut acc = [0.0; 3];
            for (x, b) in positions.iter().zip(drifts) {
                let (v, g, l) = t.jet(*x);
                acc[0] += v;
                acc[1] += g.dot(*b);
                acc[2] += l;
            }
            acc.map(|a| a * weight)
        })
        .collect()
}

/// Residuals of one trajectory driven by `model`.
pub fn residuals_for_run<M: DriftModel + ?Sized>(
    params: &SimParams,
    density: &InitialDensity,
    model: &M,
    tests: &[SmoothedTest],
    seed: u64,
) -> Result<Vec<f64>> {
    let state = sample_initial(density, params.n_particles, seed)?;
    let weight = params.mass / params.n_particles as f64;
    let sigma2 = params.noise_scale * params.noise_scale;
    let k = tests.len();
    let mut first: Option<Vec<[f64; 3]>> = None;
    let mut prev: Option<(Vec<[f64; 3]>, f64)> = None;
    let mut drift_int = vec![0.0; k];
    let mut gen_int = vec![0.0; k];
    let (last, _, _, _) = run_with_model(
        state,
        model,
        params.dt,
        params.t_end,
        params.noise_scale,
        &[],
        |st, b, h| {
            let now = pairings(tests, &st.positions, b, weight);
            if let Some((p, hp)) = &prev {
                for i in 0..k {
                    drift_int[i] += 0.5 * hp * (p[i][1] + now[i][1]);
                    gen_int[i] += 0.5 * hp * (p[i][2] + now[i][2]);
                }
            }
            if first.is_none() {
                first = Some(now.clone());
            }
            prev = Some((now, h));
        },
    )?;
    let b_end = model.drift(&last.positions, last.t);
    let end = pairings(tests, &last.positions, &b_end, weight);
    let (p, hp) = prev.expect("at least one step");
    let start = first.expect("at least one step");
    Ok((0..k)
        .map(|i| {
            let d = drift_int[i] + 0.5 * hp * (p[i][1] + end[i][1]);
            let g = gen_int[i] + 0.5 * hp * (p[i][2] + end[i][2]);
            end[i][0] - start[i][0] - d - sigma2 * g
        })
        .collect())
}

/// Residual statistics over `replicas` independent runs of the interacting system.
pub fn ito_residual_test(
    params: &SimParams,
    density: &InitialDensity,
    tests: &[TestFunction],
    replicas: usize,
) -> Result<ItoReport> {
    params.validate()?;
    if !matches!(params.mollifier.profile, Profile::Gaussian { .. }) {
        return Err(invalid(
            "mollifier.profile",
            "the residual test needs the gaussian profile (closed-form V^N ∗ φ)",
        ));
    }
    if replicas < 2 {
        return Err(invalid("replicas", "need at least 2 for a standard error"));
    }
    let eps = params.mollifier.width();
    let smoothed: Vec<SmoothedTest> = tests.iter().map(|t| t.smoothed(eps)).collect();
    let model = Interaction::new(params);
    let samples = (0..replicas)
        .into_par_iter()
        .map(|r| residuals_for_run(params, density, &model, &smoothed, child_seed(params.seed, r as u64)))
        .collect::<Result<Vec<_>>>()?;
    let per_function = tests
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let xs: Vec<f64> = samples.iter().map(|s| s[i]).collect();
            let stat = Stat::of(&xs);
            let z = stat.z_score();
            ResidualStat {
                name: t.name,
                stat,
                z,
                threshold: Z_THRESHOLD,
                passed: z.abs() <= Z_THRESHOLD,
            }
        })
        .collect();
    Ok(ItoReport {
        n_particles: params.n_particles,
        replicas,
        dt: params.dt,
        t_end: params.t_end,
        per_function,
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::battery::battery;
    use crate::kernel::{CutoffParams, MollifierSpec};
    use crate::particles::NeighborMode;

    fn params(n: usize, mass: f64, noise: f64, dt: f64) -> SimParams {
        SimParams {
            n_particles: n,
            mollifier: MollifierSpec {
                alpha: 0.15,
                n_particles: n,
                profile: Profile::Gaussian { sigma: 1.0 },
            },
            cutoff: CutoffParams::new(3.0).unwrap(),
            dt,
            t_end: 0.1,
            seed: 5,
            neighbor_mode: NeighborMode::Direct,
            mass,
            kernel_scale: 1.0,
            noise_scale: noise,
        }
    }

    #[test]
    fn frozen_dynamics_leave_no_residual() {
        let p = params(50, 0.0, 0.0, 0.01);
        let rep = ito_residual_test(&p, &InitialDensity::gaussian(Vec2::ZERO, 1.0, 1.0), &battery(), 3).unwrap();
        for r in &rep.per_function {
            assert_eq!(r.stat.mean, 0.0, "{}", r.name);
            assert!(r.passed);
        }
    }

    #[test]
    fn constant_function_is_pure_mass_bookkeeping() {
        let p = params(40, 4.0, 1.0, 0.02);
        let rep = ito_residual_test(&p, &InitialDensity::gaussian(Vec2::ZERO, 1.0, 4.0), &battery()[..1], 4).unwrap();
        for s in &rep.samples {
            assert!(s[0].abs() <= 1e-8);
        }
    }

    #[test]
    fn pure_drift_residual_is_first_order() {
        // Without noise the run is explicit Euler for the particle ODE, so R
        // is its O(dt) defect against the trapezoid rule.
        let rho = InitialDensity::gaussian(Vec2::ZERO, 1.0, 4.0);
        let tests: Vec<_> = battery()[1..3].to_vec();
        let r = |dt: f64| {
            let p = params(60, 4.0, 0.0, dt);
            let rep = ito_residual_test(&p, &rho, &tests, 2).unwrap();
            rep.samples[0].iter().fold(0.0f64, |m, v| m.max(v.abs()))
        };
        let (a, b) = (r(0.01), r(0.005));
        assert!((a / b - 2.0).abs() < 0.3, "{a:e} {b:e}");
    }

    #[test]
    fn bump_profile_is_rejected() {
        let mut p = params(10, 1.0, 1.0, 0.01);
        p.mollifier.profile = Profile::Bump { radius: 1.0 };
        assert!(ito_residual_test(&p, &InitialDensity::gaussian(Vec2::ZERO, 1.0, 1.0), &battery(), 2).is_err());
    }
}
