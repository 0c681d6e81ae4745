//! Convergence of `g^N` to the PDE solution across a ladder of particle
//! numbers, measured in a localized `H^γ` norm and against the test battery.

use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::battery::battery;
use super::report::{non_increasing_within, Stat};
use crate::density::{mollified_empirical, DepositMethod};
use crate::error::{invalid, Error, Result};
use crate::grid::{h_local_norm, h_norm_spectral, h_pairing_spectral, Field, GridSpec, SpectralField};
use crate::kernel::{cutoff, CutoffParams};
use crate::particles::{
    plan_segments, run_with_model, sample_initial, DriftModel, InitialDensity, Interaction, SimParams, Snapshot,
    CRITICAL_MASS,
};
use crate::pde::{solve, ChemoSolver, PdeConfig, PdeSolution};
use crate::rng::child_seed;
use crate::vec2::Vec2;

/// How particles are driven during a study.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftMode {
    /// The mollified interacting system.
    #[default]
    Interacting,
    /// Independent particles in the frozen reference drift `F_A(∇G ∗ ρ_t)`.
    /// A diagnostic: it isolates the sampling and mollification error.
    McKeanOracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceConfig {
    pub n_ladder: Vec<usize>,
    pub replicas: usize,
    pub beta: f64,
    pub gamma: f64,
    pub local_radius: f64,
    pub mass: f64,
    /// The cutoff level is `(1 + margin) · A0`.
    pub cutoff_margin: f64,
    /// Template for every rung; `n_particles`, `mass` and `cutoff` are overridden.
    pub sim: SimParams,
    pub initial: InitialDensity,
    /// Reference solver; its grid also carries `g^N`. Observers are overridden.
    pub pde: PdeConfig,
    /// Comparison times on a uniform mesh starting at 0.
    pub observers: Vec<f64>,
    #[serde(default)]
    pub drift_mode: DriftMode,
    #[serde(default = "direct")]
    pub deposit: DepositMethod,
}

fn direct() -> DepositMethod {
    DepositMethod::Direct
}

impl ConvergenceConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ladder.is_empty() || self.n_ladder.contains(&0) {
            return Err(invalid("n_ladder", "needs at least one positive rung"));
        }
        if self.replicas < 2 {
            return Err(invalid("replicas", "need at least 2 per rung for a standard error"));
        }
        if !(self.beta > 1.0) {
            return Err(invalid("beta", format!("must exceed 1, got {}", self.beta)));
        }
        if !(self.gamma > 1.0 && self.gamma < self.beta) {
            return Err(invalid("gamma", format!("must lie in (1, beta = {}), got {}", self.beta, self.gamma)));
        }
        let alpha_max = 1.0 / (2.0 + 2.0 * self.beta);
        if !(self.sim.mollifier.alpha < alpha_max) {
            return Err(invalid(
                "sim.mollifier.alpha",
                format!("alpha must be < 1/(2+2·beta) = {alpha_max}, got {}", self.sim.mollifier.alpha),
            ));
        }
        if !(self.mass > 0.0 && self.mass < CRITICAL_MASS) {
            return Err(invalid("mass", format!("must lie in (0, 8π), got {}", self.mass)));
        }
        if (self.initial.total_mass - self.mass).abs() > 1e-12 * self.mass {
            return Err(invalid("initial.total_mass", "must equal mass"));
        }
        if !(self.cutoff_margin >= 0.0) {
            return Err(invalid("cutoff_margin", "must be >= 0"));
        }
        if !(self.local_radius > 0.0 && self.local_radius < self.pde.grid.half_extent) {
            return Err(invalid("local_radius", "must lie inside the grid"));
        }
        if self.observers.first() != Some(&0.0) {
            return Err(invalid("observers", "must start at 0"));
        }
        if self.observers.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("observers", "must be strictly increasing"));
        }
        if self.observers.last().is_some_and(|&t| t > self.sim.t_end) {
            return Err(invalid("observers", "must not pass sim.t_end"));
        }
        if self.pde.t_end != self.sim.t_end {
            return Err(invalid("pde.t_end", "must equal sim.t_end"));
        }
        self.initial.validate()?;
        self.pde.validate()
    }
}

/// Reference solution at the comparison times, plus the oracle drift mesh.
#[derive(Debug, Clone)]
pub struct Reference {
    pub a0_estimate: f64,
    pub cutoff: CutoffParams,
    pub times: Vec<f64>,
    pub fields: Vec<Field>,
    oracle: Option<OracleDrift>,
}

impl Reference {
    pub fn build(cfg: &ConvergenceConfig) -> Result<Self> {
        let grid = cfg.pde.grid;
        let rho0 = Field::from_fn(grid, |x| cfg.initial.value(x));
        let want_oracle = cfg.drift_mode == DriftMode::McKeanOracle;
        let mesh = if want_oracle {
            step_mesh(&cfg.observers, cfg.sim.t_end, cfg.sim.dt)?
        } else {
            Vec::new()
        };
        let mut marks: Vec<f64> = cfg.observers.iter().chain(&mesh).copied().collect();
        marks.sort_by(f64::total_cmp);
        marks.dedup();
        let mut pde = cfg.pde.clone();
        pde.cutoff = None;
        pde.kernel_scale = cfg.sim.kernel_scale;
        pde.observers = marks.clone();
        let sol: PdeSolution = solve(&pde, &rho0)?;
        if sol.report.blew_up {
            return Err(invalid(
                "pde",
                format!("reference solution blew up ({:?}) in a subcritical study", sol.report.trigger),
            ));
        }
        let cut = crate::pde::cutoff_from_a0(sol.a0_estimate, cfg.cutoff_margin)?;
        let at = |t: f64| {
            sol.snapshots
                .iter()
                .find(|s| s.t == t)
                .map(|s| s.rho.clone())
                .ok_or_else(|| Error::Format(format!("reference missed time {t}")))
        };
        let fields = cfg.observers.iter().map(|&t| at(t)).collect::<Result<Vec<_>>>()?;
        let oracle = if want_oracle {
            let chemo = ChemoSolver::new(grid, pde.poisson_mode, cfg.sim.kernel_scale);
            let mut velocity = Vec::with_capacity(mesh.len());
            for &t in &mesh {
                let (gx, gy) = chemo.grad(&at(t)?);
                velocity.push((t, gx, gy));
            }
            Some(OracleDrift { velocity, cutoff: cut })
        } else {
            None
        };
        Ok(Self {
            a0_estimate: sol.a0_estimate,
            cutoff: cut,
            times: cfg.observers.clone(),
            fields,
            oracle,
        })
    }
}

/// The times at which the particle loop evaluates drifts.
fn step_mesh(observers: &[f64], t_end: f64, dt: f64) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    let mut start = 0.0;
    for (mark, steps, h) in plan_segments(observers, t_end, dt)? {
        for s in 0..steps {
            out.push(if s == 0 { start } else { start + h * s as f64 });
        }
        if steps > 0 {
            start = mark;
        }
    }
    Ok(out)
}

/// `F_A(∇c)` sampled on the reference step mesh, read with periodic bicubic
/// Lagrange interpolation.
#[derive(Debug, Clone)]
struct OracleDrift {
    velocity: Vec<(f64, Field, Field)>,
    cutoff: CutoffParams,
}

/// Cubic Lagrange weights for nodes `-1, 0, 1, 2` at offset `u ∈ [0, 1)`.
fn lagrange4(u: f64) -> [f64; 4] {
    [
        -u * (u - 1.0) * (u - 2.0) / 6.0,
        (u + 1.0) * (u - 1.0) * (u - 2.0) / 2.0,
        -(u + 1.0) * u * (u - 2.0) / 2.0,
        (u + 1.0) * u * (u - 1.0) / 6.0,
    ]
}

fn interpolate(fx: &Field, fy: &Field, p: Vec2) -> Vec2 {
    let g = fx.grid;
    let n = g.n as i64;
    let h = g.spacing();
    let (cx, cy) = ((p.x + g.half_extent) / h, (p.y + g.half_extent) / h);
    let (jx, jy) = (cx.floor(), cy.floor());
    let (wx, wy) = (lagrange4(cx - jx), lagrange4(cy - jy));
    let mut out = Vec2::ZERO;
    for (a, wa) in wx.iter().enumerate() {
        let j = (jx as i64 + a as i64 - 1).rem_euclid(n) as usize;
        for (b, wb) in wy.iter().enumerate() {
            let k = (jy as i64 + b as i64 - 1).rem_euclid(n) as usize;
            let i = j * g.n + k;
            out = out + Vec2::new(fx.values[i], fy.values[i]) * (wa * wb);
        }
    }
    out
}

impl DriftModel for OracleDrift {
    fn drift(&self, positions: &[Vec2], t: f64) -> Vec<Vec2> {
        let idx = self
            .velocity
            .iter()
            .position(|(s, _, _)| (s - t).abs() <= 1e-9 * (1.0 + t))
            .unwrap_or_else(|| panic!("oracle drift has no field at t = {t}"));
        let (_, fx, fy) = &self.velocity[idx];
        positions
            .par_iter()
            .map(|&p| cutoff(interpolate(fx, fy, p), self.cutoff))
            .collect()
    }
}

/// `sup_t ‖χ_R (g_t − ρ_t)‖_{H^γ}`.
pub fn local_error(g: &[Field], rho: &[Field], gamma: f64, radius: f64) -> Result<f64> {
    let mut worst: f64 = 0.0;
    for (a, b) in g.iter().zip(rho) {
        worst = worst.max(h_local_norm(&a.sub(b)?, gamma, radius)?);
    }
    Ok(worst)
}

/// `|∫ ⟨g_t − ρ_t, φ⟩_{H^β} dt|` by the trapezoid rule for each sampled `φ`.
pub fn weak_errors(times: &[f64], g: &[Field], rho: &[Field], tests: &[SpectralField], beta: f64) -> Result<Vec<f64>> {
    let diffs: Vec<SpectralField> = g
        .iter()
        .zip(rho)
        .map(|(a, b)| a.sub(b).map(|d| d.to_spectral()))
        .collect::<Result<_>>()?;
    Ok(tests
        .iter()
        .map(|phi| {
            let vals: Vec<f64> = diffs.iter().map(|d| h_pairing_spectral(d, phi, beta)).collect();
            if vals.len() == 1 {
                return vals[0].abs();
            }
            let integral: f64 = times
                .windows(2)
                .zip(vals.windows(2))
                .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
                .sum();
            integral.abs()
        })
        .collect())
}

/// Metrics of one replica.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicaMetrics {
    pub seed: u64,
    pub local: f64,
    /// Largest entry of `weak_per_function`.
    pub weak: f64,
    pub weak_per_function: Vec<f64>,
    /// `max_t ‖g_t‖_{β,2}`.
    pub moment: f64,
    /// `‖g_0‖_{β,2}`.
    pub initial_norm: f64,
    pub truncated: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedStat {
    pub name: String,
    pub stat: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RungResult {
    pub n: usize,
    pub replicas: Vec<ReplicaMetrics>,
    pub local: Stat,
    /// The "battery-weak error": worst test function per replica.
    pub weak: Stat,
    pub weak_per_function: Vec<NamedStat>,
    pub moment: Stat,
    pub initial_norm: Stat,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub drift_mode: DriftMode,
    pub a0_estimate: f64,
    pub cutoff_a: f64,
    pub beta: f64,
    pub gamma: f64,
    pub local_radius: f64,
    pub mass: f64,
    /// `max_t ‖ρ_t‖_{β,2}`: the `N → ∞` limit of the moment monitor.
    pub reference_moment: f64,
    pub rungs: Vec<RungResult>,
}

impl ConvergenceReport {
    /// Rung means of `metric` do not increase by more than `k` combined stderrs.
    pub fn monotone(&self, metric: impl Fn(&RungResult) -> Stat, k: f64) -> bool {
        let stats: Vec<Stat> = self.rungs.iter().map(metric).collect();
        non_increasing_within(&stats, k)
    }

    /// No rung's moment mean exceeds both the coarsest rung and the
    /// reference limit by more than `k` of its stderrs.
    pub fn moments_bounded(&self, k: f64) -> bool {
        let Some(first) = self.rungs.first() else {
            return true;
        };
        let cap = first.moment.mean.max(self.reference_moment);
        self.rungs.iter().all(|r| r.moment.mean <= cap + k * r.moment.stderr)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Plot-ready rows `N,metric,mean,stderr`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,metric,mean,stderr\n");
        for r in &self.rungs {
            let mut row = |name: &str, st: &Stat| {
                s.push_str(&format!("{},{},{:.12e},{:.12e}\n", r.n, name, st.mean, st.stderr));
            };
            row("local_h_gamma", &r.local);
            row("battery_weak", &r.weak);
            row("moment_max", &r.moment);
            row("initial_norm", &r.initial_norm);
            for w in &r.weak_per_function {
                row(&format!("weak:{}", w.name), &w.stat);
            }
        }
        s
    }
}

/// Particle parameters for rung `n` with cutoff level `cut`.
pub fn rung_params(cfg: &ConvergenceConfig, n: usize, cut: CutoffParams) -> SimParams {
    let mut p = cfg.sim.clone();
    p.n_particles = n;
    p.mollifier.n_particles = n;
    p.mass = cfg.mass;
    p.cutoff = cut;
    p
}

/// Run one replica against a prepared reference.
pub fn run_replica(
    cfg: &ConvergenceConfig,
    reference: &Reference,
    tests: &[SpectralField],
    n: usize,
    seed: u64,
) -> Result<ReplicaMetrics> {
    let params = rung_params(cfg, n, reference.cutoff);
    let state = sample_initial(&cfg.initial, n, seed)?;
    let snapshots: Vec<Snapshot> = match cfg.drift_mode {
        DriftMode::Interacting => {
            let model = Interaction::new(&params);
            run_with_model(state, &model, params.dt, params.t_end, params.noise_scale, &cfg.observers, |_, _, _| {})?.1
        }
        DriftMode::McKeanOracle => {
            let model = reference.oracle.as_ref().expect("oracle prepared for this mode");
            run_with_model(state, model, params.dt, params.t_end, params.noise_scale, &cfg.observers, |_, _, _| {})?.1
        }
    };
    let mut truncated = 0;
    let g: Vec<Field> = snapshots
        .iter()
        .map(|s| {
            let d = mollified_empirical(&s.positions, &params.mollifier, cfg.pde.grid, cfg.mass, cfg.deposit);
            truncated = truncated.max(d.truncated);
            d.field
        })
        .collect();
    let local = local_error(&g, &reference.fields, cfg.gamma, cfg.local_radius)?;
    let weak_per_function = weak_errors(&reference.times, &g, &reference.fields, tests, cfg.beta)?;
    let norms: Vec<f64> = g.iter().map(|f| h_norm_spectral(&f.to_spectral(), cfg.beta)).collect();
    Ok(ReplicaMetrics {
        seed,
        local,
        weak: weak_per_function.iter().fold(0.0, |m: f64, v| m.max(*v)),
        weak_per_function,
        moment: norms.iter().fold(0.0, |m: f64, v| m.max(*v)),
        initial_norm: norms[0],
        truncated,
    })
}

/// Seed of replica `r` on rung `n`.
pub fn replica_seed(base: u64, n: usize, r: usize) -> u64 {
    child_seed(child_seed(base, n as u64), r as u64)
}

pub fn convergence_study(cfg: &ConvergenceConfig) -> Result<ConvergenceReport> {
    cfg.validate()?;
    let reference = Reference::build(cfg)?;
    let battery = battery();
    let tests: Vec<SpectralField> = battery.iter().map(|t| t.sample(cfg.pde.grid).to_spectral()).collect();
    let mut rungs = Vec::with_capacity(cfg.n_ladder.len());
    for &n in &cfg.n_ladder {
        let started = Instant::now();
        let replicas = (0..cfg.replicas)
            .into_par_iter()
            .map(|r| run_replica(cfg, &reference, &tests, n, replica_seed(cfg.sim.seed, n, r)))
            .collect::<Result<Vec<_>>>()?;
        let stat = |f: &dyn Fn(&ReplicaMetrics) -> f64| Stat::of(&replicas.iter().map(f).collect::<Vec<_>>());
        let weak_per_function = battery
            .iter()
            .enumerate()
            .map(|(i, t)| NamedStat {
                name: t.name.to_string(),
                stat: stat(&|m| m.weak_per_function[i]),
            })
            .collect();
        rungs.push(RungResult {
            n,
            local: stat(&|m| m.local),
            weak: stat(&|m| m.weak),
            weak_per_function,
            moment: stat(&|m| m.moment),
            initial_norm: stat(&|m| m.initial_norm),
            replicas,
            seconds: started.elapsed().as_secs_f64(),
        });
    }
    Ok(ConvergenceReport {
        drift_mode: cfg.drift_mode,
        a0_estimate: reference.a0_estimate,
        cutoff_a: reference.cutoff.a,
        beta: cfg.beta,
        gamma: cfg.gamma,
        local_radius: cfg.local_radius,
        mass: cfg.mass,
        reference_moment: reference
            .fields
            .iter()
            .map(|f| h_norm_spectral(&f.to_spectral(), cfg.beta))
            .fold(0.0, f64::max),
        rungs,
    })
}

/// `E[g_0^N]` for a gaussian initial density and gaussian mollifier: the
/// gaussian with variance `σ² + ε²`.
pub fn expected_initial_density(grid: GridSpec, sigma: f64, eps: f64, mass: f64) -> Field {
    let v = sigma * sigma + eps * eps;
    Field::from_fn(grid, |x| mass * (-x.norm_sq() / (2.0 * v)).exp() / (2.0 * PI * v))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::{MollifierSpec, Profile};
    use crate::particles::NeighborMode;

    pub(crate) fn small_config(mode: DriftMode) -> ConvergenceConfig {
        let grid = GridSpec::new(6.0, 64).unwrap();
        let mass = 2.0 * PI;
        ConvergenceConfig {
            n_ladder: vec![100, 400],
            replicas: 3,
            beta: 1.5,
            gamma: 1.1,
            local_radius: 3.0,
            mass,
            cutoff_margin: 0.1,
            sim: SimParams {
                n_particles: 100,
                mollifier: MollifierSpec {
                    alpha: 0.15,
                    n_particles: 100,
                    profile: Profile::Gaussian { sigma: 1.0 },
                },
                cutoff: CutoffParams::new(1.0).unwrap(),
                dt: 0.01,
                t_end: 0.05,
                seed: 11,
                neighbor_mode: NeighborMode::Direct,
                mass,
                kernel_scale: 1.0,
                noise_scale: 1.0,
            },
            initial: InitialDensity::gaussian(Vec2::ZERO, 1.0, mass),
            pde: PdeConfig::new(grid, 0.005, 0.05),
            observers: vec![0.0, 0.025, 0.05],
            drift_mode: mode,
            deposit: DepositMethod::Direct,
        }
    }

    #[test]
    fn metrics_of_a_field_against_itself_vanish() {
        let g = GridSpec::new(6.0, 32).unwrap();
        let f = expected_initial_density(g, 1.0, 0.3, 2.0);
        let fields = vec![f.clone(), f.clone()];
        assert_eq!(local_error(&fields, &fields, 1.1, 3.0).unwrap(), 0.0);
        let tests: Vec<_> = battery().iter().map(|t| t.sample(g).to_spectral()).collect();
        for e in weak_errors(&[0.0, 0.1], &fields, &fields, &tests, 1.5).unwrap() {
            assert_eq!(e, 0.0);
        }
    }

    #[test]
    fn validation_rejects_bad_exponents() {
        let mut c = small_config(DriftMode::Interacting);
        c.sim.mollifier.alpha = 0.25;
        let msg = c.validate().unwrap_err().to_string();
        assert!(msg.contains("1/(2+2·beta)"), "{msg}");
        let mut c = small_config(DriftMode::Interacting);
        c.gamma = 1.6;
        assert!(c.validate().is_err());
        let mut c = small_config(DriftMode::Interacting);
        c.mass = 9.0 * PI;
        c.initial.total_mass = c.mass;
        assert!(c.validate().is_err());
    }

    #[test]
    fn step_mesh_matches_particle_clock() {
        let mesh = step_mesh(&[0.0, 0.025, 0.05], 0.05, 0.01).unwrap();
        assert_eq!(mesh.len(), 6);
        assert_eq!(mesh[0], 0.0);
        assert_eq!(mesh[3], 0.025);
    }

    #[test]
    fn lagrange_interpolation_is_exact_for_cubics() {
        let g = GridSpec::new(4.0, 32).unwrap();
        let f = Field::from_fn(g, |x| x.x.powi(3) - 2.0 * x.x * x.y + x.y * x.y);
        let p = Vec2::new(0.317, -1.04);
        let v = interpolate(&f, &f, p);
        let want = p.x.powi(3) - 2.0 * p.x * p.y + p.y * p.y;
        assert!((v.x - want).abs() < 1e-12);
    }

    #[test]
    fn report_has_one_rung_per_ladder_entry() {
        let c = small_config(DriftMode::Interacting);
        let rep = convergence_study(&c).unwrap();
        assert_eq!(rep.rungs.len(), 2);
        assert!(rep.a0_estimate > 0.0 && rep.cutoff_a > rep.a0_estimate);
        let csv = rep.to_csv();
        assert!(csv.starts_with("N,metric,mean,stderr\n"));
        assert_eq!(csv.lines().count(), 1 + 2 * (4 + 8));
        let back: ConvergenceReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
    }

    #[test]
    fn oracle_run_is_reproducible() {
        let c = small_config(DriftMode::McKeanOracle);
        let strip = |mut r: ConvergenceReport| {
            r.rungs.iter_mut().for_each(|g| g.seconds = 0.0);
            r
        };
        let a = strip(convergence_study(&c).unwrap());
        let b = strip(convergence_study(&c).unwrap());
        assert_eq!(a, b);
    }
}
