//! The moderately interacting particle system and its Euler–Maruyama
//! discretization:
//!
//! ```text
//! dXⁱ = F_A( (M/N) Σ_k K^N(Xⁱ − Xᵏ) ) dt + √2 dWⁱ
//! ```
//!
//! with `K^N = ∇G ∗ V^N`. Particles sample the normalized initial density;
//! the total mass `M` multiplies the interaction sum.

use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::exact_sum::FixedSum2;
use crate::kernel::{cutoff, CutoffParams, GreenKernel, MollifiedKernel, MollifierSpec};
use crate::rng::{self, StreamRng};
use crate::vec2::Vec2;

/// Absolute per-component tolerance separating cell-list and direct drifts.
pub const DRIFT_TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum NeighborMode {
    Direct,
    /// Pairs in adjacent cells use the mollified kernel, all others the bare
    /// `∇G`. `cut_radius` defaults to the radius implied by [`DRIFT_TAIL_TOL`].
    CellList {
        #[serde(default)]
        cut_radius: Option<f64>,
    },
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimParams {
    pub n_particles: usize,
    pub mollifier: MollifierSpec,
    pub cutoff: CutoffParams,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    pub neighbor_mode: NeighborMode,
    /// Total mass `M`; scales the interaction sum. Zero switches the interaction off.
    pub mass: f64,
    #[serde(default = "one")]
    pub kernel_scale: f64,
    /// Multiplier on the `√2 dW` term; 0 freezes the noise.
    #[serde(default = "one")]
    pub noise_scale: f64,
}

impl SimParams {
    pub fn alpha(&self) -> f64 {
        self.mollifier.alpha
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(invalid("n_particles", "must be at least 1"));
        }
        self.mollifier.validate()?;
        if self.mollifier.n_particles != self.n_particles {
            return Err(invalid(
                "mollifier.n_particles",
                format!(
                    "must equal n_particles ({}), got {}",
                    self.n_particles, self.mollifier.n_particles
                ),
            ));
        }
        CutoffParams::new(self.cutoff.a)?;
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid("dt", format!("must be finite and > 0, got {}", self.dt)));
        }
        if !(self.t_end > self.dt) {
            return Err(invalid(
                "t_end",
                format!("must exceed dt ({}), got {}", self.dt, self.t_end),
            ));
        }
        if !(self.mass >= 0.0 && self.mass.is_finite()) {
            return Err(invalid("mass", format!("must be finite and >= 0, got {}", self.mass)));
        }
        if !self.kernel_scale.is_finite() {
            return Err(invalid("kernel_scale", "must be finite"));
        }
        if !(self.noise_scale >= 0.0 && self.noise_scale.is_finite()) {
            return Err(invalid("noise_scale", "must be finite and >= 0"));
        }
        if let NeighborMode::CellList {
            cut_radius: Some(r),
        } = self.neighbor_mode
        {
            let need = Interaction::new(self).required_cut_radius();
            if !(r >= need) {
                return Err(invalid(
                    "neighbor_mode.cut_radius",
                    format!("must be at least {need:.6} to keep the kernel tail below {DRIFT_TAIL_TOL:e}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixtureComponent {
    pub weight: f64,
    pub mean: Vec2,
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum DensityShape {
    Gaussian { mean: Vec2, sigma: f64 },
    GaussianMixture { components: Vec<MixtureComponent> },
    UniformDisk { center: Vec2, radius: f64 },
}

/// Initial density `ρ₀ = M · p` with `p` a probability density.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct InitialDensity {
    pub shape: DensityShape,
    pub total_mass: f64,
}

/// Critical mass of the whole-plane problem.
pub const CRITICAL_MASS: f64 = 8.0 * PI;

impl InitialDensity {
    pub fn gaussian(mean: Vec2, sigma: f64, total_mass: f64) -> Self {
        Self {
            shape: DensityShape::Gaussian { mean, sigma },
            total_mass,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.total_mass > 0.0 && self.total_mass.is_finite()) {
            return Err(invalid("total_mass", format!("must be finite and > 0, got {}", self.total_mass)));
        }
        match &self.shape {
            DensityShape::Gaussian { sigma, mean } => {
                if !(*sigma > 0.0) || !mean.is_finite() {
                    return Err(invalid("shape.sigma", "must be > 0 with a finite mean"));
                }
            }
            DensityShape::GaussianMixture { components } => {
                if components.is_empty() {
                    return Err(invalid("shape.components", "must not be empty"));
                }
                if components.iter().any(|c| !(c.weight > 0.0) || !(c.sigma > 0.0) || !c.mean.is_finite()) {
                    return Err(invalid("shape.components", "weights and sigmas must be positive"));
                }
                let total: f64 = components.iter().map(|c| c.weight).sum();
                if (total - 1.0).abs() > 1e-9 {
                    return Err(invalid("shape.components", format!("weights must sum to 1, got {total}")));
                }
            }
            DensityShape::UniformDisk { radius, center } => {
                if !(*radius > 0.0) || !center.is_finite() {
                    return Err(invalid("shape.radius", "must be > 0 with a finite center"));
                }
            }
        }
        Ok(())
    }

    /// Normalized probability density `p(x)`.
    pub fn pdf(&self, x: Vec2) -> f64 {
        let gauss = |mean: Vec2, sigma: f64| {
            let s2 = sigma * sigma;
            (-(x - mean).norm_sq() / (2.0 * s2)).exp() / (2.0 * PI * s2)
        };
        match &self.shape {
            DensityShape::Gaussian { mean, sigma } => gauss(*mean, *sigma),
            DensityShape::GaussianMixture { components } => components
                .iter()
                .map(|c| c.weight * gauss(c.mean, c.sigma))
                .sum(),
            DensityShape::UniformDisk { center, radius } => {
                if (x - *center).norm_sq() <= radius * radius {
                    1.0 / (PI * radius * radius)
                } else {
                    0.0
                }
            }
        }
    }

    /// `ρ₀(x) = M p(x)`.
    pub fn value(&self, x: Vec2) -> f64 {
        self.total_mass * self.pdf(x)
    }

    /// Largest length scale of the density (for boundary diagnostics).
    pub fn spread(&self) -> (Vec2, f64) {
        match &self.shape {
            DensityShape::Gaussian { mean, sigma } => (*mean, *sigma),
            DensityShape::GaussianMixture { components } => {
                let r = components
                    .iter()
                    .map(|c| c.mean.norm() + c.sigma)
                    .fold(0.0, f64::max);
                (Vec2::ZERO, r)
            }
            DensityShape::UniformDisk { center, radius } => (*center, *radius / 3.0),
        }
    }

    fn sample_one(&self, rng: &mut StreamRng) -> Result<Vec2> {
        let normal = |rng: &mut StreamRng| -> Vec2 {
            Vec2::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
        };
        match &self.shape {
            DensityShape::Gaussian { mean, sigma } => Ok(*mean + normal(rng) * *sigma),
            DensityShape::GaussianMixture { components } => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = components.last().expect("validated non-empty");
                for c in components {
                    acc += c.weight;
                    if u < acc {
                        pick = c;
                        break;
                    }
                }
                Ok(pick.mean + normal(rng) * pick.sigma)
            }
            DensityShape::UniformDisk { center, radius } => {
                const ATTEMPTS: usize = 64;
                for _ in 0..ATTEMPTS {
                    let p = Vec2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
                    if p.norm_sq() <= 1.0 {
                        return Ok(*center + p * *radius);
                    }
                }
                Err(Error::SamplerExhausted { attempts: ATTEMPTS })
            }
        }
    }
}

/// Positions, clock and per-particle noise streams.
#[derive(Debug, Clone)]
pub struct ParticleState {
    pub positions: Vec<Vec2>,
    pub t: f64,
    rngs: Vec<StreamRng>,
}

impl ParticleState {
    /// Wrap explicit positions; noise streams derive from `seed`.
    pub fn from_positions(positions: Vec<Vec2>, seed: u64) -> Self {
        let rngs = (0..positions.len())
            .map(|i| rng::stream(seed, "noise", i as u64))
            .collect();
        Self {
            positions,
            t: 0.0,
            rngs,
        }
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }
}

/// Draw `n` i.i.d. positions from `density / M`. Particle `i` uses ChaCha stream `i`.
pub fn sample_initial(density: &InitialDensity, n: usize, seed: u64) -> Result<ParticleState> {
    density.validate()?;
    let positions = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut r = rng::stream(seed, "initial", i as u64);
            density.sample_one(&mut r)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ParticleState::from_positions(positions, seed))
}

/// Anything that can produce per-particle drifts for the EM loop.
pub trait DriftModel: Sync {
    fn drift(&self, positions: &[Vec2], t: f64) -> Vec<Vec2>;
}

/// Precomputed pieces of the interaction drift.
#[derive(Debug, Clone)]
pub struct Interaction {
    kernel: MollifiedKernel,
    cutoff: CutoffParams,
    mass: f64,
    mode: NeighborMode,
}

impl Interaction {
    pub fn new(params: &SimParams) -> Self {
        Self {
            kernel: MollifiedKernel::new(&params.mollifier, GreenKernel::new(params.kernel_scale)),
            cutoff: params.cutoff,
            mass: params.mass,
            mode: params.neighbor_mode,
        }
    }

    pub fn kernel(&self) -> &MollifiedKernel {
        &self.kernel
    }

    /// Smallest cell-list radius keeping the summed tail below [`DRIFT_TAIL_TOL`].
    pub fn required_cut_radius(&self) -> f64 {
        self.kernel.tail_radius(DRIFT_TAIL_TOL / self.mass.max(1.0))
    }

    /// Raw interaction sums `(M/N) Σ_k K^N(Xⁱ − Xᵏ)` before the cutoff.
    pub fn interaction_sums(&self, positions: &[Vec2]) -> Vec<Vec2> {
        let n = positions.len();
        if n == 0 {
            return Vec::new();
        }
        let factor = self.mass / n as f64;
        if factor == 0.0 {
            return vec![Vec2::ZERO; n];
        }
        match self.mode {
            NeighborMode::Direct => {
                // Each pair is evaluated once and credited to both ends; K^N is
                // exactly odd and the integer sums are exact, so the split into
                // blocks cannot change the result.
                const BLOCK: usize = 32;
                let zero = || vec![FixedSum2::default(); n];
                let acc = (0..n.div_ceil(BLOCK))
                    .into_par_iter()
                    .fold(zero, |mut acc, b| {
                        for i in b * BLOCK..((b + 1) * BLOCK).min(n) {
                            let xi = positions[i];
                            let mut own = FixedSum2::default();
                            for (k, &xk) in positions.iter().enumerate().skip(i + 1) {
                                let v = FixedSum2::of(self.kernel.eval(xi - xk));
                                own.merge(v);
                                acc[k].unmerge(v);
                            }
                            acc[i].merge(own);
                        }
                        acc
                    })
                    .reduce(zero, |mut a, b| {
                        a.iter_mut().zip(b).for_each(|(x, y)| x.merge(y));
                        a
                    });
                acc.into_iter().map(|s| s.value() * factor).collect()
            }
            NeighborMode::CellList { cut_radius } => {
                let r = cut_radius.unwrap_or_else(|| self.required_cut_radius());
                let cells = CellGrid::build(positions, r);
                let green = self.kernel.green();
                positions
                    .par_iter()
                    .enumerate()
                    .map(|(i, &xi)| {
                        let (ci, cj) = cells.cell_of(xi);
                        let mut acc = FixedSum2::default();
                        for (cell, members) in cells.cells.iter().enumerate() {
                            let (a, b) = (cell / cells.ny, cell % cells.ny);
                            let near = a.abs_diff(ci) <= 1 && b.abs_diff(cj) <= 1;
                            for &k in members {
                                if k == i {
                                    continue;
                                }
                                let d = xi - positions[k];
                                if near {
                                    acc.add(self.kernel.eval(d));
                                } else {
                                    acc.add(green.grad_unchecked(d, d.norm_sq()));
                                }
                            }
                        }
                        acc.value() * factor
                    })
                    .collect()
            }
        }
    }
}

impl DriftModel for Interaction {
    fn drift(&self, positions: &[Vec2], _t: f64) -> Vec<Vec2> {
        let bound = self.cutoff.a + 1.0;
        self.interaction_sums(positions)
            .into_iter()
            .map(|s| {
                let b = cutoff(s, self.cutoff);
                debug_assert!(b.max_abs() <= bound, "drift {b:?} exceeds A+1");
                b
            })
            .collect()
    }
}

/// Uniform binning of particle indices, cells stored row-major in x.
struct CellGrid {
    origin: Vec2,
    size: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<usize>>,
}

impl CellGrid {
    fn build(positions: &[Vec2], size: f64) -> Self {
        let (mut lo, mut hi) = (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN));
        for p in positions {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        let nx = (((hi.x - lo.x) / size).floor() as usize + 1).max(1);
        let ny = (((hi.y - lo.y) / size).floor() as usize + 1).max(1);
        let mut grid = Self {
            origin: lo,
            size,
            nx,
            ny,
            cells: vec![Vec::new(); nx * ny],
        };
        for (k, &p) in positions.iter().enumerate() {
            let (a, b) = grid.cell_of(p);
            grid.cells[a * ny + b].push(k);
        }
        grid
    }

    fn cell_of(&self, p: Vec2) -> (usize, usize) {
        let a = (((p.x - self.origin.x) / self.size).floor() as usize).min(self.nx - 1);
        let b = (((p.y - self.origin.y) / self.size).floor() as usize).min(self.ny - 1);
        (a, b)
    }
}

/// `b_i = F_A((M/N) Σ_k K^N(Xⁱ − Xᵏ))`.
pub fn drift(state: &ParticleState, params: &SimParams) -> Vec<Vec2> {
    Interaction::new(params).drift(&state.positions, state.t)
}

/// Advance by one Euler–Maruyama step with precomputed drifts.
pub fn em_step_with(state: &mut ParticleState, drifts: &[Vec2], dt: f64, noise_scale: f64) {
    assert_eq!(drifts.len(), state.positions.len());
    let amp = noise_scale * (2.0 * dt).sqrt();
    state
        .positions
        .par_iter_mut()
        .zip(state.rngs.par_iter_mut())
        .zip(drifts.par_iter())
        .for_each(|((x, r), b)| {
            let gx: f64 = r.sample(StandardNormal);
            let gy: f64 = r.sample(StandardNormal);
            *x = *x + *b * dt + Vec2::new(gx, gy) * amp;
        });
    state.t += dt;
}

/// `X ← X + b dt + √(2dt) ξ`, `t ← t + dt`.
pub fn em_step(state: &ParticleState, params: &SimParams) -> ParticleState {
    let mut next = state.clone();
    let b = drift(state, params);
    em_step_with(&mut next, &b, params.dt, params.noise_scale);
    next
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub t: f64,
    pub positions: Vec<Vec2>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStat {
    pub t: f64,
    pub dt: f64,
    /// Largest absolute drift component over all particles at the start of the step.
    pub max_drift: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub n_particles: usize,
    pub dt: f64,
    pub seed: u64,
    pub snapshots: Vec<Snapshot>,
    pub steps: Vec<StepStat>,
    /// Distinct step sizes used after fitting each observation gap.
    pub dt_adjustments: Vec<f64>,
    pub wall_seconds: f64,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }
}

/// Split `[0, t_end]` into segments ending at the observation times and
/// choose, per segment, the largest step `≤ dt` that divides it exactly.
pub(crate) fn plan_segments(observers: &[f64], t_end: f64, dt: f64) -> Result<Vec<(f64, usize, f64)>> {
    if observers.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(invalid("observers", "must be sorted ascending"));
    }
    if observers.iter().any(|&t| !(0.0..=t_end).contains(&t)) {
        return Err(invalid("observers", format!("must lie in [0, {t_end}]")));
    }
    let mut marks: Vec<f64> = observers.to_vec();
    marks.push(t_end);
    marks.dedup();
    let mut t = 0.0;
    let mut segments = Vec::new();
    for &m in &marks {
        let gap = m - t;
        if gap <= 0.0 {
            segments.push((m, 0, 0.0));
            continue;
        }
        let steps = ((gap / dt) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        segments.push((m, steps, gap / steps as f64));
        t = m;
    }
    Ok(segments)
}

/// Run `model` from `state` through the observation times, recording snapshots.
pub fn run_with_model<M: DriftModel + ?Sized>(
    mut state: ParticleState,
    model: &M,
    dt: f64,
    t_end: f64,
    noise_scale: f64,
    observers: &[f64],
    mut on_step: impl FnMut(&ParticleState, &[Vec2], f64),
) -> Result<(ParticleState, Vec<Snapshot>, Vec<StepStat>, Vec<f64>)> {
    let segments = plan_segments(observers, t_end, dt)?;
    let mut snapshots = Vec::with_capacity(observers.len());
    let mut stats = Vec::new();
    let mut dts: Vec<f64> = Vec::new();
    let mut obs = observers.iter().peekable();
    let record = |state: &ParticleState, at: f64, obs: &mut std::iter::Peekable<std::slice::Iter<f64>>, snaps: &mut Vec<Snapshot>| {
        while let Some(&&o) = obs.peek() {
            if o == at {
                snaps.push(Snapshot { t: o, positions: state.positions.clone() });
                obs.next();
            } else {
                break;
            }
        }
    };
    record(&state, 0.0, &mut obs, &mut snapshots);
    for (mark, steps, h) in segments {
        if steps > 0 && !dts.iter().any(|&d| d == h) {
            dts.push(h);
        }
        let start = state.t;
        for s in 0..steps {
            let b = model.drift(&state.positions, state.t);
            let max_drift = b.iter().map(|v| v.max_abs()).fold(0.0, f64::max);
            stats.push(StepStat { t: state.t, dt: h, max_drift });
            on_step(&state, &b, h);
            em_step_with(&mut state, &b, h, noise_scale);
            // Pin the clock to the segment grid so observation times are hit exactly.
            state.t = if s + 1 == steps { mark } else { start + h * (s + 1) as f64 };
        }
        record(&state, mark, &mut obs, &mut snapshots);
    }
    Ok((state, snapshots, stats, dts))
}

/// Sample, then integrate to `t_end`, returning snapshots at `observers`.
pub fn simulate(params: &SimParams, density: &InitialDensity, observers: &[f64]) -> Result<Trajectory> {
    params.validate()?;
    let started = Instant::now();
    let state = sample_initial(density, params.n_particles, params.seed)?;
    let model = Interaction::new(params);
    let (_, snapshots, steps, dt_adjustments) = run_with_model(
        state,
        &model,
        params.dt,
        params.t_end,
        params.noise_scale,
        observers,
        |_, _, _| {},
    )?;
    Ok(Trajectory {
        n_particles: params.n_particles,
        dt: params.dt,
        seed: params.seed,
        snapshots,
        steps,
        dt_adjustments,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}
