//! Property suites for the singular-integral and interpolation inequalities
//! used by the analysis: Calderón–Zygmund bounds for `∇²G ∗ f`, Hölder
//! control of `∇G ∗ f` via Morrey, a Nash-type interpolation inequality and
//! the `L¹–L³` bound on `∇G ∗ ρ`.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::grid::{fft2, gradient, l2_norm, lp_norm, Field, GridSpec};
use crate::pde::{chemo_grad, PoissonMode};
use crate::rng::{self, StreamRng};
use crate::vec2::Vec2;

/// Real random field with independent gaussian coefficients on
/// `0 < max(|mx|, |my|) ≤ band`; mean zero.
pub fn random_band_limited(grid: GridSpec, band: usize, r: &mut StreamRng) -> Field {
    let n = grid.n;
    assert!(2 * band < n, "band {band} does not fit below the Nyquist index of n = {n}");
    let mut c = vec![Complex64::new(0.0, 0.0); n * n];
    let idx = |m: i64| m.rem_euclid(n as i64) as usize;
    let b = band as i64;
    for mx in -b..=b {
        for my in -b..=b {
            if mx == 0 && my == 0 {
                continue;
            }
            let re: f64 = r.sample(StandardNormal);
            let im: f64 = r.sample(StandardNormal);
            c[idx(mx) * n + idx(my)] = Complex64::new(re, im);
        }
    }
    fft2(&mut c, n, true);
    Field {
        grid,
        values: c.into_iter().map(|z| z.re).collect(),
    }
}

/// Pointwise Frobenius norm of `∇²(G ∗ f)`, multiplier `−ξ⊗ξ s/|ξ|²`, `s = 2·scale`.
pub fn hessian_norm_field(f: &Field, kernel_scale: f64) -> Field {
    let g = f.grid;
    let s = 2.0 * kernel_scale;
    let spec = f.to_spectral();
    let comp = |a: usize, b: usize| {
        spec.apply(|kx, ky, _, _| {
            let k2 = kx * kx + ky * ky;
            if k2 == 0.0 {
                return Complex64::new(0.0, 0.0);
            }
            let k = [kx, ky];
            Complex64::new(-k[a] * k[b] * s / k2, 0.0)
        })
        .to_field()
    };
    let (xx, xy, yy) = (comp(0, 0), comp(0, 1), comp(1, 1));
    let values = (0..g.len())
        .map(|i| (xx.values[i].powi(2) + 2.0 * xy.values[i].powi(2) + yy.values[i].powi(2)).sqrt())
        .collect();
    Field { grid: g, values }
}

/// `‖∇²(G ∗ f)‖_p / ‖f‖_p`.
pub fn cz_ratio(f: &Field, p: f64, kernel_scale: f64) -> f64 {
    lp_norm(&hessian_norm_field(f, kernel_scale), p) / lp_norm(f, p)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CzResult {
    pub p: f64,
    pub trials: usize,
    pub band: usize,
    pub max_ratio: f64,
}

/// Largest CZ ratio over `trials` random band-limited fields.
pub fn cz_inequality_test(
    p: f64,
    trials: usize,
    grid: GridSpec,
    band: usize,
    seed: u64,
    kernel_scale: f64,
) -> Result<CzResult> {
    if !(p > 1.0) {
        return Err(invalid("p", format!("must exceed 1, got {p}")));
    }
    let mut max_ratio: f64 = 0.0;
    for t in 0..trials {
        let mut r = rng::stream(seed, "cz", t as u64);
        let f = random_band_limited(grid, band, &mut r);
        max_ratio = max_ratio.max(cz_ratio(&f, p, kernel_scale));
    }
    Ok(CzResult { p, trials, band, max_ratio })
}

/// The sharp `L²` constant of `f ↦ ∇²(G ∗ f)` with the Frobenius norm: `s`.
pub fn cz_l2_constant(kernel_scale: f64) -> f64 {
    2.0 * kernel_scale.abs()
}

/// Relative change `|b − a| / a`.
pub fn relative_drift(a: f64, b: f64) -> f64 {
    (b - a).abs() / a.abs()
}

/// A sum of `bumps` gaussians with random signs, centres in `|x|_∞ ≤ L/3`
/// and widths in `[0.4, 1.0]`.
pub fn random_localized(grid: GridSpec, bumps: usize, positive: bool, r: &mut StreamRng) -> Field {
    let spread = grid.half_extent / 3.0;
    let parts: Vec<(Vec2, f64, f64)> = (0..bumps)
        .map(|_| {
            let c = Vec2::new(r.random_range(-spread..spread), r.random_range(-spread..spread));
            let w = r.random_range(0.4..1.0);
            let a: f64 = r.random_range(0.2..1.0);
            let sign = if positive || r.random::<bool>() { 1.0 } else { -1.0 };
            (c, w, sign * a)
        })
        .collect();
    Field::from_fn(grid, |x| {
        parts
            .iter()
            .map(|&(c, w, a)| a * (-(x - c).norm_sq() / (2.0 * w * w)).exp())
            .sum()
    })
}

/// Lattice displacements `(dj, dk)` with `0 < |d| ≤ max_shift` nodes, drawn
/// without replacement from a seeded stream. A longer list extends a shorter one.
pub fn offset_set(count: usize, max_shift: i64, seed: u64) -> Vec<(i64, i64)> {
    let mut all: Vec<(i64, i64)> = Vec::new();
    for a in -max_shift..=max_shift {
        for b in 0..=max_shift {
            if (b == 0 && a <= 0) || a * a + b * b > max_shift * max_shift {
                continue;
            }
            all.push((a, b));
        }
    }
    let mut r = rng::stream(seed, "offsets", 0);
    // Partial Fisher–Yates: the prefix is the same whatever `count` is.
    let count = count.min(all.len());
    for i in 0..count {
        let j = r.random_range(i..all.len());
        all.swap(i, j);
    }
    all.truncate(count);
    all
}

/// `max |u(x+d) − u(x)| / |d|^η` over all nodes `x` and the given offsets.
pub fn holder_seminorm(ux: &Field, uy: &Field, eta: f64, offsets: &[(i64, i64)]) -> f64 {
    let g = ux.grid;
    let n = g.n as i64;
    let h = g.spacing();
    let mut best: f64 = 0.0;
    for &(a, b) in offsets {
        let dist = h * ((a * a + b * b) as f64).sqrt();
        let w = dist.powf(-eta);
        for j in 0..n {
            let jj = (j + a).rem_euclid(n) as usize;
            for k in 0..n {
                let kk = (k + b).rem_euclid(n) as usize;
                let (i0, i1) = (j as usize * g.n + k as usize, jj * g.n + kk);
                let dx = ux.values[i1] - ux.values[i0];
                let dy = uy.values[i1] - uy.values[i0];
                best = best.max((dx * dx + dy * dy).sqrt() * w);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MorreyResult {
    pub p: f64,
    pub eta: f64,
    pub trials: usize,
    pub offsets: usize,
    pub max_ratio: f64,
}

/// Largest `[∇G ∗ f]_{C^η} / ‖f‖_p`, `η = 1 − 2/p`, over random localized `f`.
pub fn morrey_holder_test(
    p: f64,
    trials: usize,
    grid: GridSpec,
    offsets: usize,
    seed: u64,
    kernel_scale: f64,
) -> Result<MorreyResult> {
    if !(p > 2.0) {
        return Err(invalid("p", format!("must exceed 2, got {p}")));
    }
    let eta = 1.0 - 2.0 / p;
    let max_shift = (grid.n / 4) as i64;
    let shifts = offset_set(offsets, max_shift, seed);
    let mut max_ratio: f64 = 0.0;
    for t in 0..trials {
        let mut r = rng::stream(seed, "morrey", t as u64);
        let f = random_localized(grid, 12, false, &mut r);
        let norm = lp_norm(&f, p);
        if norm == 0.0 {
            continue;
        }
        let (ux, uy) = chemo_grad(&f, PoissonMode::TorusSpectral, kernel_scale);
        max_ratio = max_ratio.max(holder_seminorm(&ux, &uy, eta, &shifts) / norm);
    }
    Ok(MorreyResult {
        p,
        eta,
        trials,
        offsets: shifts.len(),
        max_ratio,
    })
}

/// `‖u‖₃^{3/2} / (‖u‖₁^{1/2} ‖∇u‖₂)`.
pub fn nash_ratio(u: &Field) -> f64 {
    let (gx, gy) = gradient(u);
    let grad = (l2_norm(&gx).powi(2) + l2_norm(&gy).powi(2)).sqrt();
    lp_norm(u, 3.0).powf(1.5) / (lp_norm(u, 1.0).sqrt() * grad)
}

pub const NASH_CONSTANT: f64 = 1.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NashResult {
    pub trials: usize,
    pub max_ratio: f64,
    pub bound: f64,
    pub violations: usize,
}

/// Nash-type inequality on random positive gaussian mixtures.
pub fn nash_inequality_test(trials: usize, grid: GridSpec, seed: u64) -> NashResult {
    let mut max_ratio: f64 = 0.0;
    let mut violations = 0;
    for t in 0..trials {
        let mut r = rng::stream(seed, "nash", t as u64);
        let bumps = r.random_range(1..8);
        let u = random_localized(grid, bumps, true, &mut r);
        let q = nash_ratio(&u);
        if q > NASH_CONSTANT {
            violations += 1;
        }
        max_ratio = max_ratio.max(q);
    }
    NashResult {
        trials,
        max_ratio,
        bound: NASH_CONSTANT,
        violations,
    }
}

/// `‖∇G ∗ ρ‖_∞ / (‖ρ‖₁^{1/4} ‖ρ‖₃^{3/4})`.
pub fn grad_c_ratio(rho: &Field, mode: PoissonMode, kernel_scale: f64) -> f64 {
    let (ux, uy) = chemo_grad(rho, mode, kernel_scale);
    let sup = ux
        .values
        .iter()
        .zip(&uy.values)
        .fold(0.0f64, |m, (a, b)| m.max((a * a + b * b).sqrt()));
    sup / (lp_norm(rho, 1.0).powf(0.25) * lp_norm(rho, 3.0).powf(0.75))
}

/// The ratio of [`grad_c_ratio`] for an isotropic gaussian, in closed form.
/// It is the same for every width and mass.
pub fn grad_c_gaussian_ratio(kernel_scale: f64) -> f64 {
    // |∇c|(r) = scale·M (1 − e^{−r²/2σ²}) / (π r); with σ = 1, M = 1 maximize
    // (1 − e^{−x²/2})/x by golden section on [0.5, 3].
    let f = |x: f64| -(-x * x / 2.0).exp_m1() / x;
    let (mut a, mut b) = (0.5f64, 3.0f64);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let c = b - phi * (b - a);
        let d = a + phi * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let sup = kernel_scale.abs() * f(0.5 * (a + b)) / PI;
    // ‖ρ‖₃ = (2π)^{-2/3} 3^{-1/3} for σ = M = 1.
    let l3 = (2.0 * PI).powf(-2.0 / 3.0) * 3f64.powf(-1.0 / 3.0);
    sup / l3.powf(0.75)
}

/// Brute-force maximum of [`grad_c_ratio`] over sampled anisotropic gaussians
/// `diag(σ², (aσ)²)` rotated by `θ`.
pub fn grad_c_constant_over_gaussians(grid: GridSpec, sigmas: &[f64], aspects: &[f64], kernel_scale: f64) -> f64 {
    let mut best: f64 = 0.0;
    for &s in sigmas {
        for &a in aspects {
            for theta in [0.0, PI / 6.0, PI / 4.0] {
                let (c, sn) = (f64::cos(theta), f64::sin(theta));
                let rho = Field::from_fn(grid, |x| {
                    let u = c * x.x + sn * x.y;
                    let v = -sn * x.x + c * x.y;
                    (-(u * u / (2.0 * s * s) + v * v / (2.0 * a * a * s * s))).exp() / (2.0 * PI * a * s * s)
                });
                best = best.max(grad_c_ratio(&rho, PoissonMode::FreeSpacePadded, kernel_scale));
            }
        }
    }
    best
}
