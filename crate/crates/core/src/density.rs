//! The mollified empirical measure `g^N = V^N ∗ S^N` sampled on a periodic grid.

use rustfft::num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::grid::{Field, GridSpec};
use crate::kernel::{MollifierEval, MollifierSpec, Profile};
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DepositMethod {
    /// Exact summation of `V^N` at every node (periodized by minimum image).
    #[default]
    Direct,
    /// Local deposit followed by an FFT convolution.
    Fast,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MollifiedDensity {
    pub field: Field,
    /// Number of particles closer than the kernel tail radius to the boundary.
    pub truncated: usize,
}

impl MollifiedDensity {
    pub fn truncation_warning(&self) -> bool {
        self.truncated > 0
    }
}

/// Distance at which `V^N` has decayed below ~1e-12 of its peak.
pub fn tail_radius(spec: &MollifierSpec) -> f64 {
    match spec.profile {
        Profile::Gaussian { .. } => 7.5 * spec.width(),
        Profile::Bump { .. } => spec.width(),
    }
}

/// `x ↦ (mass/N) Σ_k V^N(x − X^k)` on `grid`.
pub fn mollified_empirical(
    positions: &[Vec2],
    spec: &MollifierSpec,
    grid: GridSpec,
    mass: f64,
    method: DepositMethod,
) -> MollifiedDensity {
    let delta = tail_radius(spec);
    let inner = grid.half_extent - delta;
    let truncated = positions
        .iter()
        .filter(|p| !(p.x.abs() <= inner && p.y.abs() <= inner))
        .count();
    let mut field = match (method, spec.profile) {
        (DepositMethod::Direct, Profile::Gaussian { .. }) => direct_gaussian(positions, spec.width(), grid),
        (DepositMethod::Direct, Profile::Bump { .. }) => direct_general(positions, spec, grid),
        (DepositMethod::Fast, Profile::Gaussian { .. }) => split_gaussian(positions, spec.width(), grid),
        (DepositMethod::Fast, Profile::Bump { .. }) => cic_convolution(positions, spec, grid),
    };
    if !positions.is_empty() {
        let c = mass / positions.len() as f64;
        field.values.iter_mut().for_each(|v| *v *= c);
    }
    MollifiedDensity { field, truncated }
}

/// Offsets `(index, wrapped distance)` of nodes within `reach` of `x` along one axis.
fn axis_window(grid: &GridSpec, x: f64, reach: f64) -> impl Iterator<Item = (usize, f64)> + '_ {
    let n = grid.n;
    let h = grid.spacing();
    let full = 2.0 * reach >= 2.0 * grid.half_extent;
    let (lo, hi) = if full {
        (0i64, n as i64 - 1)
    } else {
        let c = (x + grid.half_extent) / h;
        ((c - reach / h).floor() as i64, (c + reach / h).ceil() as i64)
    };
    (lo..=hi).map(move |j| {
        let jj = j.rem_euclid(n as i64) as usize;
        (jj, grid.wrap(grid.coord(jj) - x))
    })
}

// exp(-u) underflows to exactly 0 for u > 745.2.
const UNDERFLOW_REACH: f64 = 38.7;

fn direct_gaussian(positions: &[Vec2], eps: f64, grid: GridSpec) -> Field {
    separable_gaussian_sum(positions, eps, grid, UNDERFLOW_REACH * eps)
}

fn separable_gaussian_sum(positions: &[Vec2], eps: f64, grid: GridSpec, reach: f64) -> Field {
    let n = grid.n;
    let mut out = Field::zeros(grid);
    let inv = 1.0 / (2.0 * eps * eps);
    let peak = 1.0 / (2.0 * std::f64::consts::PI * eps * eps);
    let mut gx: Vec<(usize, f64)> = Vec::new();
    let mut gy: Vec<(usize, f64)> = Vec::new();
    for p in positions {
        gx.clear();
        gy.clear();
        gx.extend(axis_window(&grid, p.x, reach).map(|(j, d)| (j, peak * (-d * d * inv).exp())));
        gy.extend(axis_window(&grid, p.y, reach).map(|(k, d)| (k, (-d * d * inv).exp())));
        for &(j, wx) in &gx {
            if wx == 0.0 {
                continue;
            }
            let row = &mut out.values[j * n..(j + 1) * n];
            for &(k, wy) in &gy {
                row[k] += wx * wy;
            }
        }
    }
    out
}

fn direct_general(positions: &[Vec2], spec: &MollifierSpec, grid: GridSpec) -> Field {
    let n = grid.n;
    let eval = MollifierEval::new(spec);
    let reach = spec.support_radius();
    let mut out = Field::zeros(grid);
    for p in positions {
        let ys: Vec<(usize, f64)> = axis_window(&grid, p.y, reach).collect();
        for (j, dx) in axis_window(&grid, p.x, reach) {
            for &(k, dy) in &ys {
                out.values[j * n + k] += eval.value(Vec2::new(dx, dy));
            }
        }
    }
    out
}

/// Gaussian `V^N` split as `G_{ε₀} ∗ G_{ε₁}` with `ε₀² + ε₁² = ε²`: particles
/// are spread with the narrow `G_{ε₀}` (ε₀ = 2.5h, resolved on the grid) and
/// the remainder is applied as an exact spectral multiplier. Falls back to
/// the direct sum when `ε` is too small to split.
fn split_gaussian(positions: &[Vec2], eps: f64, grid: GridSpec) -> Field {
    let h = grid.spacing();
    let eps0 = 2.5 * h;
    if eps <= eps0 * 1.01 {
        return direct_gaussian(positions, eps, grid);
    }
    // exp(-u) < 1e-17 beyond u = 39
    let spread = separable_gaussian_sum(positions, eps0, grid, (78.0f64).sqrt() * eps0);
    let rem = eps * eps - eps0 * eps0;
    spread
        .to_spectral()
        .apply(|kx, ky, _, _| Complex64::new((-0.5 * rem * (kx * kx + ky * ky)).exp(), 0.0))
        .to_field()
}

/// Bilinear cloud-in-cell histogram convolved with sampled `V^N`.
fn cic_convolution(positions: &[Vec2], spec: &MollifierSpec, grid: GridSpec) -> Field {
    let n = grid.n;
    let h = grid.spacing();
    let mut hist = Field::zeros(grid);
    for p in positions {
        let fx = (p.x + grid.half_extent) / h;
        let fy = (p.y + grid.half_extent) / h;
        let (j0, k0) = (fx.floor(), fy.floor());
        let (tx, ty) = (fx - j0, fy - k0);
        let j0 = (j0 as i64).rem_euclid(n as i64) as usize;
        let k0 = (k0 as i64).rem_euclid(n as i64) as usize;
        let (j1, k1) = ((j0 + 1) % n, (k0 + 1) % n);
        let w = 1.0 / (h * h);
        hist.values[j0 * n + k0] += w * (1.0 - tx) * (1.0 - ty);
        hist.values[j1 * n + k0] += w * tx * (1.0 - ty);
        hist.values[j0 * n + k1] += w * (1.0 - tx) * ty;
        hist.values[j1 * n + k1] += w * tx * ty;
    }
    // Kernel sampled at wrapped offsets so index 0 is the origin.
    let eval = MollifierEval::new(spec);
    let mut kern = Field::zeros(grid);
    for j in 0..n {
        let dx = grid.wrap(j as f64 * h);
        for k in 0..n {
            let dy = grid.wrap(k as f64 * h);
            kern.values[j * n + k] = eval.value(Vec2::new(dx, dy)) * h * h;
        }
    }
    let a = hist.to_spectral();
    let b = kern.to_spectral();
    let mut prod = a;
    prod.coeffs.iter_mut().zip(&b.coeffs).for_each(|(x, y)| *x *= y);
    prod.to_field()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::mollifier_value;
    use rand::{Rng, SeedableRng};

    fn gauss_spec(n: usize) -> MollifierSpec {
        MollifierSpec {
            alpha: 0.15,
            n_particles: n,
            profile: Profile::Gaussian { sigma: 1.0 },
        }
    }

    fn random_positions(n: usize, spread: f64, seed: u64) -> Vec<Vec2> {
        let mut r = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| Vec2::new(r.random_range(-spread..spread), r.random_range(-spread..spread)))
            .collect()
    }

    #[test]
    fn single_particle_is_the_mollifier() {
        let spec = gauss_spec(1);
        let grid = GridSpec::new(8.0, 64).unwrap();
        let d = mollified_empirical(&[Vec2::ZERO], &spec, grid, 1.0, DepositMethod::Direct);
        let want = Field::from_fn(grid, |x| mollifier_value(x, &spec));
        let err = d.field.sub(&want).unwrap().max_abs();
        assert!(err < 1e-15 * want.max_abs());
        assert!(!d.truncation_warning());
    }

    #[test]
    fn mass_and_midpoint() {
        let spec = MollifierSpec { alpha: 0.3, n_particles: 2, profile: Profile::Gaussian { sigma: 0.6 } };
        let grid = GridSpec::new(8.0, 128).unwrap();
        let a = Vec2::new(-0.5, 0.25);
        let b = Vec2::new(0.75, -0.5);
        let d = mollified_empirical(&[a, b], &spec, grid, 3.0, DepositMethod::Direct);
        assert!((d.field.integral() - 3.0).abs() < 1e-6 * 3.0);
        // midpoint between nodes (j,k) chosen on the grid
        let (j, k) = (64, 63);
        let x = grid.node(j, k);
        let want = 1.5 * (mollifier_value(x - a, &spec) + mollifier_value(x - b, &spec));
        assert!((d.field.at(j, k) - want).abs() < 1e-14 * want);
    }

    #[test]
    fn fast_path_matches_direct() {
        for n in [10usize, 300, 1000] {
            let spec = gauss_spec(n);
            let grid = GridSpec::new(8.0, 128).unwrap();
            let pos = random_positions(n, 3.0, n as u64);
            let d = mollified_empirical(&pos, &spec, grid, 1.0, DepositMethod::Direct).field;
            let f = mollified_empirical(&pos, &spec, grid, 1.0, DepositMethod::Fast).field;
            let peak = d.max();
            let dev = d.sub(&f).unwrap().max_abs();
            assert!(dev <= 1e-8 * peak, "n={n}: {dev:e} vs peak {peak}");
            assert!(f.min() >= -1e-12 * peak);
        }
    }

    #[test]
    fn bump_direct_and_cic() {
        let spec = MollifierSpec { alpha: 0.2, n_particles: 200, profile: Profile::Bump { radius: 4.0 } };
        let grid = GridSpec::new(8.0, 256).unwrap();
        let pos = random_positions(200, 3.0, 4);
        let d = mollified_empirical(&pos, &spec, grid, 1.0, DepositMethod::Direct).field;
        assert!((d.integral() - 1.0).abs() < 1e-6, "{}", d.integral());
        let f = mollified_empirical(&pos, &spec, grid, 1.0, DepositMethod::Fast).field;
        // CIC is second order in h/width
        let rel = d.sub(&f).unwrap().max_abs() / d.max();
        let hw = grid.spacing() / spec.width();
        assert!(rel < hw * hw, "{rel} vs {}", hw * hw);
    }

    #[test]
    fn boundary_particles_flag_truncation() {
        let spec = gauss_spec(3);
        let grid = GridSpec::new(8.0, 64).unwrap();
        let d = mollified_empirical(&[Vec2::new(7.9, 0.0), Vec2::ZERO], &spec, grid, 1.0, DepositMethod::Direct);
        assert_eq!(d.truncated, 1);
    }
}
