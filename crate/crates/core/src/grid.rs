//! Uniform periodic grids on `[-L, L)²`, physical and spectral fields, and
//! the FFT conventions shared by every spectral operation.
//!
//! Conventions: node `(j, k)` sits at `(-L + j h, -L + k h)` with `h = 2L/n`
//! and is stored at `j * n + k`. The forward transform is unnormalized, the
//! inverse carries `1/n²`. Wavenumbers are `ξ = (π/L)·m` with signed integer
//! `m ∈ [-n/2, n/2)`. Continuum scaling (`h²/n²` for Parseval) lives in
//! [`GridSpec::parseval_factor`] only.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::vec2::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub half_extent: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn new(half_extent: f64, n: usize) -> Result<Self> {
        let g = Self { half_extent, n };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.half_extent > 0.0 && self.half_extent.is_finite()) {
            return Err(invalid("grid.half_extent", "must be finite and > 0"));
        }
        if self.n < 16 || !self.n.is_power_of_two() {
            return Err(invalid(
                "grid.n",
                format!("must be a power of two >= 16, got {}", self.n),
            ));
        }
        Ok(())
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * self.half_extent / self.n as f64
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n * self.n
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    #[inline]
    pub fn coord(&self, j: usize) -> f64 {
        -self.half_extent + j as f64 * self.spacing()
    }

    #[inline]
    pub fn node(&self, j: usize, k: usize) -> Vec2 {
        Vec2::new(self.coord(j), self.coord(k))
    }

    /// Signed integer frequency of FFT index `m`.
    #[inline]
    pub fn signed_index(&self, m: usize) -> i64 {
        if m < self.n / 2 {
            m as i64
        } else {
            m as i64 - self.n as i64
        }
    }

    /// Angular wavenumber of FFT index `m`.
    #[inline]
    pub fn wavenumber(&self, m: usize) -> f64 {
        self.signed_index(m) as f64 * PI / self.half_extent
    }

    /// Wavenumber for odd-order derivatives: the Nyquist mode is dropped.
    #[inline]
    pub fn derivative_wavenumber(&self, m: usize) -> f64 {
        if m == self.n / 2 {
            0.0
        } else {
            self.wavenumber(m)
        }
    }

    /// `h²/n²`: converts `Σ|û|²` to a continuum `L²` norm squared.
    #[inline]
    pub fn parseval_factor(&self) -> f64 {
        let h = self.spacing();
        h * h / (self.n * self.n) as f64
    }

    /// Minimum-image displacement along one axis.
    #[inline]
    pub fn wrap(&self, d: f64) -> f64 {
        let period = 2.0 * self.half_extent;
        d - period * (d / period).round()
    }

    /// Spectral wavenumber of the largest index kept by the 2/3 rule.
    pub fn is_dealiased_out(&self, m: usize) -> bool {
        3 * self.signed_index(m).unsigned_abs() as usize > self.n
    }

    fn check_same(&self, other: &GridSpec) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Real samples on a [`GridSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

/// Discrete Fourier coefficients of a field, in FFT order.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    pub grid: GridSpec,
    pub coeffs: Vec<Complex64>,
}

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
        }
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(Vec2) -> f64) -> Self {
        let n = grid.n;
        let mut values = Vec::with_capacity(n * n);
        for j in 0..n {
            for k in 0..n {
                values.push(f(grid.node(j, k)));
            }
        }
        Self { grid, values }
    }

    #[inline]
    pub fn at(&self, j: usize, k: usize) -> f64 {
        self.values[j * self.grid.n + k]
    }

    /// `h² Σ u`.
    pub fn integral(&self) -> f64 {
        let h = self.grid.spacing();
        h * h * self.values.iter().sum::<f64>()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.grid.check_same(&other.grid)?;
        Ok(Field {
            grid: self.grid,
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| v * c)
    }

    pub fn to_spectral(&self) -> SpectralField {
        let coeffs = self.values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        let mut s = SpectralField {
            grid: self.grid,
            coeffs,
        };
        fft2(&mut s.coeffs, self.grid.n, false);
        s
    }
}

impl SpectralField {
    /// Inverse transform, keeping the real part.
    pub fn to_field(&self) -> Field {
        let mut c = self.coeffs.clone();
        fft2(&mut c, self.grid.n, true);
        Field {
            grid: self.grid,
            values: c.into_iter().map(|z| z.re).collect(),
        }
    }

    /// Multiply coefficient `(mx, my)` by `f(ξx, ξy, mx, my)`.
    pub fn apply(&self, f: impl Fn(f64, f64, usize, usize) -> Complex64) -> SpectralField {
        let g = self.grid;
        let n = g.n;
        let mut coeffs = self.coeffs.clone();
        for mx in 0..n {
            let kx = g.wavenumber(mx);
            for my in 0..n {
                let ky = g.wavenumber(my);
                coeffs[mx * n + my] *= f(kx, ky, mx, my);
            }
        }
        SpectralField { grid: g, coeffs }
    }

    /// `Σ w(|ξ|²) |û|² · h²/n²`.
    pub fn weighted_energy(&self, w: impl Fn(f64) -> f64) -> f64 {
        let g = self.grid;
        let n = g.n;
        let mut acc = 0.0;
        for mx in 0..n {
            let kx = g.wavenumber(mx);
            for my in 0..n {
                let ky = g.wavenumber(my);
                acc += w(kx * kx + ky * ky) * self.coeffs[mx * n + my].norm_sqr();
            }
        }
        acc * g.parseval_factor()
    }
}

thread_local! {
    static PLANS: RefCell<HashMap<(usize, bool), Arc<dyn Fft<f64>>>> = RefCell::new(HashMap::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANS.with(|cache| {
        cache
            .borrow_mut()
            .entry((n, inverse))
            .or_insert_with(|| {
                let mut planner = FftPlanner::new();
                if inverse {
                    planner.plan_fft_inverse(n)
                } else {
                    planner.plan_fft_forward(n)
                }
            })
            .clone()
    })
}

fn transpose(data: &mut [Complex64], n: usize) {
    for i in 0..n {
        for j in (i + 1)..n {
            data.swap(i * n + j, j * n + i);
        }
    }
}

/// In-place 2-d FFT of an `n×n` row-major array. The inverse includes `1/n²`.
pub fn fft2(data: &mut [Complex64], n: usize, inverse: bool) {
    assert_eq!(data.len(), n * n);
    let p = plan(n, inverse);
    p.process(data);
    transpose(data, n);
    p.process(data);
    transpose(data, n);
    if inverse {
        let s = 1.0 / (n * n) as f64;
        data.iter_mut().for_each(|z| *z *= s);
    }
}

/// Spectral gradient `(∂x u, ∂y u)`.
pub fn gradient(field: &Field) -> (Field, Field) {
    let s = field.to_spectral();
    gradient_spectral(&s)
}

pub fn gradient_spectral(s: &SpectralField) -> (Field, Field) {
    let g = s.grid;
    let dx = s.apply(|_, _, mx, _| Complex64::new(0.0, g.derivative_wavenumber(mx)));
    let dy = s.apply(|_, _, _, my| Complex64::new(0.0, g.derivative_wavenumber(my)));
    (dx.to_field(), dy.to_field())
}

pub fn laplacian(field: &Field) -> Field {
    field
        .to_spectral()
        .apply(|kx, ky, _, _| Complex64::new(-(kx * kx + ky * ky), 0.0))
        .to_field()
}

/// Bessel-potential norm `‖(1+|ξ|²)^{s/2} û‖`.
pub fn h_norm(field: &Field, s: f64) -> f64 {
    h_norm_spectral(&field.to_spectral(), s)
}

pub fn h_norm_spectral(spec: &SpectralField, s: f64) -> f64 {
    spec.weighted_energy(|k2| (1.0 + k2).powf(s)).sqrt()
}

/// `Re Σ (1+|ξ|²)^β û conj(v̂)` with continuum scaling.
pub fn h_pairing(f: &Field, g: &Field, beta: f64) -> Result<f64> {
    f.grid.check_same(&g.grid)?;
    Ok(h_pairing_spectral(&f.to_spectral(), &g.to_spectral(), beta))
}

pub fn h_pairing_spectral(f: &SpectralField, g: &SpectralField, beta: f64) -> f64 {
    let grid = f.grid;
    let n = grid.n;
    let mut acc = 0.0;
    for mx in 0..n {
        let kx = grid.wavenumber(mx);
        for my in 0..n {
            let ky = grid.wavenumber(my);
            let i = mx * n + my;
            acc += (1.0 + kx * kx + ky * ky).powf(beta) * (f.coeffs[i] * g.coeffs[i].conj()).re;
        }
    }
    acc * grid.parseval_factor()
}

/// Smooth radial cutoff: 1 on `|x| ≤ r`, 0 on `|x| ≥ 1.2 r`, C^∞ between.
pub fn smooth_window(x: Vec2, radius: f64) -> f64 {
    let t = (x.norm() - radius) / (0.2 * radius);
    if t <= 0.0 {
        return 1.0;
    }
    if t >= 1.0 {
        return 0.0;
    }
    let psi = |s: f64| if s > 0.0 { (-1.0 / s).exp() } else { 0.0 };
    let a = psi(1.0 - t);
    a / (a + psi(t))
}

/// Localized Sobolev norm proxy: `h_norm(χ_R · u, s)`.
pub fn h_local_norm(field: &Field, s: f64, radius: f64) -> Result<f64> {
    if !(radius > 0.0 && radius < field.grid.half_extent) {
        return Err(invalid(
            "radius",
            format!("must lie in (0, {}), got {radius}", field.grid.half_extent),
        ));
    }
    let g = field.grid;
    let n = g.n;
    let mut windowed = field.clone();
    for j in 0..n {
        for k in 0..n {
            windowed.values[j * n + k] *= smooth_window(g.node(j, k), radius);
        }
    }
    Ok(h_norm(&windowed, s))
}

/// Grid quadrature `(h² Σ|u|^p)^{1/p}`; the max norm for `p = ∞`.
pub fn lp_norm(field: &Field, p: f64) -> f64 {
    if p.is_infinite() {
        return field.max_abs();
    }
    assert!(p >= 1.0, "lp_norm needs p >= 1");
    let h = field.grid.spacing();
    let sum: f64 = if p == 1.0 {
        field.values.iter().map(|v| v.abs()).sum()
    } else if p == 2.0 {
        field.values.iter().map(|v| v * v).sum()
    } else {
        field.values.iter().map(|v| v.abs().powf(p)).sum()
    };
    (h * h * sum).powf(1.0 / p)
}

/// Grid `L²` norm `h (Σ u²)^{1/2}`.
pub fn l2_norm(field: &Field) -> f64 {
    lp_norm(field, 2.0)
}
