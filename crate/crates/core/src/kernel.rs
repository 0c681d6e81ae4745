//! Closed-form kernels: the planar Poisson kernel and its derivatives, the
//! smooth drift cutoff, the scaled mollifier and the mollified interaction
//! kernel.
//!
//! The Green function is `G(x) = -(1/2π) log|x|²`, so `ΔG = -2δ₀`. Every
//! derivative is multiplied by a configurable `kernel_scale` (default 1) so
//! that the `ΔG = -δ₀` normalization can be selected without touching the
//! call sites.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::quad::GaussLegendre;
use crate::vec2::Vec2;

/// Symmetric 2×2 matrix stored as `[[xx, xy], [yx, yy]]`.
pub type Mat2 = [[f64; 2]; 2];

/// Poisson kernel with a global normalization factor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenKernel {
    pub scale: f64,
}

impl Default for GreenKernel {
    fn default() -> Self {
        Self { scale: 1.0 }
    }
}

impl GreenKernel {
    pub fn new(scale: f64) -> Self {
        Self { scale }
    }

    pub fn green(&self, x: Vec2) -> Result<f64> {
        let r2 = x.norm_sq();
        if r2 == 0.0 {
            return Err(Error::SingularPoint);
        }
        Ok(-self.scale * r2.ln() / (2.0 * PI))
    }

    pub fn grad(&self, x: Vec2) -> Result<Vec2> {
        let r2 = x.norm_sq();
        if r2 == 0.0 {
            return Err(Error::SingularPoint);
        }
        Ok(self.grad_unchecked(x, r2))
    }

    /// `-scale·x/(π r²)` with `r2 = |x|²` supplied by the caller.
    #[inline]
    pub(crate) fn grad_unchecked(&self, x: Vec2, r2: f64) -> Vec2 {
        let c = -self.scale / (PI * r2);
        Vec2::new(c * x.x, c * x.y)
    }

    /// Analytic Hessian of the scaled `G`.
    pub fn hess(&self, x: Vec2) -> Result<Mat2> {
        let r2 = x.norm_sq();
        if r2 == 0.0 {
            return Err(Error::SingularPoint);
        }
        let c = self.scale / (PI * r2 * r2);
        let xy = 2.0 * c * x.x * x.y;
        Ok([
            [c * (2.0 * x.x * x.x - r2), xy],
            [xy, c * (2.0 * x.y * x.y - r2)],
        ])
    }
}

/// `G(x) = -(1/2π) log|x|²`.
pub fn green(x: Vec2) -> Result<f64> {
    GreenKernel::default().green(x)
}

/// `∇G(x) = -x/(π|x|²)`.
pub fn grad_green(x: Vec2) -> Result<Vec2> {
    GreenKernel::default().grad(x)
}

pub fn hess_green(x: Vec2) -> Result<Mat2> {
    GreenKernel::default().hess(x)
}

/// The matrix `(g_ij)` with entries `(-2|x|² + 4 x_i²)/|x|⁴` and
/// `4 x₁x₂/|x|⁴`, i.e. the Hessian of `-log|x|²`. It equals
/// `2π · hess_green(x)`.
pub fn log_sq_hessian(x: Vec2) -> Result<Mat2> {
    let r2 = x.norm_sq();
    if r2 == 0.0 {
        return Err(Error::SingularPoint);
    }
    let r4 = r2 * r2;
    let off = 4.0 * x.x * x.y / r4;
    Ok([
        [(-2.0 * r2 + 4.0 * x.x * x.x) / r4, off],
        [off, (-2.0 * r2 + 4.0 * x.y * x.y) / r4],
    ])
}

/// Cutoff level `A` of the drift truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CutoffParams {
    pub a: f64,
}

impl CutoffParams {
    pub fn new(a: f64) -> Result<Self> {
        if !(a > 0.0 && a.is_finite()) {
            return Err(invalid("cutoff.a", format!("must be finite and > 0, got {a}")));
        }
        Ok(Self { a })
    }
}

/// Quintic blend on `[0, 1]`: `q(0)=0, q'(0)=1, q''(0)=0` and
/// `q(1)=q'(1)=q''(1)=0`.
#[inline]
pub fn blend(t: f64) -> f64 {
    t * (1.0 + t * t * (-6.0 + t * (8.0 - 3.0 * t)))
}

#[inline]
pub fn blend_prime(t: f64) -> f64 {
    1.0 + t * t * (-18.0 + t * (32.0 - 15.0 * t))
}

/// Scalar cutoff: identity on `[-A, A]`, `±A` beyond `A+1`, odd and C² in between.
#[inline]
pub fn f_a(v: f64, params: CutoffParams) -> f64 {
    let a = params.a;
    let m = v.abs();
    if m <= a {
        v
    } else if m >= a + 1.0 {
        a.copysign(v)
    } else {
        (a + blend(m - a)).copysign(v)
    }
}

/// Derivative of [`f_a`].
#[inline]
pub fn f_a_prime(v: f64, params: CutoffParams) -> f64 {
    let a = params.a;
    let m = v.abs();
    if m <= a {
        1.0
    } else if m >= a + 1.0 {
        0.0
    } else {
        blend_prime(m - a)
    }
}

/// Componentwise cutoff `F_A`.
#[inline]
pub fn cutoff(v: Vec2, params: CutoffParams) -> Vec2 {
    Vec2::new(f_a(v.x, params), f_a(v.y, params))
}

/// Base mollifier profile. Both are even, smooth probability densities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Profile {
    /// Isotropic normal density with per-component standard deviation `sigma`.
    Gaussian { sigma: f64 },
    /// `C·exp(-1/(1-|x|²/R²))` on the disk of radius `R`.
    Bump { radius: f64 },
}

/// `V^N(x) = N^{2α} V(N^α x)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    pub alpha: f64,
    pub n_particles: usize,
    pub profile: Profile,
}

// ∫₀¹ exp(-1/(1-s)) ds, the radial mass integral of the unnormalized bump in s = r²/R².
fn bump_mass_integral() -> f64 {
    bump_cumulative(1.0)
}

fn bump_density_s(s: f64) -> f64 {
    if s >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - s)).exp()
    }
}

fn bump_cumulative(s: f64) -> f64 {
    let gl = GaussLegendre::new(20);
    let s = s.clamp(0.0, 1.0);
    let panels = ((s * 64.0).ceil() as usize).max(1);
    gl.integrate_composite(0.0, s, panels, bump_density_s)
}

impl MollifierSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(invalid(
                "mollifier.alpha",
                format!("must lie in (0, 1], got {}", self.alpha),
            ));
        }
        if self.n_particles == 0 {
            return Err(invalid("mollifier.n_particles", "must be at least 1"));
        }
        match self.profile {
            Profile::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => Err(invalid(
                "mollifier.profile.sigma",
                format!("must be finite and > 0, got {sigma}"),
            )),
            Profile::Bump { radius } if !(radius > 0.0 && radius.is_finite()) => Err(invalid(
                "mollifier.profile.radius",
                format!("must be finite and > 0, got {radius}"),
            )),
            _ => Ok(()),
        }
    }

    /// `N^α`.
    pub fn dilation(&self) -> f64 {
        (self.n_particles as f64).powf(self.alpha)
    }

    /// Length scale of `V^N`: `σ N^{-α}` for the gaussian, `R N^{-α}` for the bump.
    pub fn width(&self) -> f64 {
        let base = match self.profile {
            Profile::Gaussian { sigma } => sigma,
            Profile::Bump { radius } => radius,
        };
        base / self.dilation()
    }

    /// Radius beyond which `V^N` is negligible (below ~1e-300 relative to
    /// its peak for the gaussian, exactly zero for the bump).
    pub fn support_radius(&self) -> f64 {
        match self.profile {
            Profile::Gaussian { .. } => 38.0 * self.width(),
            Profile::Bump { .. } => self.width(),
        }
    }

    /// Unscaled base profile `V(x)`.
    pub fn base_value(&self, x: Vec2) -> f64 {
        match self.profile {
            Profile::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                (-x.norm_sq() / (2.0 * s2)).exp() / (2.0 * PI * s2)
            }
            Profile::Bump { radius } => {
                let s = x.norm_sq() / (radius * radius);
                bump_density_s(s) / (PI * radius * radius * bump_mass_integral())
            }
        }
    }

    pub fn value(&self, x: Vec2) -> f64 {
        let d = self.dilation();
        d * d * self.base_value(x * d)
    }
}

/// `N^{2α} V(N^α x)` for a single point. Builds a [`MollifierEval`]; prefer
/// reusing one in loops.
pub fn mollifier_value(x: Vec2, spec: &MollifierSpec) -> f64 {
    MollifierEval::new(spec).value(x)
}

/// Precomputed evaluator for `V^N`.
#[derive(Debug, Clone, Copy)]
pub struct MollifierEval {
    kind: EvalKind,
}

#[derive(Debug, Clone, Copy)]
enum EvalKind {
    Gaussian { inv_two_eps2: f64, peak: f64 },
    Bump { inv_r2: f64, peak_norm: f64 },
}

impl MollifierEval {
    pub fn new(spec: &MollifierSpec) -> Self {
        let w = spec.width();
        let kind = match spec.profile {
            Profile::Gaussian { .. } => EvalKind::Gaussian {
                inv_two_eps2: 1.0 / (2.0 * w * w),
                peak: 1.0 / (2.0 * PI * w * w),
            },
            Profile::Bump { .. } => EvalKind::Bump {
                inv_r2: 1.0 / (w * w),
                peak_norm: 1.0 / (PI * w * w * bump_mass_integral()),
            },
        };
        Self { kind }
    }

    #[inline]
    pub fn value(&self, x: Vec2) -> f64 {
        match self.kind {
            EvalKind::Gaussian { inv_two_eps2, peak } => peak * (-x.norm_sq() * inv_two_eps2).exp(),
            EvalKind::Bump { inv_r2, peak_norm } => peak_norm * bump_density_s(x.norm_sq() * inv_r2),
        }
    }
}

const TAYLOR_SWITCH: f64 = 1e-8;

/// Evaluator for the mollified interaction kernel `K^N = ∇G ∗ V^N`.
///
/// For a radial profile, `K^N(x) = -scale·x·m(|x|)/(π|x|²)` where `m(r)` is
/// the mass of `V^N` inside the disk of radius `r`. The gaussian has
/// `m(r) = 1 - exp(-r²/2ε²)`; the bump uses a tabulated cumulative mass.
#[derive(Debug, Clone)]
pub struct MollifiedKernel {
    green: GreenKernel,
    kind: KernelKind,
}

#[derive(Debug, Clone)]
enum KernelKind {
    Gaussian { inv_two_eps2: f64 },
    Bump { inv_r2: f64, table: BumpMassTable },
}

impl MollifiedKernel {
    pub fn new(spec: &MollifierSpec, green: GreenKernel) -> Self {
        let w = spec.width();
        let kind = match spec.profile {
            Profile::Gaussian { .. } => KernelKind::Gaussian {
                inv_two_eps2: 1.0 / (2.0 * w * w),
            },
            Profile::Bump { .. } => KernelKind::Bump {
                inv_r2: 1.0 / (w * w),
                table: BumpMassTable::build(4096),
            },
        };
        Self { green, kind }
    }

    pub fn green(&self) -> GreenKernel {
        self.green
    }

    #[inline]
    pub fn eval(&self, x: Vec2) -> Vec2 {
        let r2 = x.norm_sq();
        // -scale/π · m(r)/r², both branches keep the removable singularity finite.
        let mass_over_r2 = match &self.kind {
            KernelKind::Gaussian { inv_two_eps2 } => {
                let u = r2 * inv_two_eps2;
                if u < TAYLOR_SWITCH {
                    inv_two_eps2 * (1.0 - 0.5 * u)
                } else if u > 40.0 {
                    // exp(-40) < 2^-57: the mass is 1 to the last bit.
                    1.0 / r2
                } else if u > 0.5 {
                    // 1 - e^{-u} >= 0.39 here, so the subtraction is benign
                    // and exp is much cheaper than exp_m1.
                    (1.0 - (-u).exp()) / r2
                } else {
                    -(-u).exp_m1() / r2
                }
            }
            KernelKind::Bump { inv_r2, table } => {
                let s = r2 * inv_r2;
                if s >= 1.0 {
                    1.0 / r2
                } else {
                    table.mass_over_s(s) * inv_r2
                }
            }
        };
        let c = -self.green.scale * mass_over_r2 / PI;
        Vec2::new(c * x.x, c * x.y)
    }

    /// Distance beyond which `|K^N - ∇G|` is at most `tol` per component.
    pub fn tail_radius(&self, tol: f64) -> f64 {
        match &self.kind {
            KernelKind::Gaussian { inv_two_eps2 } => {
                let eps = (0.5 / inv_two_eps2).sqrt();
                let scale = self.green.scale.abs();
                // |∇G - K^N| = scale·exp(-r²/2ε²)/(π r); decreasing in r.
                let excess = |r: f64| scale * (-r * r * inv_two_eps2).exp() / (PI * r);
                let mut r = eps;
                while excess(r) > tol {
                    r *= 1.05;
                }
                r
            }
            KernelKind::Bump { inv_r2, .. } => (1.0 / inv_r2).sqrt(),
        }
    }
}

/// `K^N(x)` for a single point. Builds the evaluator each call.
pub fn mollified_grad_green(x: Vec2, spec: &MollifierSpec) -> Vec2 {
    MollifiedKernel::new(spec, GreenKernel::default()).eval(x)
}

/// Cumulative radial mass of the normalized bump as a function of
/// `s = r²/R²`, tabulated on a uniform grid with cubic Hermite interpolation.
#[derive(Debug, Clone)]
struct BumpMassTable {
    step: f64,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

impl BumpMassTable {
    fn build(intervals: usize) -> Self {
        let gl = GaussLegendre::new(12);
        let step = 1.0 / intervals as f64;
        let mut values = Vec::with_capacity(intervals + 1);
        let mut acc = 0.0;
        values.push(0.0);
        for k in 0..intervals {
            let a = k as f64 * step;
            acc += gl.integrate(a, a + step, bump_density_s);
            values.push(acc);
        }
        let total = acc;
        for v in values.iter_mut() {
            *v /= total;
        }
        let slopes = (0..=intervals)
            .map(|k| bump_density_s(k as f64 * step) / total)
            .collect();
        Self {
            step,
            values,
            slopes,
        }
    }

    /// `F(s)/s`, finite at `s = 0`.
    fn mass_over_s(&self, s: f64) -> f64 {
        if s < 1e-6 {
            // F(s) ≈ F'(0)·(s - s²/2)
            return self.slopes[0] * (1.0 - 0.5 * s);
        }
        let pos = s / self.step;
        let k = (pos.floor() as usize).min(self.values.len() - 2);
        let t = pos - k as f64;
        let h = self.step;
        let (y0, y1) = (self.values[k], self.values[k + 1]);
        let (d0, d1) = (self.slopes[k] * h, self.slopes[k + 1] * h);
        let t2 = t * t;
        let t3 = t2 * t;
        let f = (2.0 * t3 - 3.0 * t2 + 1.0) * y0
            + (t3 - 2.0 * t2 + t) * d0
            + (-2.0 * t3 + 3.0 * t2) * y1
            + (t3 - t2) * d1;
        f / s
    }
}
