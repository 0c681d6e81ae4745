//! Separable polynomial-times-gaussian test functions. Their convolutions
//! with a gaussian mollifier stay in the same class, so `V^N ∗ φ` and its
//! derivatives are available in closed form.

use serde::Serialize;

use crate::grid::{Field, GridSpec};
use crate::vec2::Vec2;

/// `P(x − c) · exp(−(x − c)²/2w²)` on the line; without a width the
/// gaussian factor is dropped.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolyGauss {
    pub center: f64,
    pub width: Option<f64>,
    /// Coefficients of `P` in ascending powers.
    pub coeffs: Vec<f64>,
}

impl PolyGauss {
    pub fn new(center: f64, width: Option<f64>, coeffs: Vec<f64>) -> Self {
        Self { center, width, coeffs }
    }

    pub fn eval(&self, x: f64) -> f64 {
        let u = x - self.center;
        let p = self.coeffs.iter().rev().fold(0.0, |acc, c| acc * u + c);
        match self.width {
            Some(w) => p * (-u * u / (2.0 * w * w)).exp(),
            None => p,
        }
    }

    /// `(P' − u P / w²) e^{…}`.
    pub fn derivative(&self) -> Self {
        let mut d: Vec<f64> = self
            .coeffs
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, c)| k as f64 * c)
            .collect();
        if let Some(w) = self.width {
            d.resize(self.coeffs.len() + 1, 0.0);
            for (k, c) in self.coeffs.iter().enumerate() {
                d[k + 1] -= c / (w * w);
            }
        }
        if d.is_empty() {
            d.push(0.0);
        }
        Self {
            center: self.center,
            width: self.width,
            coeffs: d,
        }
    }

    /// Convolution with the centred gaussian of standard deviation `eps`.
    pub fn smoothed(&self, eps: f64) -> Self {
        if eps == 0.0 {
            return self.clone();
        }
        // Q(u) = amp · E[P(λu + s Z)] with Z standard normal.
        let (lambda, s, amp, width) = match self.width {
            Some(w) => {
                let big = (w * w + eps * eps).sqrt();
                let lambda = (w / big).powi(2);
                (lambda, w * eps / big, w / big, Some(big))
            }
            None => (1.0, eps, 1.0, None),
        };
        let deg = self.coeffs.len();
        let mut q = vec![0.0; deg];
        for (k, &p) in self.coeffs.iter().enumerate() {
            if p == 0.0 {
                continue;
            }
            for j in 0..=k {
                let m = k - j;
                if m % 2 == 1 {
                    continue;
                }
                q[j] += p * binomial(k, j) * lambda.powi(j as i32) * s.powi(m as i32) * double_factorial(m);
            }
        }
        q.iter_mut().for_each(|c| *c *= amp);
        Self {
            center: self.center,
            width,
            coeffs: q,
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `E[Z^m] = (m−1)!!` for even `m`.
fn double_factorial(m: usize) -> f64 {
    (1..m).step_by(2).fold(1.0, |acc, k| acc * k as f64)
}

/// `φ(x, y) = f(x) g(y)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TestFunction {
    pub name: &'static str,
    pub fx: PolyGauss,
    pub fy: PolyGauss,
}

impl TestFunction {
    pub fn value(&self, p: Vec2) -> f64 {
        self.fx.eval(p.x) * self.fy.eval(p.y)
    }

    pub fn sample(&self, grid: GridSpec) -> Field {
        Field::from_fn(grid, |p| self.value(p))
    }

    /// `V ∗ φ` for the gaussian mollifier of width `eps`, with derivatives.
    pub fn smoothed(&self, eps: f64) -> SmoothedTest {
        SmoothedTest::new(self.fx.smoothed(eps), self.fy.smoothed(eps))
    }
}

/// A separable function with its first and second derivatives prepared.
#[derive(Debug, Clone)]
pub struct SmoothedTest {
    x: [PolyGauss; 3],
    y: [PolyGauss; 3],
}

impl SmoothedTest {
    fn new(fx: PolyGauss, fy: PolyGauss) -> Self {
        let (dx, dy) = (fx.derivative(), fy.derivative());
        let (ddx, ddy) = (dx.derivative(), dy.derivative());
        Self {
            x: [fx, dx, ddx],
            y: [fy, dy, ddy],
        }
    }

    /// `(ψ, ∇ψ, Δψ)` at `p`.
    pub fn jet(&self, p: Vec2) -> (f64, Vec2, f64) {
        let [a0, a1, a2] = [self.x[0].eval(p.x), self.x[1].eval(p.x), self.x[2].eval(p.x)];
        let [b0, b1, b2] = [self.y[0].eval(p.y), self.y[1].eval(p.y), self.y[2].eval(p.y)];
        (a0 * b0, Vec2::new(a1 * b0, a0 * b1), a2 * b0 + a0 * b2)
    }
}

/// The fixed battery of eight test functions used by every report.
pub fn battery() -> Vec<TestFunction> {
    let g = |c: f64, w: f64| PolyGauss::new(c, Some(w), vec![1.0]);
    let poly = |w: f64, coeffs: Vec<f64>| PolyGauss::new(0.0, Some(w), coeffs);
    let one = PolyGauss::new(0.0, None, vec![1.0]);
    vec![
        TestFunction { name: "constant", fx: one.clone(), fy: one },
        TestFunction { name: "gauss_w1", fx: g(0.0, 1.0), fy: g(0.0, 1.0) },
        TestFunction { name: "gauss_w0.5", fx: g(0.0, 0.5), fy: g(0.0, 0.5) },
        TestFunction { name: "gauss_w2", fx: g(0.0, 2.0), fy: g(0.0, 2.0) },
        TestFunction { name: "shifted_bump", fx: g(1.0, 0.6), fy: g(-0.5, 0.6) },
        TestFunction { name: "hermite_x", fx: poly(1.0, vec![0.0, 1.0]), fy: g(0.0, 1.0) },
        TestFunction { name: "hermite_xy", fx: poly(1.2, vec![0.0, 1.0]), fy: poly(1.2, vec![0.0, 1.0]) },
        TestFunction { name: "hermite_2", fx: poly(1.0, vec![-1.0, 0.0, 1.0]), fy: g(0.0, 1.5) },
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::GaussLegendre;

    #[test]
    fn battery_has_eight_distinct_functions() {
        let b = battery();
        assert_eq!(b.len(), 8);
        let mut names: Vec<_> = b.iter().map(|f| f.name).collect();
        names.dedup();
        assert_eq!(names.len(), 8);
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let h = 1e-4;
        for f in battery() {
            for p in [PolyGauss::new(0.3, Some(0.8), vec![0.5, -1.0, 2.0]), f.fx.clone(), f.fy.clone()] {
                let d = p.derivative();
                for x in [-1.3, 0.0, 0.45, 2.0] {
                    let fd = (p.eval(x + h) - p.eval(x - h)) / (2.0 * h);
                    assert!((d.eval(x) - fd).abs() < 1e-7, "{} at {x}", f.name);
                }
            }
        }
    }

    #[test]
    fn smoothing_matches_quadrature() {
        let gl = GaussLegendre::new(40);
        let eps = 0.4;
        let kernel = |t: f64| (-t * t / (2.0 * eps * eps)).exp() / ((2.0 * std::f64::consts::PI).sqrt() * eps);
        for p in [
            PolyGauss::new(0.3, Some(0.8), vec![0.5, -1.0, 2.0, 0.25]),
            PolyGauss::new(0.0, None, vec![1.0, 0.0, 3.0]),
        ] {
            let s = p.smoothed(eps);
            for x in [-1.0, 0.2, 1.7] {
                let want = gl.integrate_composite(-10.0 * eps, 10.0 * eps, 16, |t| p.eval(x - t) * kernel(t));
                assert!((s.eval(x) - want).abs() < 1e-12, "{x}: {} vs {want}", s.eval(x));
            }
        }
    }

    #[test]
    fn jet_laplacian_of_gaussian() {
        let f = &battery()[1];
        let s = f.smoothed(0.0);
        let p = Vec2::new(0.7, -0.2);
        let (v, g, l) = s.jet(p);
        let r2 = p.norm_sq();
        assert!((v - (-r2 / 2.0).exp()).abs() < 1e-15);
        assert!((g - p * -(-r2 / 2.0).exp()).norm() < 1e-15);
        assert!((l - (r2 - 2.0) * (-r2 / 2.0).exp()).abs() < 1e-14);
    }
}
