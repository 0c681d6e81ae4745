//! Numerical laboratory for the moderately interacting particle
//! approximation of the parabolic-elliptic Keller-Segel equation in the
//! plane.
//!
//! - [`kernel`]: Poisson kernel, drift cutoff, mollifier and mollified kernel.
//! - [`particles`]: sampling, interaction drift and Euler–Maruyama stepping.
//! - [`grid`] / [`density`]: periodic fields, Sobolev norms, `g^N` deposition.
//! - [`pde`]: pseudo-spectral solver for the equation with and without cutoff.
//! - [`analysis`]: convergence studies, Itô residuals, inequality suites.
//! - [`io`]: binary and CSV containers.

pub mod analysis;
pub mod density;
pub mod error;
pub mod exact_sum;
pub mod grid;
pub mod io;
pub mod kernel;
pub mod particles;
pub mod pde;
pub mod quad;
pub mod rng;
pub mod vec2;

pub use error::{Error, Result};
pub use vec2::Vec2;
