//! Moment monitors along a particle trajectory: `‖g_t‖_{β,2}^p` per
//! snapshot and a Sobolev–Slobodeckij seminorm of `t ↦ g_t` in `H^{-2}`.

use serde::{Deserialize, Serialize};

use crate::density::{mollified_empirical, DepositMethod};
use crate::error::{invalid, Result};
use crate::grid::{h_norm_spectral, GridSpec, SpectralField};
use crate::kernel::MollifierSpec;
use crate::particles::Snapshot;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentOptions {
    pub beta: f64,
    pub p: f64,
    /// Time-regularity exponent of the increment seminorm, in `(0, 1/2)`.
    pub eta: f64,
    pub q: f64,
}

impl Default for MomentOptions {
    fn default() -> Self {
        Self {
            beta: 1.5,
            p: 2.0,
            eta: 0.25,
            q: 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentSeries {
    pub times: Vec<f64>,
    /// `‖g_t‖_{β,2}^p` at each snapshot.
    pub norm_p: Vec<f64>,
    /// `(Σ_{i≠j} ‖g_i − g_j‖_{−2,2}^q / |t_i − t_j|^{1+ηq} · Δt²)^{1/q}`.
    pub increment_seminorm: f64,
}

impl MomentSeries {
    pub fn max_norm(&self, p: f64) -> f64 {
        self.norm_p.iter().fold(0.0f64, |m, v| m.max(v.powf(1.0 / p)))
    }
}

/// Moment series of `g^N_t` built from `snapshots` (uniform time mesh expected).
pub fn moment_monitor(
    snapshots: &[Snapshot],
    spec: &MollifierSpec,
    grid: GridSpec,
    mass: f64,
    opts: MomentOptions,
) -> Result<MomentSeries> {
    let spectra: Vec<SpectralField> = snapshots
        .iter()
        .map(|s| {
            mollified_empirical(&s.positions, spec, grid, mass, DepositMethod::Direct)
                .field
                .to_spectral()
        })
        .collect();
    let times: Vec<f64> = snapshots.iter().map(|s| s.t).collect();
    series_from_spectra(&times, &spectra, opts)
}

pub(crate) fn series_from_spectra(times: &[f64], spectra: &[SpectralField], opts: MomentOptions) -> Result<MomentSeries> {
    if !(opts.eta > 0.0 && opts.eta < 0.5) {
        return Err(invalid("eta", "must lie in (0, 1/2)"));
    }
    if !(opts.p >= 1.0 && opts.q >= 1.0) {
        return Err(invalid("p", "p and q must be >= 1"));
    }
    let norm_p = spectra.iter().map(|s| h_norm_spectral(s, opts.beta).powf(opts.p)).collect();
    let mut acc = 0.0;
    if times.len() > 1 {
        let span = times[times.len() - 1] - times[0];
        let dt = span / (times.len() - 1) as f64;
        for i in 0..spectra.len() {
            for j in 0..spectra.len() {
                if i == j {
                    continue;
                }
                let diff = SpectralField {
                    grid: spectra[i].grid,
                    coeffs: spectra[i].coeffs.iter().zip(&spectra[j].coeffs).map(|(a, b)| a - b).collect(),
                };
                let d = h_norm_spectral(&diff, -2.0);
                acc += d.powf(opts.q) / (times[i] - times[j]).abs().powf(1.0 + opts.eta * opts.q) * dt * dt;
            }
        }
    }
    Ok(MomentSeries {
        times: times.to_vec(),
        norm_p,
        increment_seminorm: acc.powf(1.0 / opts.q),
    })
}
