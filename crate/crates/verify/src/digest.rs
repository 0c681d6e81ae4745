//! SHA-256 digests of numerical results, taken over the exact bit patterns
//! of every `f64` so that two runs agree only if they agree bit-for-bit.

use mks_core::analysis::ConvergenceReport;
use mks_core::grid::Field;
use mks_core::particles::Snapshot;
use mks_core::pde::PdeSolution;
use sha2::{Digest, Sha256};

#[derive(Default)]
pub struct Digester(Sha256);

impl Digester {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.0.update(v.to_bits().to_le_bytes());
        self
    }

    pub fn f64s(&mut self, vs: &[f64]) -> &mut Self {
        for &v in vs {
            self.f64(v);
        }
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.0.update(v.to_le_bytes());
        self
    }

    pub fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u64(b.len() as u64);
        self.0.update(b);
        self
    }

    pub fn finish(self) -> String {
        hex::encode(self.0.finalize())
    }
}

pub fn digest_bytes(b: &[u8]) -> String {
    hex::encode(Sha256::digest(b))
}

pub fn digest_snapshots(snapshots: &[Snapshot]) -> String {
    let mut d = Digester::new();
    for s in snapshots {
        d.f64(s.t).u64(s.positions.len() as u64);
        for p in &s.positions {
            d.f64(p.x).f64(p.y);
        }
    }
    d.finish()
}

pub fn digest_fields<'a>(fields: impl IntoIterator<Item = &'a Field>) -> String {
    let mut d = Digester::new();
    for f in fields {
        d.f64(f.grid.half_extent).u64(f.grid.n as u64).f64s(&f.values);
    }
    d.finish()
}

/// Snapshots, blow-up report and `A0`; timings are excluded.
pub fn digest_pde(sol: &PdeSolution) -> String {
    let mut d = Digester::new();
    for s in &sol.snapshots {
        d.f64(s.t).f64s(&s.rho.values);
    }
    d.u64(sol.report.blew_up as u64);
    d.bytes(format!("{:?}", sol.report.trigger).as_bytes());
    d.f64(sol.report.t_detected.unwrap_or(f64::NAN));
    for &(t, v) in &sol.report.peak_linf_history {
        d.f64(t).f64(v);
    }
    d.f64(sol.a0_estimate);
    d.finish()
}

/// Every replica metric of every rung; wall-clock times are excluded.
pub fn digest_convergence(report: &ConvergenceReport) -> String {
    let mut d = Digester::new();
    d.f64(report.a0_estimate).f64(report.cutoff_a).f64(report.reference_moment);
    for r in &report.rungs {
        d.u64(r.n as u64);
        for m in &r.replicas {
            d.u64(m.seed).f64(m.local).f64(m.moment).f64(m.initial_norm).f64s(&m.weak_per_function);
            d.u64(m.truncated as u64);
        }
    }
    d.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn of(vs: &[f64]) -> String {
        let mut d = Digester::new();
        d.f64s(vs);
        d.finish()
    }

    #[test]
    fn digests_see_single_bits() {
        assert_eq!(of(&[1.0, 2.0]), of(&[1.0, 2.0]));
        assert_ne!(of(&[1.0, 2.0]), of(&[1.0, f64::from_bits(2.0f64.to_bits() + 1)]));
        assert_ne!(of(&[0.0]), of(&[-0.0]));
    }

    #[test]
    fn known_empty_digest() {
        assert_eq!(digest_bytes(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
