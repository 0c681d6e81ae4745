//! Acceptance suite for `mks-core`.
//!
//! Each numbered criterion returns a [`CaseResult`]. A [`Session`] caches the
//! expensive shared runs (the subcritical PDE solve and the convergence
//! ladder) so criteria that read the same run do not repeat it.

pub mod criteria;
pub mod digest;

use std::sync::OnceLock;
use std::time::Instant;

use mks_core::analysis::{CaseResult, ConvergenceReport, SuiteResult};
use mks_core::grid::Field;
use mks_core::pde::{PdeConfig, PdeSolution};

pub use criteria::CRITERIA;

pub const DEFAULT_SEED: u64 = 2024;

#[derive(Debug, Clone, PartialEq)]
pub struct VerifyOptions {
    /// Root of every random substream used by the suite.
    pub seed: u64,
    /// Normalization handed to the kernels under test. Anything other than 1
    /// is a deliberate corruption and must make the fixture criteria fail.
    pub kernel_scale: f64,
    /// Criterion ids to run; `None` runs all of them.
    pub only: Option<Vec<usize>>,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            kernel_scale: 1.0,
            only: None,
        }
    }
}

/// Subcritical solve shared by the conservation, dichotomy and cutoff criteria.
pub struct SharedPde {
    pub config: PdeConfig,
    pub rho0: Field,
    pub solution: PdeSolution,
    pub seconds: f64,
}

pub struct Session {
    pub opts: VerifyOptions,
    pde: OnceLock<Result<SharedPde, String>>,
    ladder: OnceLock<Result<ConvergenceReport, String>>,
}

impl Session {
    pub fn new(opts: VerifyOptions) -> Self {
        Self {
            opts,
            pde: OnceLock::new(),
            ladder: OnceLock::new(),
        }
    }

    pub fn subcritical_pde(&self) -> Result<&SharedPde, String> {
        self.pde.get_or_init(criteria::run_subcritical_pde).as_ref().map_err(Clone::clone)
    }

    pub fn convergence_ladder(&self) -> Result<&ConvergenceReport, String> {
        self.ladder
            .get_or_init(|| criteria::run_ladder(self.opts.seed))
            .as_ref()
            .map_err(Clone::clone)
    }
}

/// Runs one criterion; an unknown id is reported as a failure.
pub fn run_criterion(session: &Session, id: usize) -> CaseResult {
    match CRITERIA.iter().find(|c| c.id == id) {
        Some(c) => {
            let start = Instant::now();
            let mut r = (c.run)(session);
            r.name = c.label();
            r.seconds = start.elapsed().as_secs_f64();
            r
        }
        None => CaseResult {
            name: format!("{id:02}-unknown"),
            passed: false,
            detail: format!("no criterion with id {id}"),
            seconds: 0.0,
        },
    }
}

/// Runs the selected criteria in order, calling `progress` after each.
pub fn run_suite(opts: VerifyOptions, mut progress: impl FnMut(&CaseResult)) -> SuiteResult {
    let session = Session::new(opts);
    let mut suite = SuiteResult::new("mks-verify");
    let ids: Vec<usize> = match &session.opts.only {
        Some(ids) => ids.clone(),
        None => CRITERIA.iter().map(|c| c.id).collect(),
    };
    for id in ids {
        let r = run_criterion(&session, id);
        progress(&r);
        suite.push(r);
    }
    suite
}
