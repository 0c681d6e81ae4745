//! Convergence studies, Itô residuals, moment monitors and the functional
//! inequality suites.

pub mod battery;
pub mod convergence;
pub mod inequalities;
pub mod ito;
pub mod moments;
pub mod report;

pub use battery::{battery, PolyGauss, SmoothedTest, TestFunction};
pub use convergence::{convergence_study, ConvergenceConfig, ConvergenceReport, DriftMode, RungResult};
pub use inequalities::{cz_inequality_test, morrey_holder_test, nash_inequality_test};
pub use ito::{ito_residual_test, ItoReport, Z_THRESHOLD};
pub use moments::{moment_monitor, MomentOptions, MomentSeries};
pub use report::{CaseResult, Stat, SuiteResult};
