//! Config files: TOML, or JSON for the same schema. Unknown keys are
//! rejected and every default is materialized in the canonical form, which
//! is pretty-printed JSON and can be fed back through `--config`.

use std::f64::consts::PI;
use std::path::Path;

use mks_core::analysis::ConvergenceConfig;
use mks_core::grid::{Field, GridSpec};
use mks_core::particles::{InitialDensity, SimParams, CRITICAL_MASS};
use mks_core::pde::PdeConfig;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{invalid_in, CliError, CliResult};

fn default_beta() -> f64 {
    1.5
}
fn default_p() -> f64 {
    2.0
}
fn default_margin() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    pub grid: GridSpec,
    #[serde(default = "default_p")]
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    pub sim: SimParams,
    pub initial: InitialDensity,
    /// Snapshot times; empty means `[0, t_end]`.
    #[serde(default)]
    pub observers: Vec<f64>,
    /// Sobolev order the run is meant to be measured in; bounds `alpha`.
    #[serde(default = "default_beta")]
    pub beta: f64,
    /// Moment monitor of `g^N_t` on this grid.
    #[serde(default)]
    pub monitor: Option<MonitorConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PdeRunConfig {
    pub pde: PdeConfig,
    pub initial: InitialDensity,
    /// Suggested cutoff is `(1 + a0_margin) · A0`.
    #[serde(default = "default_margin")]
    pub a0_margin: f64,
}

/// Reads `path` as TOML or JSON (by extension, else by the first character).
pub fn load<T: DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
    parse(&text, is_json(path, &text))
}

fn is_json(path: &Path, text: &str) -> bool {
    match path.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("canonical") => true,
        Some("toml") => false,
        _ => text.trim_start().starts_with('{'),
    }
}

pub fn parse<T: DeserializeOwned>(text: &str, json: bool) -> CliResult<T> {
    let at = |path: String, msg: String| {
        let path = if path == "." { String::from("<root>") } else { path };
        CliError::Config(format!("at `{path}`: {msg}"))
    };
    if json {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| at(e.path().to_string(), e.inner().to_string()))
    } else {
        let de = toml::Deserializer::new(text);
        serde_path_to_error::deserialize(de).map_err(|e| {
            let msg = e.inner().message().to_string();
            at(e.path().to_string(), msg)
        })
    }
}

/// Canonical text of a config and its SHA-256.
pub fn canonical<T: Serialize>(cfg: &T) -> (String, String) {
    let text = serde_json::to_string_pretty(cfg).expect("config serializes") + "\n";
    let digest = mks_verify::digest::digest_bytes(text.as_bytes());
    (text, digest)
}

/// `alpha < 1/(2+2β)`: the mollifier must shrink slowly enough for the
/// moment bounds in `H^β` to hold.
fn check_alpha(alpha: f64, beta: f64) -> CliResult<()> {
    let bound = 1.0 / (2.0 + 2.0 * beta);
    if !(beta > 1.0) {
        return Err(invalid_in("beta", format!("must exceed 1, got {beta}")));
    }
    if !(alpha > 0.0 && alpha < bound) {
        return Err(invalid_in(
            "sim.mollifier.alpha",
            format!("mollifier scaling assumption 0 < alpha < 1/(2+2·beta) = {bound} fails for alpha = {alpha}, beta = {beta}"),
        ));
    }
    Ok(())
}

/// Notes on the total mass relative to the critical values.
pub fn mass_warnings(mass: f64, kernel_scale: f64) -> Vec<String> {
    let mut w = Vec::new();
    if mass >= CRITICAL_MASS {
        w.push(format!("total mass {mass} is at or above 8π = {CRITICAL_MASS:.6}: finite-time blow-up is expected"));
    } else if kernel_scale > 0.0 && mass >= 4.0 * PI / kernel_scale {
        w.push(format!(
            "total mass {mass} is at or above 4π/kernel_scale = {:.6}, the critical mass for ∇G = -x/(π|x|²): solutions may concentrate",
            4.0 * PI / kernel_scale
        ));
    }
    w
}

impl SimulateConfig {
    pub fn validate(&self) -> CliResult<Vec<String>> {
        self.sim.validate().map_err(|e| invalid_in("sim", e))?;
        self.initial.validate().map_err(|e| invalid_in("initial", e))?;
        check_alpha(self.sim.mollifier.alpha, self.beta)?;
        let mut prev = -1.0;
        for &t in &self.observers {
            if !(t >= 0.0 && t <= self.sim.t_end && t > prev) {
                return Err(invalid_in(
                    "observers",
                    format!("must be strictly increasing within [0, t_end = {}], got {:?}", self.sim.t_end, self.observers),
                ));
            }
            prev = t;
        }
        if let Some(m) = &self.monitor {
            m.grid.validate().map_err(|e| invalid_in("monitor.grid", e))?;
            if !(m.p >= 1.0) {
                return Err(invalid_in("monitor.p", format!("must be at least 1, got {}", m.p)));
            }
        }
        let mut warnings = mass_warnings(self.sim.mass, self.sim.kernel_scale);
        if self.sim.mass != self.initial.total_mass {
            warnings.push(format!(
                "sim.mass = {} differs from initial.total_mass = {}; the interaction uses sim.mass",
                self.sim.mass, self.initial.total_mass
            ));
        }
        Ok(warnings)
    }

    pub fn observers(&self) -> Vec<f64> {
        if self.observers.is_empty() {
            vec![0.0, self.sim.t_end]
        } else {
            self.observers.clone()
        }
    }
}

impl PdeRunConfig {
    pub fn validate(&self) -> CliResult<Vec<String>> {
        self.pde.validate().map_err(|e| invalid_in("pde", e))?;
        self.initial.validate().map_err(|e| invalid_in("initial", e))?;
        if !(self.a0_margin >= 0.0) {
            return Err(invalid_in("a0_margin", format!("must be >= 0, got {}", self.a0_margin)));
        }
        Ok(mass_warnings(self.initial.total_mass, self.pde.kernel_scale))
    }

    pub fn rho0(&self) -> Field {
        Field::from_fn(self.pde.grid, |x| self.initial.value(x))
    }
}

pub fn validate_converge(cfg: &ConvergenceConfig) -> CliResult<Vec<String>> {
    cfg.validate().map_err(|e| invalid_in("converge", e))?;
    Ok(mass_warnings(cfg.mass, cfg.sim.kernel_scale))
}
