//! Run directories and their manifests.
//!
//! ```text
//! <run>/manifest.json
//! <run>/config.canonical
//! <run>/data/      binary containers (MKS1 trajectories, MKF1 fields)
//! <run>/report/    CSV, JSON and JUnit XML
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{SecondsFormat, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{runtime, CliResult};

pub const OUT_DIR_ENV: &str = "MKS_OUT_DIR";
const DEFAULT_ROOT: &str = "runs";

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// Largest share of mass near the grid edge (PDE) or of particles outside
    /// the monitor grid (particles), when measured.
    pub boundary_mass: Option<f64>,
    /// Step sizes that differ from the configured `dt`.
    pub dt_adjustments: Vec<f64>,
    /// How the particle time step was chosen, for runs that have one.
    pub dt_policy: Option<String>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub artifact_version: String,
    /// SHA-256 of `config.canonical`.
    pub config_digest: String,
    pub seed: u64,
    pub threads: usize,
    pub started: String,
    pub finished: String,
    /// Paths relative to the run directory.
    pub outputs: Vec<String>,
    /// Bit-level digest of the numerical results.
    pub summary_digest: String,
    pub diagnostics: Diagnostics,
}

pub fn now() -> String {
    Utc::now().to_rfc3339_opts(SecondsFormat::Millis, true)
}

pub struct RunDir {
    pub root: PathBuf,
    outputs: Vec<String>,
}

impl RunDir {
    /// `explicit` is used as is; otherwise a fresh directory under
    /// `$MKS_OUT_DIR` (or `./runs`) named after the command, time and digest.
    pub fn create(explicit: Option<&Path>, command: &str, digest: &str) -> CliResult<Self> {
        let root = match explicit {
            Some(p) => p.to_path_buf(),
            None => {
                let base = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| DEFAULT_ROOT.into());
                let stamp = Utc::now().format("%Y%m%dT%H%M%S");
                let stem = format!("{command}-{stamp}-{}", &digest[..8]);
                let mut p = base.join(&stem);
                let mut k = 1;
                while p.exists() {
                    p = base.join(format!("{stem}-{k}"));
                    k += 1;
                }
                p
            }
        };
        for sub in ["data", "report"] {
            fs::create_dir_all(root.join(sub)).map_err(|e| runtime(format!("cannot create {}: {e}", root.display())))?;
        }
        Ok(Self {
            root,
            outputs: Vec::new(),
        })
    }

    pub fn path(&mut self, rel: &str) -> PathBuf {
        self.outputs.push(rel.to_string());
        self.root.join(rel)
    }

    pub fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> CliResult<()> {
        let p = self.path(rel);
        fs::write(&p, contents).map_err(|e| runtime(format!("cannot write {}: {e}", p.display())))
    }

    pub fn outputs(&self) -> Vec<String> {
        self.outputs.clone()
    }

    pub fn write_manifest(&self, m: &RunManifest) -> CliResult<()> {
        let text = serde_json::to_string_pretty(m).expect("manifest serializes") + "\n";
        let p = self.root.join("manifest.json");
        fs::write(&p, text).map_err(|e| runtime(format!("cannot write {}: {e}", p.display())))
    }
}
