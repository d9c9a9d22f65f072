//! Bench configuration, read from and written back to TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::SmoothingConfig;
use crate::simulation::Panel;
use crate::solver::SolverConfig;

use super::method::{Method, MethodSettings, NuisanceSettings, StartRule};

/// Environment variable that overrides [`BenchConfig::workers`].
pub const WORKERS_ENV: &str = "CAUSAL_SDR_WORKERS";

/// A scenario × method × replication grid.
///
/// Every field has a default, so a config file only lists what it changes:
///
/// ```toml
/// scenarios = ["case2-p6"]
/// methods = ["ipw_causal", "pca"]
/// replications = 20
/// n = 200
/// solver.max_iterations = 50
/// nuisance.weight_cap = "none"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    pub scenarios: Vec<Panel>,
    pub methods: Vec<Method>,
    pub replications: usize,
    pub n: usize,
    pub base_seed: u64,
    /// Worker threads; 0 uses every available core.
    pub workers: usize,
    pub output_dir: PathBuf,
    pub start: StartRule,
    pub start_jitter: f64,
    pub aug_outer_iterations: usize,
    pub d: usize,
    pub solver: SolverConfig,
    pub kernel: SmoothingConfig,
    pub nuisance: NuisanceSettings,
}

impl Default for BenchConfig {
    fn default() -> Self {
        let m = MethodSettings::default();
        Self {
            scenarios: vec![Panel {
                case: crate::simulation::Case::Case2,
                p: 6,
            }],
            methods: Method::ALL.to_vec(),
            replications: 20,
            n: 200,
            base_seed: 2024,
            workers: 0,
            output_dir: PathBuf::from("bench-out"),
            start: m.start,
            start_jitter: m.start_jitter,
            aug_outer_iterations: m.aug_outer_iterations,
            d: m.d,
            solver: m.solver,
            kernel: m.kernel,
            nuisance: m.nuisance,
        }
    }
}

impl BenchConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    /// The full effective configuration, every default spelled out.
    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(format!("cannot serialize config: {e}")))
    }

    pub fn method_settings(&self) -> MethodSettings {
        MethodSettings {
            solver: self.solver,
            kernel: self.kernel,
            nuisance: self.nuisance,
            start: self.start,
            start_jitter: self.start_jitter,
            aug_outer_iterations: self.aug_outer_iterations,
            d: self.d,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be at least 1".into()));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods must not be empty".into()));
        }
        if self.scenarios.is_empty() {
            return Err(Error::InvalidConfig("scenarios must not be empty".into()));
        }
        let mut seen = self.methods.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.methods.len() {
            return Err(Error::InvalidConfig("methods are listed twice".into()));
        }
        if self.n < 10 {
            return Err(Error::InvalidConfig(format!("n = {} is too small", self.n)));
        }
        if self.start == StartRule::Truth && self.d != crate::simulation::TRUE_DIM {
            return Err(Error::InvalidConfig("a truth start needs d = 2".into()));
        }
        self.method_settings().validate()
    }

    /// Worker count after the environment override; always at least 1.
    pub fn effective_workers(&self) -> Result<usize> {
        let requested = match std::env::var(WORKERS_ENV) {
            Ok(v) => v
                .trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidConfig(format!("{WORKERS_ENV}=`{v}` is not a count")))?,
            Err(_) => self.workers,
        };
        Ok(if requested == 0 {
            std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
        } else {
            requested
        })
    }
}
