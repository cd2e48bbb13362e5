//! Experiment configuration files (TOML).
//!
//! ```toml
//! name = "example"
//!
//! [model]
//! noise_variance = 1.0
//! observations = { kind = "gaussian", rows = 1 }
//!
//! [[model.hypotheses]]
//! mean = [1.0]
//! covariance = [[0.5]]
//!
//! [[model.hypotheses]]
//! mean = [-1.0]
//! covariance = [[0.5]]
//!
//! [weights]
//! a = [0.5, 0.5]
//! b = [[0.5, 0.0], [0.0, 0.5]]
//!
//! [run]
//! alpha = 0.3
//! t_max = 200
//! mc_samples = 1000
//! seed = 7
//! ```
//!
//! `observations.kind` is one of `gaussian` (`rows`), `diagonal`
//! (`groups`, optional `pilot = { law = "gaussian", std = 1.0 }` or
//! `{ law = "constant", value = … }`), `cyclic` (`matrices`) and
//! `per-hypothesis` (`matrices`). `run.cost_mode` is `combined` or
//! `separated`; `run.stopping_source` is `online-mc`, `grid-lookup` or
//! `deterministic-schedule`. Optional tables: `[sweep]` with `alphas`, and
//! `[grid]` with `coords` and `axes` (see [`GridSpec`]).

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SjdeError};
use crate::model::{CostWeights, LqgModel, RunConfig};
use crate::stopping::grid::GridSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaSweep {
    pub alphas: Vec<f64>,
}

/// Everything one experiment needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    pub model: LqgModel,
    pub weights: CostWeights,
    pub run: RunConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<AlphaSweep>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.check_weights(&self.weights)?;
        self.run.validate()?;
        self.run.check_weights(&self.weights)?;
        if let Some(s) = &self.sweep {
            if s.alphas.is_empty() || s.alphas.iter().any(|a| !(*a > 0.0)) {
                return Err(SjdeError::InvalidConfig("sweep alphas must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| SjdeError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    /// Targets of the sweep, or the single run target.
    pub fn alphas(&self) -> Vec<f64> {
        self.sweep
            .as_ref()
            .map_or_else(|| vec![self.run.alpha], |s| s.alphas.clone())
    }
}
