//! Optimum sequential joint detection and estimation for
//! linear-quadratic-Gaussian models.
//!
//! Samples `y_t = H_t x + w_t` arrive one at a time. Under each hypothesis
//! `x` has a Gaussian prior (or a known value). The crate provides the
//! stopping rule, detector and estimators minimizing the expected sample
//! count subject to a bound on the combined detection and estimation cost,
//! plus the SPRT and ML reference schemes and three preset experiments.
//!
//! ```
//! use sjde::scenarios::lqg_demo_config;
//! use sjde::stopping::{SimulatedSource, SjdeEngine};
//!
//! let cfg = lqg_demo_config().unwrap();
//! let engine = SjdeEngine::new(&cfg.model, &cfg.weights, &cfg.run).unwrap();
//! let mut data = SimulatedSource::new(&cfg.model, 0, 1).unwrap();
//! let r = engine.run(&mut data, 2).unwrap();
//! assert!(r.stopping_time <= cfg.run.t_max);
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod baselines;
pub mod config;
pub mod error;
pub mod linalg;
pub mod model;
pub mod policy;
pub mod posterior;
pub mod scenarios;
pub mod seed;
pub mod stats;
pub mod stopping;

pub use config::ExperimentConfig;
pub use error::{Result, SjdeError};
pub use model::{CostWeights, HypothesisPrior, LqgModel, ObservationSource, RunConfig};
