//! Preset experiments: the generic LQG demo, joint spectrum sensing and
//! channel estimation, and IEEE-4 topology identification.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::config::{AlphaSweep, ExperimentConfig};
use crate::error::{Result, SjdeError};
use crate::model::{
    make_cost_weights, CostMode, CostWeights, HypothesisPrior, LqgModel, ObservationSource, PilotLaw, RunConfig,
    StoppingSourceKind, DEFAULT_T_MAX,
};
use crate::stopping::grid::{AxisSpec, GridCoordinates, GridSpec};

/// Names accepted by [`preset`].
pub const PRESETS: [&str; 3] = ["lqg-demo", "cognitive-radio", "smart-grid-ieee4"];

pub fn preset(name: &str) -> Result<ExperimentConfig> {
    match name {
        "lqg-demo" => lqg_demo_config(),
        "cognitive-radio" => cognitive_radio_config(&CognitiveRadioScenario::default()),
        "smart-grid-ieee4" => smart_grid_ieee4_config(),
        other => Err(SjdeError::InvalidConfig(format!(
            "unknown preset {other:?} (known: {})",
            PRESETS.join(", ")
        ))),
    }
}

fn run_config(alpha: f64, t_max: usize, mc_samples: usize, source: StoppingSourceKind, mode: CostMode) -> RunConfig {
    RunConfig {
        alpha,
        t_max,
        mc_samples,
        master_seed: 1,
        cost_mode: mode,
        stopping_source: source,
    }
}

/// Three-dimensional parameter, scalar observations with standard normal
/// regressors, priors `N(±1, 0.5 I)`.
pub fn lqg_demo_config() -> Result<ExperimentConfig> {
    let model = LqgModel::new(
        1.0,
        vec![
            HypothesisPrior::isotropic(vec![1.0; 3], 0.5)?,
            HypothesisPrior::isotropic(vec![-1.0; 3], 0.5)?,
        ],
        ObservationSource::Gaussian { rows: 1 },
    )?;
    let weights = make_cost_weights(vec![0.5, 0.5], DMatrix::from_row_slice(2, 2, &[0.5, 0.0, 0.0, 0.5]))?;
    Ok(ExperimentConfig {
        name: "lqg-demo".into(),
        model,
        weights,
        run: run_config(0.3, DEFAULT_T_MAX, 2000, StoppingSourceKind::OnlineMc, CostMode::Separated),
        sweep: Some(AlphaSweep {
            alphas: vec![0.2, 0.25, 0.3, 0.35, 0.4],
        }),
        grid: None,
    })
}

/// Joint spectrum sensing and channel estimation with `K` secondary users.
///
/// `x = [x_11 … x_1K, x_21 … x_2K]` collects the gains from each SU to the
/// two primary receivers. The channels are idle (`x = 0`) under the null.
#[derive(Debug, Clone, PartialEq)]
pub struct CognitiveRadioScenario {
    pub k: usize,
    /// `μ_jk`, length `2K`.
    pub mean: Vec<f64>,
    /// `ρ²_jk`, length `2K`.
    pub variance: Vec<f64>,
    pub noise_variance: f64,
    pub pilot: PilotLaw,
    pub a: [f64; 2],
    pub b1: f64,
    pub p_max: f64,
    pub i1: f64,
    pub i2: f64,
    pub alpha: f64,
    pub t_max: usize,
    pub mc_samples: usize,
}

impl Default for CognitiveRadioScenario {
    fn default() -> Self {
        Self {
            k: 2,
            mean: vec![1.0; 4],
            variance: vec![0.5; 4],
            noise_variance: 1.0,
            pilot: PilotLaw::Gaussian { std: 1.0 },
            a: [0.5, 0.5],
            b1: 0.5,
            p_max: 1.0,
            i1: 0.5,
            i2: 0.5,
            alpha: 0.2,
            t_max: 60,
            mc_samples: 1000,
        }
    }
}

impl CognitiveRadioScenario {
    pub fn validate(&self) -> Result<()> {
        let n = 2 * self.k;
        if self.k == 0 {
            return Err(SjdeError::InvalidModel("at least one secondary user is required".into()));
        }
        if self.mean.len() != n || self.variance.len() != n {
            return Err(SjdeError::DimensionMismatch {
                what: "per-channel parameters",
                expected: n,
                got: self.mean.len().min(self.variance.len()),
            });
        }
        if self.variance.iter().any(|v| !(*v > 0.0)) {
            return Err(SjdeError::InvalidModel("channel variances must be positive".into()));
        }
        if !(self.p_max > 0.0 && self.i1 > 0.0 && self.i2 > 0.0) {
            return Err(SjdeError::InvalidModel("power limits must be positive".into()));
        }
        Ok(())
    }

    /// Expected cumulative pilot energy at `t_max`.
    fn u_range(&self) -> f64 {
        let second_moment = match self.pilot {
            PilotLaw::Gaussian { std } => std * std,
            PilotLaw::Constant { value } => value * value,
        };
        second_moment * self.t_max as f64
    }
}

pub fn cognitive_radio_config(s: &CognitiveRadioScenario) -> Result<ExperimentConfig> {
    s.validate()?;
    let n = 2 * s.k;
    let model = LqgModel::new(
        s.noise_variance,
        vec![
            HypothesisPrior::point_mass(vec![0.0; n])?,
            HypothesisPrior::independent(s.mean.clone(), &s.variance)?,
        ],
        ObservationSource::Diagonal {
            groups: vec![s.k, s.k],
            pilot: s.pilot,
        },
    )?;
    let weights = make_cost_weights(
        s.a.to_vec(),
        DMatrix::from_row_slice(2, 2, &[0.0, 0.0, s.b1, s.b1]),
    )?;
    let axis = AxisSpec {
        min: 0.0,
        max: s.u_range(),
        points: 20,
    };
    Ok(ExperimentConfig {
        name: "cognitive-radio".into(),
        model,
        weights,
        run: run_config(s.alpha, s.t_max, s.mc_samples, StoppingSourceKind::OnlineMc, CostMode::Combined),
        sweep: Some(AlphaSweep {
            alphas: vec![0.15, 0.2, 0.25, 0.3],
        }),
        grid: Some(GridSpec {
            coords: GridCoordinates::Grouped { groups: vec![s.k, s.k] },
            axes: vec![axis, axis],
        }),
    })
}

/// Per-SU transmit power `min(P_max, I_1/x̂²_1k, I_2/x̂²_2k)`; a zero gain
/// estimate puts no limit on its receiver.
pub fn transmit_power(x_hat: &DVector<f64>, p_max: f64, i1: f64, i2: f64) -> Vec<f64> {
    let k = x_hat.len() / 2;
    let limit = |cap: f64, g: f64| if g == 0.0 { f64::INFINITY } else { cap / (g * g) };
    (0..k)
        .map(|j| p_max.min(limit(i1, x_hat[j])).min(limit(i2, x_hat[k + j])))
        .collect()
}

/// Rows `P1, P1-2, P2, P2-3, P3, P3-4, P4, P4-1`; columns `θ2, θ3, θ4`.
const IEEE4_TOPOLOGIES: [[[f64; 3]; 8]; 5] = [
    [
        [-1.0, 0.0, -1.0],
        [-1.0, 0.0, 0.0],
        [2.0, -1.0, 0.0],
        [1.0, -1.0, 0.0],
        [-1.0, 2.0, -1.0],
        [0.0, 1.0, -1.0],
        [0.0, -1.0, 2.0],
        [0.0, 0.0, 1.0],
    ],
    [
        [0.0, 0.0, -1.0],
        [0.0, 0.0, 0.0],
        [1.0, -1.0, 0.0],
        [1.0, -1.0, 0.0],
        [-1.0, 2.0, -1.0],
        [0.0, 1.0, -1.0],
        [0.0, -1.0, 2.0],
        [0.0, 0.0, 1.0],
    ],
    [
        [-1.0, 0.0, -1.0],
        [-1.0, 0.0, 0.0],
        [1.0, 0.0, 0.0],
        [0.0, 0.0, 0.0],
        [0.0, 1.0, -1.0],
        [0.0, 1.0, -1.0],
        [0.0, -1.0, 2.0],
        [0.0, 0.0, 1.0],
    ],
    [
        [-1.0, 0.0, -1.0],
        [-1.0, 0.0, 0.0],
        [2.0, -1.0, 0.0],
        [1.0, -1.0, 0.0],
        [-1.0, 1.0, 0.0],
        [0.0, 0.0, 0.0],
        [0.0, 0.0, 1.0],
        [0.0, 0.0, 1.0],
    ],
    [
        [-1.0, 0.0, 0.0],
        [-1.0, 0.0, 0.0],
        [2.0, -1.0, 0.0],
        [1.0, -1.0, 0.0],
        [-1.0, 2.0, -1.0],
        [0.0, 1.0, -1.0],
        [0.0, -1.0, 1.0],
        [0.0, 0.0, 0.0],
    ],
];

/// Topology matrices `H_0` (all links) and `H_1..H_4` (links 1-2, 2-3,
/// 3-4 and 4-1 out).
pub fn ieee4_topologies() -> Vec<DMatrix<f64>> {
    IEEE4_TOPOLOGIES
        .iter()
        .map(|h| DMatrix::from_fn(8, 3, |r, c| h[r][c]))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmartGridScenario {
    pub topologies: Vec<DMatrix<f64>>,
    pub priors: Vec<HypothesisPrior>,
    pub noise_variance: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
}

impl SmartGridScenario {
    pub fn ieee4() -> Result<Self> {
        let variances = [PI * PI / 9.0, PI * PI / 16.0, PI * PI / 25.0, PI * PI / 36.0, PI * PI / 4.0];
        let priors = variances
            .iter()
            .enumerate()
            .map(|(k, &v)| HypothesisPrior::isotropic(vec![(k + 1) as f64 * PI / 5.0; 3], v))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            topologies: ieee4_topologies(),
            priors,
            noise_variance: 1.0,
            a: vec![0.2; 5],
            b: vec![0.8; 5],
        })
    }

    pub fn model(&self) -> Result<LqgModel> {
        if self.priors.iter().any(HypothesisPrior::is_point_mass) {
            return Err(SjdeError::InvalidModel("topology priors must be proper".into()));
        }
        LqgModel::new(
            self.noise_variance,
            self.priors.clone(),
            ObservationSource::PerHypothesis {
                matrices: self.topologies.clone(),
            },
        )
    }

    pub fn weights(&self) -> Result<CostWeights> {
        CostWeights::separated(self.a.clone(), &self.b)
    }
}

pub fn smart_grid_ieee4_config() -> Result<ExperimentConfig> {
    let s = SmartGridScenario::ieee4()?;
    Ok(ExperimentConfig {
        name: "smart-grid-ieee4".into(),
        model: s.model()?,
        weights: s.weights()?,
        run: run_config(0.1, 50, 10_000, StoppingSourceKind::DeterministicSchedule, CostMode::Separated),
        sweep: Some(AlphaSweep {
            alphas: vec![0.05, 0.1, 0.15, 0.2],
        }),
        grid: None,
    })
}
