//! Domain types: hypothesis priors, cost weights, the LQG observation model
//! and run configuration, plus the [`PosteriorProvider`] contract the
//! stopping engine is written against.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SjdeError};
use crate::linalg::{self, SpdFactor};

/// Smallest eigenvalue a proper prior covariance may have.
pub const PD_FLOOR: f64 = 1e-10;

/// Default hard horizon cap.
pub const DEFAULT_T_MAX: usize = 200;

/// Smallest replicate count accepted for a cost evaluation.
pub const MIN_MC_SAMPLES: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PriorKind {
    ProperGaussian,
    /// `x` equals the mean with probability one.
    PointMass,
}

/// Gaussian (or point-mass) prior on the parameter vector under one
/// hypothesis.
///
/// The precision matrix and the other terms the closed-form posterior needs
/// are computed once at construction.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "PriorRecord", into = "PriorRecord")]
pub struct HypothesisPrior {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
    kind: PriorKind,
    cache: PriorCache,
}

#[derive(Debug, Clone)]
pub(crate) struct PriorCache {
    /// Σ⁻¹ (zero for a point mass).
    pub precision: DMatrix<f64>,
    /// Σ⁻¹μ
    pub precision_mean: DVector<f64>,
    /// log|Σ|
    pub log_det_cov: f64,
    /// μᵀΣ⁻¹μ
    pub mean_quad: f64,
    /// Diagonal of Σ when Σ is diagonal.
    pub diagonal: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct PriorRecord {
    mean: Vec<f64>,
    covariance: Vec<Vec<f64>>,
}

impl TryFrom<PriorRecord> for HypothesisPrior {
    type Error = SjdeError;

    fn try_from(rec: PriorRecord) -> Result<Self> {
        let n = rec.mean.len();
        let cov = rows_to_matrix(&rec.covariance, n, "prior covariance")?;
        make_gaussian_prior(DVector::from_vec(rec.mean), cov)
    }
}

impl From<HypothesisPrior> for PriorRecord {
    fn from(p: HypothesisPrior) -> Self {
        PriorRecord {
            mean: p.mean.iter().copied().collect(),
            covariance: matrix_to_rows(&p.covariance),
        }
    }
}

impl PartialEq for HypothesisPrior {
    fn eq(&self, other: &Self) -> bool {
        self.kind == other.kind && self.mean == other.mean && self.covariance == other.covariance
    }
}

/// Validates a Gaussian prior `N(mean, covariance)`.
///
/// An exactly zero covariance yields a point-mass prior at `mean`.
pub fn make_gaussian_prior(
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
) -> Result<HypothesisPrior> {
    let n = mean.len();
    if n == 0 {
        return Err(SjdeError::InvalidModel("prior dimension must be positive".into()));
    }
    if covariance.nrows() != n || covariance.ncols() != n {
        return Err(SjdeError::DimensionMismatch {
            what: "prior covariance size",
            expected: n,
            got: covariance.nrows().max(covariance.ncols()),
        });
    }
    if mean.iter().chain(covariance.iter()).any(|v| !v.is_finite()) {
        return Err(SjdeError::InvalidModel("prior entries must be finite".into()));
    }
    linalg::check_symmetric(&covariance)?;

    if covariance.iter().all(|&v| v == 0.0) {
        let cache = PriorCache {
            precision: DMatrix::zeros(n, n),
            precision_mean: DVector::zeros(n),
            log_det_cov: f64::NEG_INFINITY,
            mean_quad: 0.0,
            diagonal: Some(vec![0.0; n]),
        };
        return Ok(HypothesisPrior {
            mean,
            covariance,
            kind: PriorKind::PointMass,
            cache,
        });
    }

    let min_eig = linalg::min_eigenvalue(&covariance);
    if !(min_eig > PD_FLOOR) {
        return Err(SjdeError::NotPositiveDefinite {
            min_eigenvalue: min_eig,
        });
    }
    let factor = SpdFactor::new(&covariance)?;
    let precision = factor.inverse();
    let precision_mean = factor.solve(&mean);
    let mean_quad = mean.dot(&precision_mean);
    let diagonal = linalg::is_diagonal(&covariance).then(|| covariance.diagonal().iter().copied().collect());
    let cache = PriorCache {
        precision,
        precision_mean,
        log_det_cov: factor.log_det(),
        mean_quad,
        diagonal,
    };
    Ok(HypothesisPrior {
        mean,
        covariance,
        kind: PriorKind::ProperGaussian,
        cache,
    })
}

impl HypothesisPrior {
    /// `N(mean, variance·I)`.
    pub fn isotropic(mean: Vec<f64>, variance: f64) -> Result<Self> {
        let n = mean.len();
        make_gaussian_prior(
            DVector::from_vec(mean),
            DMatrix::from_diagonal_element(n, n, variance),
        )
    }

    /// `N(mean, diag(variances))`.
    pub fn independent(mean: Vec<f64>, variances: &[f64]) -> Result<Self> {
        let n = mean.len();
        if variances.len() != n {
            return Err(SjdeError::DimensionMismatch {
                what: "prior variances",
                expected: n,
                got: variances.len(),
            });
        }
        make_gaussian_prior(
            DVector::from_vec(mean),
            DMatrix::from_diagonal(&DVector::from_column_slice(variances)),
        )
    }

    /// Point mass at `value`.
    pub fn point_mass(value: Vec<f64>) -> Result<Self> {
        let n = value.len();
        make_gaussian_prior(DVector::from_vec(value), DMatrix::zeros(n, n))
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn kind(&self) -> PriorKind {
        self.kind
    }

    pub fn is_point_mass(&self) -> bool {
        self.kind == PriorKind::PointMass
    }

    pub(crate) fn cache(&self) -> &PriorCache {
        &self.cache
    }

    /// Draws `x` from the prior.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        match self.kind {
            PriorKind::PointMass => self.mean.clone(),
            PriorKind::ProperGaussian => {
                let n = self.dim();
                let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
                match &self.cache.diagonal {
                    Some(d) => DVector::from_fn(n, |i, _| self.mean[i] + d[i].sqrt() * z[i]),
                    None => {
                        let l = self
                            .covariance
                            .clone()
                            .cholesky()
                            .expect("validated positive definite")
                            .unpack();
                        &self.mean + l * z
                    }
                }
            }
        }
    }
}

/// How the estimation weights couple decisions and hypotheses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostStructure {
    /// All `b = 0`: the detector is a likelihood-ratio test.
    PureDetection,
    /// Off-diagonal `b = 0`: wrong decisions pay only detection costs.
    Separated,
    Combined,
}

/// Detection weights `a_i` and estimation weights `b_ij` of the combined
/// Bayes cost (row `i` = true hypothesis, column `j` = decision).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "WeightsRecord", into = "WeightsRecord")]
pub struct CostWeights {
    a: Vec<f64>,
    b: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct WeightsRecord {
    a: Vec<f64>,
    b: Vec<Vec<f64>>,
}

impl TryFrom<WeightsRecord> for CostWeights {
    type Error = SjdeError;

    fn try_from(rec: WeightsRecord) -> Result<Self> {
        let k = rec.a.len();
        let b = rows_to_matrix(&rec.b, k, "estimation weights")?;
        make_cost_weights(rec.a, b)
    }
}

impl From<CostWeights> for WeightsRecord {
    fn from(w: CostWeights) -> Self {
        WeightsRecord {
            a: w.a,
            b: matrix_to_rows(&w.b),
        }
    }
}

pub fn make_cost_weights(a: Vec<f64>, b: DMatrix<f64>) -> Result<CostWeights> {
    let k = a.len();
    if k == 0 {
        return Err(SjdeError::InvalidWeights("no hypotheses".into()));
    }
    if b.nrows() != k || b.ncols() != k {
        return Err(SjdeError::DimensionMismatch {
            what: "estimation weight matrix size",
            expected: k,
            got: b.nrows().max(b.ncols()),
        });
    }
    for (i, &v) in a.iter().enumerate() {
        if !(v >= 0.0) || !v.is_finite() {
            return Err(SjdeError::NegativeWeight {
                name: format!("a[{i}]"),
                value: v,
            });
        }
    }
    for i in 0..k {
        for j in 0..k {
            let v = b[(i, j)];
            if !(v >= 0.0) || !v.is_finite() {
                return Err(SjdeError::NegativeWeight {
                    name: format!("b[{i}][{j}]"),
                    value: v,
                });
            }
        }
    }
    if a.iter().all(|&v| v == 0.0) {
        return Err(SjdeError::InvalidWeights(
            "at least one detection weight must be positive".into(),
        ));
    }
    Ok(CostWeights { a, b })
}

impl CostWeights {
    /// Separated-cost weights with `b_jj = b_diag[j]` and zero off-diagonal.
    pub fn separated(a: Vec<f64>, b_diag: &[f64]) -> Result<Self> {
        make_cost_weights(a, DMatrix::from_diagonal(&DVector::from_column_slice(b_diag)))
    }

    pub fn hypothesis_count(&self) -> usize {
        self.a.len()
    }

    pub fn a(&self, i: usize) -> f64 {
        self.a[i]
    }

    pub fn b(&self, truth: usize, decision: usize) -> f64 {
        self.b[(truth, decision)]
    }

    pub fn detection(&self) -> &[f64] {
        &self.a
    }

    pub fn estimation(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn structure(&self) -> CostStructure {
        let k = self.a.len();
        let off_zero = (0..k).all(|i| (0..k).all(|j| i == j || self.b[(i, j)] == 0.0));
        if self.b.iter().all(|&v| v == 0.0) {
            CostStructure::PureDetection
        } else if off_zero {
            CostStructure::Separated
        } else {
            CostStructure::Combined
        }
    }

    /// Whether column `j` of `b` carries any mass.
    pub fn column_used(&self, j: usize) -> bool {
        (0..self.a.len()).any(|i| self.b[(i, j)] > 0.0)
    }

    /// Multiplies every weight by `factor > 0`.
    pub fn scaled(&self, factor: f64) -> Result<Self> {
        make_cost_weights(self.a.iter().map(|v| v * factor).collect(), &self.b * factor)
    }
}

/// Law of the scalar pilot symbols of a diagonal observation model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "kebab-case")]
pub enum PilotLaw {
    Gaussian { std: f64 },
    Constant { value: f64 },
}

impl Default for PilotLaw {
    fn default() -> Self {
        PilotLaw::Gaussian { std: 1.0 }
    }
}

/// Where the observation matrices `H_t` come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ObservationSource {
    /// `rows × N` matrices with i.i.d. standard normal entries, fresh at
    /// every step.
    Gaussian { rows: usize },
    /// Square diagonal matrices: one pilot per group, repeated over the
    /// group's entries (`groups` sums to `N`).
    Diagonal {
        groups: Vec<usize>,
        #[serde(default)]
        pilot: PilotLaw,
    },
    /// A fixed list of `M × N` matrices used in turn (`H_t = list[(t-1) mod len]`).
    Cyclic {
        #[serde(with = "matrix_list")]
        matrices: Vec<DMatrix<f64>>,
    },
    /// One known matrix per hypothesis, constant over time (topology
    /// identification). Only meaningful with two or more hypotheses.
    PerHypothesis {
        #[serde(with = "matrix_list")]
        matrices: Vec<DMatrix<f64>>,
    },
}

impl ObservationSource {
    /// Observation dimension `M` for parameter dimension `n`.
    pub fn rows(&self, n: usize) -> usize {
        match self {
            ObservationSource::Gaussian { rows } => *rows,
            ObservationSource::Diagonal { .. } => n,
            ObservationSource::Cyclic { matrices } | ObservationSource::PerHypothesis { matrices } => {
                matrices.first().map_or(0, |m| m.nrows())
            }
        }
    }

    /// Whether `H_t` is the same under every hypothesis (and hence observed
    /// alongside `y_t`).
    pub fn is_shared(&self) -> bool {
        !matches!(self, ObservationSource::PerHypothesis { .. })
    }

    /// Draws `H_t` (1-based `t`) as seen under hypothesis `truth`.
    pub fn draw<R: Rng + ?Sized>(&self, n: usize, t: usize, truth: usize, rng: &mut R) -> DMatrix<f64> {
        match self {
            ObservationSource::Gaussian { rows } => {
                DMatrix::from_fn(*rows, n, |_, _| rng.sample::<f64, _>(StandardNormal))
            }
            ObservationSource::Diagonal { groups, pilot } => {
                let mut diag = Vec::with_capacity(n);
                for &size in groups {
                    let h = match *pilot {
                        PilotLaw::Gaussian { std } => std * rng.sample::<f64, _>(StandardNormal),
                        PilotLaw::Constant { value } => value,
                    };
                    diag.extend(std::iter::repeat_n(h, size));
                }
                DMatrix::from_diagonal(&DVector::from_vec(diag))
            }
            ObservationSource::Cyclic { matrices } => matrices[(t - 1) % matrices.len()].clone(),
            ObservationSource::PerHypothesis { matrices } => matrices[truth].clone(),
        }
    }
}

/// Linear model `y_t = H_t x + w_t`, `w_t ~ N(0, σ²I)`, with one Gaussian
/// prior on `x` per hypothesis and quadratic estimation cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LqgModelRecord", into = "LqgModelRecord")]
pub struct LqgModel {
    noise_variance: f64,
    priors: Vec<HypothesisPrior>,
    observations: ObservationSource,
}

#[derive(Serialize, Deserialize)]
struct LqgModelRecord {
    noise_variance: f64,
    observations: ObservationSource,
    hypotheses: Vec<HypothesisPrior>,
}

impl TryFrom<LqgModelRecord> for LqgModel {
    type Error = SjdeError;

    fn try_from(rec: LqgModelRecord) -> Result<Self> {
        LqgModel::new(rec.noise_variance, rec.hypotheses, rec.observations)
    }
}

impl From<LqgModel> for LqgModelRecord {
    fn from(m: LqgModel) -> Self {
        LqgModelRecord {
            noise_variance: m.noise_variance,
            observations: m.observations,
            hypotheses: m.priors,
        }
    }
}

impl LqgModel {
    pub fn new(
        noise_variance: f64,
        priors: Vec<HypothesisPrior>,
        observations: ObservationSource,
    ) -> Result<Self> {
        if !(noise_variance > 0.0) || !noise_variance.is_finite() {
            return Err(SjdeError::InvalidModel(format!(
                "noise variance must be positive, got {noise_variance}"
            )));
        }
        if priors.is_empty() {
            return Err(SjdeError::InvalidModel("no hypotheses".into()));
        }
        let n = priors[0].dim();
        for p in &priors {
            if p.dim() != n {
                return Err(SjdeError::DimensionMismatch {
                    what: "prior dimension",
                    expected: n,
                    got: p.dim(),
                });
            }
        }
        // Point masses are reserved for the null of a binary test.
        for (i, p) in priors.iter().enumerate() {
            if p.is_point_mass() && (i != 0 || priors.len() != 2) {
                return Err(SjdeError::InvalidModel(
                    "a point-mass prior is only allowed as the null of a binary test".into(),
                ));
            }
        }
        if priors.iter().all(HypothesisPrior::is_point_mass) {
            return Err(SjdeError::InvalidModel("all priors are point masses".into()));
        }
        match &observations {
            ObservationSource::Gaussian { rows } => {
                if *rows == 0 {
                    return Err(SjdeError::InvalidModel("observation rows must be positive".into()));
                }
            }
            ObservationSource::Diagonal { groups, pilot } => {
                let total: usize = groups.iter().sum();
                if total != n || groups.contains(&0) {
                    return Err(SjdeError::DimensionMismatch {
                        what: "diagonal pilot groups",
                        expected: n,
                        got: total,
                    });
                }
                if let PilotLaw::Gaussian { std } = pilot {
                    if !(*std > 0.0) {
                        return Err(SjdeError::InvalidModel("pilot std must be positive".into()));
                    }
                }
            }
            ObservationSource::Cyclic { matrices } | ObservationSource::PerHypothesis { matrices } => {
                if matrices.is_empty() {
                    return Err(SjdeError::InvalidModel("matrix list is empty".into()));
                }
                let m = matrices[0].nrows();
                for h in matrices {
                    if h.ncols() != n || h.nrows() != m || m == 0 {
                        return Err(SjdeError::DimensionMismatch {
                            what: "observation matrix shape",
                            expected: n,
                            got: h.ncols(),
                        });
                    }
                }
                if let ObservationSource::PerHypothesis { .. } = observations {
                    if matrices.len() != priors.len() {
                        return Err(SjdeError::DimensionMismatch {
                            what: "per-hypothesis matrices",
                            expected: priors.len(),
                            got: matrices.len(),
                        });
                    }
                }
            }
        }
        Ok(Self {
            noise_variance,
            priors,
            observations,
        })
    }

    /// Parameter dimension `N`.
    pub fn n(&self) -> usize {
        self.priors[0].dim()
    }

    /// Observation dimension `M`.
    pub fn m(&self) -> usize {
        self.observations.rows(self.n())
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn priors(&self) -> &[HypothesisPrior] {
        &self.priors
    }

    pub fn prior(&self, i: usize) -> &HypothesisPrior {
        &self.priors[i]
    }

    pub fn hypothesis_count(&self) -> usize {
        self.priors.len()
    }

    pub fn is_binary(&self) -> bool {
        self.priors.len() == 2
    }

    pub fn observations(&self) -> &ObservationSource {
        &self.observations
    }

    /// Checks that the weights fit this model.
    pub fn check_weights(&self, weights: &CostWeights) -> Result<()> {
        if weights.hypothesis_count() != self.hypothesis_count() {
            return Err(SjdeError::DimensionMismatch {
                what: "weights hypothesis count",
                expected: self.hypothesis_count(),
                got: weights.hypothesis_count(),
            });
        }
        Ok(())
    }

    pub(crate) fn require_binary(&self) -> Result<()> {
        if self.is_binary() {
            Ok(())
        } else {
            Err(SjdeError::HypothesisCount {
                expected: "exactly 2",
                got: self.hypothesis_count(),
            })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CostMode {
    #[default]
    Combined,
    /// Requires zero off-diagonal estimation weights.
    Separated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StoppingSourceKind {
    /// Monte Carlo estimate of the optimal cost at every step.
    #[default]
    OnlineMc,
    /// Nearest point of a precomputed cost grid.
    GridLookup,
    /// Offline schedule for known, fixed observation matrices.
    DeterministicSchedule,
}

/// Parameters of one sequential run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RunConfigRecord", into = "RunConfigRecord")]
pub struct RunConfig {
    pub alpha: f64,
    pub t_max: usize,
    pub mc_samples: usize,
    pub master_seed: u64,
    pub cost_mode: CostMode,
    pub stopping_source: StoppingSourceKind,
}

#[derive(Serialize, Deserialize)]
struct RunConfigRecord {
    alpha: f64,
    #[serde(default = "default_t_max")]
    t_max: usize,
    mc_samples: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    cost_mode: CostMode,
    #[serde(default)]
    stopping_source: StoppingSourceKind,
}

fn default_t_max() -> usize {
    DEFAULT_T_MAX
}

impl TryFrom<RunConfigRecord> for RunConfig {
    type Error = SjdeError;

    fn try_from(r: RunConfigRecord) -> Result<Self> {
        let cfg = RunConfig {
            alpha: r.alpha,
            t_max: r.t_max,
            mc_samples: r.mc_samples,
            master_seed: r.seed,
            cost_mode: r.cost_mode,
            stopping_source: r.stopping_source,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl From<RunConfig> for RunConfigRecord {
    fn from(c: RunConfig) -> Self {
        RunConfigRecord {
            alpha: c.alpha,
            t_max: c.t_max,
            mc_samples: c.mc_samples,
            seed: c.master_seed,
            cost_mode: c.cost_mode,
            stopping_source: c.stopping_source,
        }
    }
}

impl RunConfig {
    pub fn new(alpha: f64, mc_samples: usize) -> Result<Self> {
        let cfg = RunConfig {
            alpha,
            t_max: DEFAULT_T_MAX,
            mc_samples,
            master_seed: 0,
            cost_mode: CostMode::Combined,
            stopping_source: StoppingSourceKind::OnlineMc,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !self.alpha.is_finite() {
            return Err(SjdeError::InvalidConfig(format!(
                "alpha must be positive, got {}",
                self.alpha
            )));
        }
        if self.t_max < 1 {
            return Err(SjdeError::InvalidConfig("t_max must be at least 1".into()));
        }
        if self.mc_samples < MIN_MC_SAMPLES {
            return Err(SjdeError::InvalidConfig(format!(
                "mc_samples must be at least {MIN_MC_SAMPLES}, got {}",
                self.mc_samples
            )));
        }
        Ok(())
    }

    /// Checks the cost mode against the weights.
    pub fn check_weights(&self, weights: &CostWeights) -> Result<()> {
        if self.cost_mode == CostMode::Separated && weights.structure() == CostStructure::Combined {
            return Err(SjdeError::InvalidConfig(
                "separated cost mode requires zero off-diagonal estimation weights".into(),
            ));
        }
        Ok(())
    }
}

/// Per-hypothesis posterior moments of a binary problem at one instant.
#[derive(Debug, Clone)]
pub struct PosteriorMoments {
    /// `log L_t`.
    pub log_lr: f64,
    /// `E_i[x | F_t]`.
    pub means: [Vec<f64>; 2],
    /// `Tr Cov_i[x | F_t]` (the MMSE under `H_i`).
    pub traces: [f64; 2],
    pub(crate) work: Vec<f64>,
    pub(crate) scratch: Vec<f64>,
}

impl PosteriorMoments {
    pub fn zeros(n: usize) -> Self {
        Self {
            log_lr: 0.0,
            means: [vec![0.0; n], vec![0.0; n]],
            traces: [0.0; 2],
            work: vec![0.0; n],
            scratch: vec![0.0; 2 * n],
        }
    }

    /// `‖E_0[x|F_t] − E_1[x|F_t]‖²`.
    pub fn mean_gap_sq(&self) -> f64 {
        self.means[0]
            .iter()
            .zip(&self.means[1])
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }
}

/// The model-specific half of the optimum binary scheme.
///
/// An implementation is conditioned on the observation-matrix history
/// (for LQG, on `U_t`) and can draw fresh data statistics consistent with
/// it under either hypothesis. The stopping engine only ever sees the
/// resulting posterior moments, so any model with MSE cost can be plugged
/// in here.
pub trait PosteriorProvider: Sync {
    fn dim(&self) -> usize;

    /// Whether the null hypothesis fixes `x` (decided-null estimate is then
    /// its known value).
    fn null_is_point_mass(&self) -> bool;

    /// Draws the data statistic under hypothesis `truth` and writes the
    /// posterior moments it induces into `out`.
    fn sample_moments<R: Rng + ?Sized>(&self, truth: usize, rng: &mut R, out: &mut PosteriorMoments);
}

pub(crate) fn rows_to_matrix(rows: &[Vec<f64>], n: usize, what: &'static str) -> Result<DMatrix<f64>> {
    if rows.len() != n {
        return Err(SjdeError::DimensionMismatch {
            what,
            expected: n,
            got: rows.len(),
        });
    }
    let ncols = rows.first().map_or(0, Vec::len);
    for r in rows {
        if r.len() != ncols {
            return Err(SjdeError::DimensionMismatch {
                what,
                expected: ncols,
                got: r.len(),
            });
        }
    }
    Ok(DMatrix::from_fn(n, ncols, |i, j| rows[i][j]))
}

pub(crate) fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

mod matrix_list {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &[DMatrix<f64>], s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<Vec<f64>>> = v.iter().map(super::matrix_to_rows).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<DMatrix<f64>>, D::Error> {
        let raw: Vec<Vec<Vec<f64>>> = Vec::deserialize(d)?;
        raw.iter()
            .map(|rows| super::rows_to_matrix(rows, rows.len(), "observation matrix"))
            .collect::<Result<_, _>>()
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn isotropic_prior_is_proper() {
        let p = HypothesisPrior::isotropic(vec![1.0, 1.0, 1.0], 0.5).unwrap();
        assert_eq!(p.kind(), PriorKind::ProperGaussian);
        assert_eq!(p.cache().diagonal.as_deref(), Some(&[0.5, 0.5, 0.5][..]));
        assert!((p.cache().log_det_cov - 3.0 * 0.5f64.ln()).abs() < 1e-14);
        assert!((p.cache().mean_quad - 6.0).abs() < 1e-14);
    }

    #[test]
    fn zero_covariance_is_point_mass() {
        let p = make_gaussian_prior(DVector::zeros(4), DMatrix::zeros(4, 4)).unwrap();
        assert!(p.is_point_mass());
    }

    #[test]
    fn asymmetric_covariance_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 0.3, 0.2, 1.0]);
        let err = make_gaussian_prior(DVector::zeros(2), cov).unwrap_err();
        assert!(matches!(err, SjdeError::NonSymmetric { .. }));
    }

    #[test]
    fn indefinite_and_near_singular_covariances_rejected() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(matches!(
            make_gaussian_prior(DVector::zeros(2), cov),
            Err(SjdeError::NotPositiveDefinite { .. })
        ));
        let cov = DMatrix::from_row_slice(2, 2, &[1e-11, 0.0, 0.0, 1.0]);
        assert!(matches!(
            make_gaussian_prior(DVector::zeros(2), cov),
            Err(SjdeError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn weight_classification() {
        let sep = CostWeights::separated(vec![0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(sep.structure(), CostStructure::Separated);
        let pure = CostWeights::separated(vec![0.5, 0.5], &[0.0, 0.0]).unwrap();
        assert_eq!(pure.structure(), CostStructure::PureDetection);
        let grid = CostWeights::separated(vec![0.2; 5], &[0.8; 5]).unwrap();
        assert_eq!(grid.structure(), CostStructure::Separated);
        let cr = make_cost_weights(
            vec![0.5, 0.5],
            DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.5]),
        )
        .unwrap();
        assert_eq!(cr.structure(), CostStructure::Combined);
        assert!(cr.column_used(0) && cr.column_used(1));
    }

    #[test]
    fn weight_validation_errors() {
        assert!(matches!(
            make_cost_weights(vec![0.5, -0.1], DMatrix::zeros(2, 2)),
            Err(SjdeError::NegativeWeight { .. })
        ));
        assert!(matches!(
            make_cost_weights(vec![0.5, 0.5], DMatrix::zeros(3, 3)),
            Err(SjdeError::DimensionMismatch { .. })
        ));
        assert!(make_cost_weights(vec![0.0, 0.0], DMatrix::zeros(2, 2)).is_err());
    }

    #[test]
    fn point_mass_only_as_binary_null() {
        let obs = ObservationSource::Gaussian { rows: 1 };
        let pm = HypothesisPrior::point_mass(vec![0.0, 0.0]).unwrap();
        let g = HypothesisPrior::isotropic(vec![1.0, 1.0], 1.0).unwrap();
        assert!(LqgModel::new(1.0, vec![pm.clone(), g.clone()], obs.clone()).is_ok());
        assert!(LqgModel::new(1.0, vec![g.clone(), pm.clone()], obs.clone()).is_err());
        assert!(LqgModel::new(1.0, vec![pm, g.clone(), g], obs).is_err());
    }

    #[test]
    fn run_config_invariants() {
        assert!(RunConfig::new(0.3, 1000).is_ok());
        assert!(RunConfig::new(0.0, 1000).is_err());
        assert!(RunConfig::new(0.3, 99).is_err());
        let mut c = RunConfig::new(0.3, 1000).unwrap();
        c.t_max = 0;
        assert!(c.validate().is_err());
    }
}
