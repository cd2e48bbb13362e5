//! Closed-form posteriors of the LQG model.
//!
//! Everything is driven by the sufficient statistics `U_t = Σ H_tᵀH_t` and
//! `v_t = Σ H_tᵀy_t`. Log-evidences are reduced: terms common to every
//! hypothesis (`Σ‖y_t‖²` and the Gaussian normalizer of the noise) are
//! dropped, so only differences between hypotheses are meaningful.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Result, SjdeError};
use crate::linalg::{self, SpdFactor};
use crate::model::{CostWeights, HypothesisPrior, LqgModel, PosteriorMoments, PosteriorProvider};

/// Accumulated `(U_t, v_t, t)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SufficientStats {
    u: DMatrix<f64>,
    v: DVector<f64>,
    t: usize,
    diagonal: bool,
}

impl SufficientStats {
    pub fn zeros(n: usize) -> Self {
        Self {
            u: DMatrix::zeros(n, n),
            v: DVector::zeros(n),
            t: 0,
            diagonal: true,
        }
    }

    /// Statistics from explicit parts. `u` must be symmetric PSD.
    pub fn from_parts(u: DMatrix<f64>, v: DVector<f64>, t: usize) -> Result<Self> {
        let n = v.len();
        if u.nrows() != n || u.ncols() != n {
            return Err(SjdeError::DimensionMismatch {
                what: "U statistic size",
                expected: n,
                got: u.nrows().max(u.ncols()),
            });
        }
        check_psd(&u)?;
        let diagonal = linalg::is_diagonal(&u);
        Ok(Self { u, v, t, diagonal })
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn u(&self) -> &DMatrix<f64> {
        &self.u
    }

    pub fn v(&self) -> &DVector<f64> {
        &self.v
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// True while every absorbed `H_t` was diagonal.
    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// `(u_n)` when on the diagonal fast path.
    pub fn u_diagonal(&self) -> Option<Vec<f64>> {
        self.diagonal.then(|| self.u.diagonal().iter().copied().collect())
    }

    /// Absorbs one observation `y = H x + w`.
    pub fn update(&mut self, h: &DMatrix<f64>, y: &DVector<f64>) -> Result<()> {
        let n = self.dim();
        if h.ncols() != n {
            return Err(SjdeError::DimensionMismatch {
                what: "observation matrix columns",
                expected: n,
                got: h.ncols(),
            });
        }
        if y.len() != h.nrows() {
            return Err(SjdeError::DimensionMismatch {
                what: "observation length",
                expected: h.nrows(),
                got: y.len(),
            });
        }
        if self.diagonal && linalg::is_diagonal(h) {
            for k in 0..n {
                let hk = h[(k, k)];
                self.u[(k, k)] += hk * hk;
                self.v[k] += hk * y[k];
            }
        } else {
            self.diagonal = false;
            self.u += linalg::symmetrize(&h.tr_mul(h));
            self.v += h.tr_mul(y);
        }
        self.t += 1;
        Ok(())
    }
}

/// Functional form of [`SufficientStats::update`].
pub fn update_sufficient_stats(
    mut stats: SufficientStats,
    h: &DMatrix<f64>,
    y: &DVector<f64>,
) -> Result<SufficientStats> {
    stats.update(h, y)?;
    Ok(stats)
}

pub(crate) fn check_psd(u: &DMatrix<f64>) -> Result<()> {
    linalg::check_symmetric(u)?;
    let scale = u.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let min = linalg::min_eigenvalue(u);
    if min < -1e-10 * scale {
        return Err(SjdeError::NotPositiveSemidefinite { min_eigenvalue: min });
    }
    Ok(())
}

/// Posterior of `x` under one hypothesis.
#[derive(Debug, Clone, PartialEq)]
pub struct HypothesisPosterior {
    pub mean: DVector<f64>,
    pub covariance: DMatrix<f64>,
    /// Reduced log marginal likelihood of the data.
    pub log_evidence: f64,
}

impl HypothesisPosterior {
    /// `Tr C_i`, the MMSE under this hypothesis.
    pub fn trace(&self) -> f64 {
        self.covariance.trace()
    }
}

/// Posterior under `prior`, taking the diagonal fast path when possible.
pub fn condition(stats: &SufficientStats, prior: &HypothesisPrior, sigma2: f64) -> Result<HypothesisPosterior> {
    if stats.is_diagonal() && prior.cache().diagonal.is_some() {
        posterior_diagonal(stats, prior, sigma2)
    } else {
        posterior_general(stats, prior, sigma2)
    }
}

fn check_dims(stats: &SufficientStats, prior: &HypothesisPrior) -> Result<()> {
    if stats.dim() != prior.dim() {
        return Err(SjdeError::DimensionMismatch {
            what: "statistic dimension",
            expected: prior.dim(),
            got: stats.dim(),
        });
    }
    Ok(())
}

fn point_mass_posterior(stats: &SufficientStats, prior: &HypothesisPrior, sigma2: f64) -> HypothesisPosterior {
    let mu = prior.mean();
    let n = mu.len();
    let quad = mu.dot(&(stats.u() * mu));
    HypothesisPosterior {
        mean: mu.clone(),
        covariance: DMatrix::zeros(n, n),
        log_evidence: (mu.dot(stats.v()) - 0.5 * quad) / sigma2,
    }
}

/// Dense path: factorizes `U/σ² + Σ⁻¹` once and reuses it for the mean,
/// the covariance and the determinant.
pub fn posterior_general(stats: &SufficientStats, prior: &HypothesisPrior, sigma2: f64) -> Result<HypothesisPosterior> {
    check_dims(stats, prior)?;
    if prior.is_point_mass() {
        return Ok(point_mass_posterior(stats, prior, sigma2));
    }
    let c = prior.cache();
    let precision = linalg::symmetrize(&(stats.u() / sigma2 + &c.precision));
    let factor = SpdFactor::new(&precision)?;
    let b = stats.v() / sigma2 + &c.precision_mean;
    let mean = factor.solve(&b);
    let log_evidence = 0.5 * b.dot(&mean) - 0.5 * c.mean_quad - 0.5 * c.log_det_cov - 0.5 * factor.log_det();
    Ok(HypothesisPosterior {
        mean,
        covariance: factor.inverse(),
        log_evidence,
    })
}

/// Independent-channel path: every quantity is a per-coordinate scalar.
pub fn posterior_diagonal(stats: &SufficientStats, prior: &HypothesisPrior, sigma2: f64) -> Result<HypothesisPosterior> {
    check_dims(stats, prior)?;
    let rho2 = match (&prior.cache().diagonal, stats.is_diagonal()) {
        (Some(d), true) => d,
        _ => {
            return Err(SjdeError::InvalidModel(
                "diagonal fast path needs diagonal statistics and a diagonal prior".into(),
            ))
        }
    };
    if prior.is_point_mass() {
        return Ok(point_mass_posterior(stats, prior, sigma2));
    }
    let n = stats.dim();
    let mu = prior.mean();
    let mut mean = DVector::zeros(n);
    let mut var = DVector::zeros(n);
    let mut log_evidence = 0.0;
    for k in 0..n {
        let p = stats.u()[(k, k)] / sigma2 + 1.0 / rho2[k];
        let b = stats.v()[k] / sigma2 + mu[k] / rho2[k];
        mean[k] = b / p;
        var[k] = 1.0 / p;
        log_evidence += 0.5 * (b * b / p - mu[k] * mu[k] / rho2[k]) - 0.5 * (rho2[k] * p).ln();
    }
    Ok(HypothesisPosterior {
        mean,
        covariance: DMatrix::from_diagonal(&var),
        log_evidence,
    })
}

/// Posterior mean and covariance.
pub fn posterior(stats: &SufficientStats, prior: &HypothesisPrior, sigma2: f64) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let p = condition(stats, prior, sigma2)?;
    Ok((p.mean, p.covariance))
}

pub fn log_evidence(stats: &SufficientStats, prior: &HypothesisPrior, sigma2: f64) -> Result<f64> {
    Ok(condition(stats, prior, sigma2)?.log_evidence)
}

/// `log L_t = log p_1(y | H) − log p_0(y | H)`.
pub fn log_likelihood_ratio(
    stats: &SufficientStats,
    prior0: &HypothesisPrior,
    prior1: &HypothesisPrior,
    sigma2: f64,
) -> Result<f64> {
    if prior1.is_point_mass() {
        return Err(SjdeError::InvalidModel("the alternative prior must be proper".into()));
    }
    Ok(log_evidence(stats, prior1, sigma2)? - log_evidence(stats, prior0, sigma2)?)
}

/// Mixing weights `(w0, w1)` of one decision column's estimator,
/// `x̂ = w0·e0 + w1·e1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColumnMixture {
    pub w0: f64,
    pub w1: f64,
}

impl ColumnMixture {
    /// `(δ^{0j}, δ^{1j}) = (w1², w0²)`.
    pub fn deltas(&self) -> (f64, f64) {
        (self.w1 * self.w1, self.w0 * self.w0)
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `w1 = b1·L / (b0 + b1·L)`, `w0 = 1 − w1`, evaluated from `log L`.
/// `None` when the column carries no mass.
pub fn mixture_weights(log_lr: f64, b0: f64, b1: f64) -> Option<ColumnMixture> {
    if b0 == 0.0 && b1 == 0.0 {
        return None;
    }
    let w1 = if b1 == 0.0 {
        0.0
    } else if b0 == 0.0 {
        1.0
    } else {
        sigmoid(log_lr + b1.ln() - b0.ln())
    };
    let w0 = if b0 == 0.0 {
        0.0
    } else if b1 == 0.0 {
        1.0
    } else {
        sigmoid(-(log_lr + b1.ln() - b0.ln()))
    };
    Some(ColumnMixture { w0, w1 })
}

/// `(δ^{0j}, δ^{1j})` for a column with `b_{0j} = b0`, `b_{1j} = b1`.
pub fn delta_weights(log_lr: f64, b0: f64, b1: f64) -> Option<(f64, f64)> {
    mixture_weights(log_lr, b0, b1).map(|m| m.deltas())
}

pub fn mixture_estimate(e0: &DVector<f64>, e1: &DVector<f64>, log_lr: f64, b0: f64, b1: f64) -> Option<DVector<f64>> {
    mixture_weights(log_lr, b0, b1).map(|m| e0 * m.w0 + e1 * m.w1)
}

/// Mixture used by decision column `j`.
///
/// A point-mass null fixes the decided-null estimate at the null value.
/// `None` for an unused column, whose estimate falls back to `e_j`.
pub fn column_mixture(log_lr: f64, weights: &CostWeights, j: usize, null_point_mass: bool) -> Option<ColumnMixture> {
    if null_point_mass && j == 0 {
        return Some(ColumnMixture { w0: 1.0, w1: 0.0 });
    }
    mixture_weights(log_lr, weights.b(0, j), weights.b(1, j))
}

/// Weights of the estimate reported after deciding `j`.
pub fn estimator_weights(log_lr: f64, weights: &CostWeights, j: usize, null_point_mass: bool) -> ColumnMixture {
    column_mixture(log_lr, weights, j, null_point_mass).unwrap_or(if j == 0 {
        ColumnMixture { w0: 1.0, w1: 0.0 }
    } else {
        ColumnMixture { w0: 0.0, w1: 1.0 }
    })
}

/// `Δ^{ij} = Tr C_i + δ^{ij}·‖e0 − e1‖²`, indexed `[i][j]`. Unused columns
/// get `Δ^{ij} = Tr C_i`; they only ever meet zero weights.
pub fn posterior_costs(
    traces: [f64; 2],
    gap_sq: f64,
    log_lr: f64,
    weights: &CostWeights,
    null_point_mass: bool,
) -> [[f64; 2]; 2] {
    let mut delta = [[traces[0], traces[0]], [traces[1], traces[1]]];
    for j in 0..2 {
        if let Some(m) = column_mixture(log_lr, weights, j, null_point_mass) {
            let (d0, d1) = m.deltas();
            delta[0][j] += d0 * gap_sq;
            delta[1][j] += d1 * gap_sq;
        }
    }
    delta
}

/// Everything the binary policy needs at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorSummary {
    pub posteriors: [HypothesisPosterior; 2],
    pub log_lr: f64,
    /// `Δ^{ij}`, indexed `[i][j]`.
    pub delta: [[f64; 2]; 2],
    /// `δ^{ij}`; zero in unused columns.
    pub delta_weights: [[f64; 2]; 2],
    /// Estimator of each decision column.
    pub estimates: [DVector<f64>; 2],
}

/// Posterior summary of a binary model.
pub fn summarize(stats: &SufficientStats, model: &LqgModel, weights: &CostWeights) -> Result<PosteriorSummary> {
    model.require_binary()?;
    model.check_weights(weights)?;
    let sigma2 = model.noise_variance();
    let p0 = condition(stats, model.prior(0), sigma2)?;
    let p1 = condition(stats, model.prior(1), sigma2)?;
    let log_lr = p1.log_evidence - p0.log_evidence;
    let pm = model.prior(0).is_point_mass();
    let gap_sq = (&p0.mean - &p1.mean).norm_squared();
    let delta = posterior_costs([p0.trace(), p1.trace()], gap_sq, log_lr, weights, pm);
    let mut delta_weights = [[0.0; 2]; 2];
    let mut estimates = [p0.mean.clone(), p1.mean.clone()];
    for j in 0..2 {
        if let Some(m) = column_mixture(log_lr, weights, j, pm) {
            let (d0, d1) = m.deltas();
            delta_weights[0][j] = d0;
            delta_weights[1][j] = d1;
        }
        let w = estimator_weights(log_lr, weights, j, pm);
        estimates[j] = &p0.mean * w.w0 + &p1.mean * w.w1;
    }
    Ok(PosteriorSummary {
        posteriors: [p0, p1],
        log_lr,
        delta,
        delta_weights,
        estimates,
    })
}

/// Binary LQG posterior provider conditioned on a fixed `U`.
///
/// Preparation costs two factorizations per hypothesis. Each call of
/// [`PosteriorProvider::sample_moments`] afterwards is allocation-free and
/// `O(N²)` (`O(N)` on the diagonal path).
#[derive(Debug, Clone)]
pub struct LqgKernel {
    n: usize,
    diagonal: bool,
    sigma2: f64,
    hyps: [KernelHypothesis; 2],
    samplers: [Sampler; 2],
}

#[derive(Debug, Clone)]
struct KernelHypothesis {
    point_mass: bool,
    /// Posterior covariance `(U/σ² + Σ⁻¹)⁻¹`, row-major (diagonal only on the fast path).
    gain: Vec<f64>,
    /// `Σ⁻¹μ`, or `μ` for a point mass.
    offset: Vec<f64>,
    /// Data-independent part of the reduced log-evidence.
    constant: f64,
    trace: f64,
}

#[derive(Debug, Clone)]
struct Sampler {
    /// `E_i[v] = Uμ_i`.
    mean: Vec<f64>,
    /// `S` with `SSᵀ = UΣ_iU + σ²U`, row-major (diagonal only on the fast path).
    factor: Vec<f64>,
}

fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

impl LqgKernel {
    pub fn new(u: &DMatrix<f64>, model: &LqgModel) -> Result<Self> {
        model.require_binary()?;
        let n = model.n();
        if u.nrows() != n || u.ncols() != n {
            return Err(SjdeError::DimensionMismatch {
                what: "U statistic size",
                expected: n,
                got: u.nrows().max(u.ncols()),
            });
        }
        check_psd(u)?;
        let u = linalg::symmetrize(u);
        let sigma2 = model.noise_variance();
        let diagonal = linalg::is_diagonal(&u) && model.priors().iter().all(|p| p.cache().diagonal.is_some());
        let mut hyps = Vec::with_capacity(2);
        let mut samplers = Vec::with_capacity(2);
        for prior in model.priors() {
            let c = prior.cache();
            let mu = prior.mean();
            let h = if prior.is_point_mass() {
                KernelHypothesis {
                    point_mass: true,
                    gain: Vec::new(),
                    offset: mu.iter().copied().collect(),
                    constant: -0.5 * mu.dot(&(&u * mu)) / sigma2,
                    trace: 0.0,
                }
            } else if diagonal {
                let rho2 = c.diagonal.as_ref().expect("diagonal prior");
                let mut gain = Vec::with_capacity(n);
                let mut log_det_p = 0.0;
                for k in 0..n {
                    let p = u[(k, k)] / sigma2 + 1.0 / rho2[k];
                    gain.push(1.0 / p);
                    log_det_p += p.ln();
                }
                KernelHypothesis {
                    point_mass: false,
                    trace: gain.iter().sum(),
                    gain,
                    offset: c.precision_mean.iter().copied().collect(),
                    constant: -0.5 * c.mean_quad - 0.5 * c.log_det_cov - 0.5 * log_det_p,
                }
            } else {
                let precision = linalg::symmetrize(&(&u / sigma2 + &c.precision));
                let factor = SpdFactor::new(&precision)?;
                let cov = factor.inverse();
                KernelHypothesis {
                    point_mass: false,
                    trace: cov.trace(),
                    gain: to_row_major(&cov),
                    offset: c.precision_mean.iter().copied().collect(),
                    constant: -0.5 * c.mean_quad - 0.5 * c.log_det_cov - 0.5 * factor.log_det(),
                }
            };
            hyps.push(h);

            let v_cov = &u * prior.covariance() * &u + &u * sigma2;
            let factor = if diagonal {
                (0..n).map(|k| v_cov[(k, k)].max(0.0).sqrt()).collect()
            } else {
                to_row_major(&linalg::psd_factor(&v_cov))
            };
            samplers.push(Sampler {
                mean: (&u * mu).iter().copied().collect(),
                factor,
            });
        }
        let hyps: [KernelHypothesis; 2] = hyps.try_into().expect("two hypotheses");
        let samplers: [Sampler; 2] = samplers.try_into().expect("two hypotheses");
        Ok(Self {
            n,
            diagonal,
            sigma2,
            hyps,
            samplers,
        })
    }

    pub fn is_diagonal(&self) -> bool {
        self.diagonal
    }

    /// Posterior moments for a given data statistic `v`.
    pub fn moments_at(&self, v: &[f64], out: &mut PosteriorMoments) {
        let n = self.n;
        let mut ell = [0.0; 2];
        for (i, h) in self.hyps.iter().enumerate() {
            let e = &mut out.means[i];
            if h.point_mass {
                e.copy_from_slice(&h.offset);
                ell[i] = h.offset.iter().zip(v).map(|(m, v)| m * v).sum::<f64>() / self.sigma2 + h.constant;
                out.traces[i] = 0.0;
                continue;
            }
            let b = &mut out.work[..n];
            for k in 0..n {
                b[k] = v[k] / self.sigma2 + h.offset[k];
            }
            if self.diagonal {
                for k in 0..n {
                    e[k] = h.gain[k] * b[k];
                }
            } else {
                for r in 0..n {
                    let row = &h.gain[r * n..(r + 1) * n];
                    e[r] = row.iter().zip(b.iter()).map(|(g, b)| g * b).sum();
                }
            }
            let quad: f64 = b.iter().zip(e.iter()).map(|(b, e)| b * e).sum();
            ell[i] = 0.5 * quad + h.constant;
            out.traces[i] = h.trace;
        }
        out.log_lr = ell[1] - ell[0];
    }

    /// Draws `v ~ N(Uμ_i, UΣ_iU + σ²U)` into `v`.
    pub fn sample_v<R: Rng + ?Sized>(&self, truth: usize, rng: &mut R, z: &mut [f64], v: &mut [f64]) {
        let n = self.n;
        let s = &self.samplers[truth];
        for zk in z.iter_mut().take(n) {
            *zk = rng.sample(StandardNormal);
        }
        if self.diagonal {
            for k in 0..n {
                v[k] = s.mean[k] + s.factor[k] * z[k];
            }
        } else {
            for r in 0..n {
                let row = &s.factor[r * n..(r + 1) * n];
                v[r] = s.mean[r] + row.iter().zip(z.iter()).map(|(f, z)| f * z).sum::<f64>();
            }
        }
    }
}

impl PosteriorProvider for LqgKernel {
    fn dim(&self) -> usize {
        self.n
    }

    fn null_is_point_mass(&self) -> bool {
        self.hyps[0].point_mass
    }

    fn sample_moments<R: Rng + ?Sized>(&self, truth: usize, rng: &mut R, out: &mut PosteriorMoments) {
        let n = self.n;
        let mut scratch = std::mem::take(&mut out.scratch);
        scratch.resize(2 * n, 0.0);
        let (z, v) = scratch.split_at_mut(n);
        self.sample_v(truth, rng, z, v);
        self.moments_at(v, out);
        out.scratch = scratch;
    }
}
