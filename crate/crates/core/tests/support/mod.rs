//! Reference implementations used only by tests: direct quadrature on
//! scalar models and a full-data simulator of the binary Bayes cost.
//!
//! Nothing here goes through the sufficient statistics; posteriors use the
//! gain form on the stacked observations and likelihoods use the marginal
//! law of `y`.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Scalar prior `N(mean, var)`.
#[derive(Debug, Clone, Copy)]
pub struct ScalarPrior {
    pub mean: f64,
    pub var: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct ScalarPosterior {
    pub mean: f64,
    pub var: f64,
    /// `ln p(y_1..y_t)` with every normalizing constant.
    pub log_marginal: f64,
}

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Trapezoid rule on `[-12, 12]` with `nodes` points for
/// `y_t = h_t x + w_t`, `w_t ~ N(0, σ²)`.
pub fn quadrature(prior: ScalarPrior, sigma2: f64, h: &[f64], y: &[f64], nodes: usize) -> ScalarPosterior {
    let (lo, hi) = (-12.0, 12.0);
    let dx = (hi - lo) / (nodes - 1) as f64;
    let log_f = |x: f64| {
        let mut l = -0.5 * (LN_2PI + prior.var.ln()) - 0.5 * (x - prior.mean).powi(2) / prior.var;
        for (ht, yt) in h.iter().zip(y) {
            l += -0.5 * (LN_2PI + sigma2.ln()) - 0.5 * (yt - ht * x).powi(2) / sigma2;
        }
        l
    };
    let peak = (0..nodes).map(|i| log_f(lo + i as f64 * dx)).fold(f64::NEG_INFINITY, f64::max);
    let (mut z, mut m1, mut m2) = (0.0, 0.0, 0.0);
    for i in 0..nodes {
        let x = lo + i as f64 * dx;
        let w = if i == 0 || i == nodes - 1 { 0.5 } else { 1.0 };
        let f = w * (log_f(x) - peak).exp();
        z += f;
        m1 += f * x;
        m2 += f * x * x;
    }
    let mean = m1 / z;
    ScalarPosterior {
        mean,
        var: m2 / z - mean * mean,
        log_marginal: peak + (z * dx).ln(),
    }
}

/// Exact `ln N(y; hμ, σ²I + hΣhᵀ)`.
pub fn log_marginal(h: &DMatrix<f64>, y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>, sigma2: f64) -> f64 {
    let t = h.nrows();
    let s = h * cov * h.transpose() + DMatrix::identity(t, t) * sigma2;
    let chol = s.clone().cholesky().expect("marginal covariance is positive definite");
    let r = y - h * mean;
    let quad = r.dot(&chol.solve(&r));
    let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
    -0.5 * (t as f64 * LN_2PI + log_det + quad)
}

/// Gain-form posterior `(mean, covariance)` given stacked `h`, `y`.
pub fn gain_posterior(h: &DMatrix<f64>, y: &DVector<f64>, mean: &DVector<f64>, cov: &DMatrix<f64>, sigma2: f64) -> (DVector<f64>, DMatrix<f64>) {
    let t = h.nrows();
    let s = h * cov * h.transpose() + DMatrix::identity(t, t) * sigma2;
    let s_inv = s.try_inverse().expect("invertible innovation covariance");
    let gain = cov * h.transpose() * s_inv;
    let m = mean + &gain * (y - h * mean);
    let c = cov - &gain * h * cov;
    (m, (&c + c.transpose()) * 0.5)
}

fn draw(mean: &DVector<f64>, cov: &DMatrix<f64>, rng: &mut ChaCha8Rng) -> DVector<f64> {
    let n = mean.len();
    let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
    if cov.iter().all(|&c| c == 0.0) {
        return mean.clone();
    }
    let eig = cov.clone().symmetric_eigen();
    let root = &eig.eigenvectors * DMatrix::from_diagonal(&eig.eigenvalues.map(|l| l.max(0.0).sqrt()));
    mean + root * z
}

/// Binary problem written out without any library type.
#[derive(Debug, Clone)]
pub struct BinaryProblem {
    pub means: [DVector<f64>; 2],
    pub covs: [DMatrix<f64>; 2],
    pub sigma2: f64,
    pub a: [f64; 2],
    /// `b[i][j]`.
    pub b: [[f64; 2]; 2],
    /// The null parameter is fixed at its mean.
    pub null_point_mass: bool,
}

/// Decision, reported estimate and `log L` of the optimum pair on a full
/// data record.
pub fn optimum_on_record(p: &BinaryProblem, h: &DMatrix<f64>, y: &DVector<f64>) -> (usize, DVector<f64>, f64) {
    let post: Vec<(DVector<f64>, DMatrix<f64>)> = (0..2).map(|i| gain_posterior(h, y, &p.means[i], &p.covs[i], p.sigma2)).collect();
    let ll: Vec<f64> = (0..2).map(|i| log_marginal(h, y, &p.means[i], &p.covs[i], p.sigma2)).collect();
    let log_lr = ll[1] - ll[0];
    let lr = log_lr.exp();
    // Estimator of column j mixes the posterior means with b0j : b1j·L.
    let estimate = |j: usize| -> DVector<f64> {
        if p.null_point_mass && j == 0 {
            return post[0].0.clone();
        }
        let (w0, w1) = (p.b[0][j], p.b[1][j] * lr);
        if w0 + w1 == 0.0 || !(w0 + w1).is_finite() {
            return if w1 > 0.0 || j == 1 { post[1].0.clone() } else { post[0].0.clone() };
        }
        (&post[0].0 * w0 + &post[1].0 * w1) / (w0 + w1)
    };
    let est = [estimate(0), estimate(1)];
    let delta = |i: usize, j: usize| post[i].1.trace() + (&est[j] - &post[i].0).norm_squared();
    let risk = |j: usize| -> f64 {
        let under0 = if j != 0 { p.a[0] } else { 0.0 } + p.b[0][j] * delta(0, j);
        let under1 = if j != 1 { p.a[1] } else { 0.0 } + p.b[1][j] * delta(1, j);
        under0 + if under1 == 0.0 { 0.0 } else { lr * under1 }
    };
    let d = usize::from(risk(1) <= risk(0));
    (d, est[d].clone(), log_lr)
}

/// Monte Carlo of `Σ_i E_i[a_i 1{d ≠ i} + b_{id}‖x̂ − x‖²]` with the
/// matrices `h` fixed. Returns `(mean, standard error)`.
pub fn full_path_cost(p: &BinaryProblem, h: &DMatrix<f64>, replicates: usize, seed: u64) -> (f64, f64) {
    let mut rng = rng(seed);
    let (mut mean, mut var) = (0.0, 0.0);
    let sigma = p.sigma2.sqrt();
    for i in 0..2 {
        let mut vals = Vec::with_capacity(replicates);
        for _ in 0..replicates {
            let x = draw(&p.means[i], &p.covs[i], &mut rng);
            let y = h * &x + DVector::from_fn(h.nrows(), |_, _| sigma * rng.sample::<f64, _>(StandardNormal));
            let (d, xh, _) = optimum_on_record(p, h, &y);
            let loss = if d != i { p.a[i] } else { 0.0 } + p.b[i][d] * (&xh - &x).norm_squared();
            vals.push(loss);
        }
        let m = vals.iter().sum::<f64>() / replicates as f64;
        let v = vals.iter().map(|l| (l - m).powi(2)).sum::<f64>() / (replicates - 1) as f64;
        mean += m;
        var += v / replicates as f64;
    }
    (mean, var.sqrt())
}
