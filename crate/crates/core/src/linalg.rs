//! Small dense helpers on top of `nalgebra`.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Result, SjdeError};

/// Relative tolerance used when checking symmetry of user-supplied matrices.
pub const SYMMETRY_TOL: f64 = 1e-12;

pub fn check_symmetric(m: &DMatrix<f64>) -> Result<()> {
    if !m.is_square() {
        return Err(SjdeError::DimensionMismatch {
            what: "square matrix columns",
            expected: m.nrows(),
            got: m.ncols(),
        });
    }
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let (a, b) = (m[(i, j)], m[(j, i)]);
            let scale = a.abs().max(b.abs()).max(1.0);
            if (a - b).abs() > SYMMETRY_TOL * scale || a.is_nan() != b.is_nan() {
                return Err(SjdeError::NonSymmetric { row: i, col: j });
            }
        }
    }
    Ok(())
}

/// `(m + mᵀ) / 2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

pub fn is_diagonal(m: &DMatrix<f64>) -> bool {
    m.is_square()
        && (0..m.nrows()).all(|i| (0..m.ncols()).all(|j| i == j || m[(i, j)] == 0.0))
}

/// A factor `S` with `S Sᵀ = m` for a symmetric PSD `m`, negative
/// eigenvalues clipped to zero. Works for rank-deficient `m`.
pub fn psd_factor(m: &DMatrix<f64>) -> DMatrix<f64> {
    if is_diagonal(m) {
        return DMatrix::from_diagonal(&m.diagonal().map(|d| d.max(0.0).sqrt()));
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let mut s = eig.eigenvectors;
    for (j, lambda) in eig.eigenvalues.iter().enumerate() {
        let root = lambda.max(0.0).sqrt();
        s.column_mut(j).scale_mut(root);
    }
    s
}

/// Projection of a symmetric matrix onto the PSD cone (eigenvalue clipping).
pub fn psd_projection(m: &DMatrix<f64>) -> DMatrix<f64> {
    let s = psd_factor(m);
    symmetrize(&(&s * s.transpose()))
}

/// Cholesky factorization of a symmetric positive definite matrix, kept
/// together with its log-determinant.
#[derive(Debug, Clone)]
pub struct SpdFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
}

impl SpdFactor {
    pub fn new(m: &DMatrix<f64>) -> Result<Self> {
        let chol = Cholesky::new(symmetrize(m)).ok_or(SjdeError::SingularPrecision)?;
        let l = chol.l_dirty();
        let mut log_det = 0.0;
        for i in 0..l.nrows() {
            let d = l[(i, i)];
            if !(d > 0.0) || !d.is_finite() {
                return Err(SjdeError::SingularPrecision);
            }
            log_det += 2.0 * d.ln();
        }
        Ok(Self { chol, log_det })
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    /// Explicit inverse, symmetrized.
    pub fn inverse(&self) -> DMatrix<f64> {
        symmetrize(&self.chol.inverse())
    }
}
