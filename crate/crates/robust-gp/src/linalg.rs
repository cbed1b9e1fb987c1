//! Cholesky factorization with escalating diagonal jitter.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::GpError;

/// Lower-triangular Cholesky factor of a (possibly jittered) SPD matrix,
/// with a cached log-determinant.
pub struct CholFactor {
    chol: Cholesky<f64, Dyn>,
    log_det: f64,
    jitter: f64,
    n: usize,
}

impl CholFactor {
    /// Factor `mat`, first as given, then with jitter escalating from
    /// 1e-8 to 1e-4 of the mean diagonal in factor-of-ten steps.
    pub fn new(mat: &DMatrix<f64>) -> Result<Self, GpError> {
        if mat.nrows() != mat.ncols() || mat.nrows() == 0 {
            return Err(GpError::DimensionMismatch(format!(
                "factorization needs a nonempty square matrix, got {}x{}",
                mat.nrows(),
                mat.ncols()
            )));
        }
        let mean_diag = mat.diagonal().sum() / mat.nrows() as f64;
        let scale = if mean_diag > 0.0 { mean_diag } else { 1.0 };
        let mut attempted = 0.0;
        for k in 0..=5 {
            let jitter = if k == 0 { 0.0 } else { 1e-8 * 10f64.powi(k - 1) * scale };
            attempted = jitter;
            match Self::try_once(mat, jitter) {
                Some(f) => {
                    if jitter > 0.0 {
                        log::debug!("cholesky needed jitter {jitter:.3e}");
                    }
                    return Ok(f);
                }
                None => continue,
            }
        }
        Err(GpError::Factorization {
            attempted_jitter: attempted,
        })
    }

    /// Factor `mat + jitter * I` with no escalation.
    pub fn with_jitter(mat: &DMatrix<f64>, jitter: f64) -> Result<Self, GpError> {
        Self::try_once(mat, jitter).ok_or(GpError::Factorization {
            attempted_jitter: jitter,
        })
    }

    fn try_once(mat: &DMatrix<f64>, jitter: f64) -> Option<Self> {
        let n = mat.nrows();
        let mut m = mat.clone();
        if jitter > 0.0 {
            for i in 0..n {
                m[(i, i)] += jitter;
            }
        }
        let chol = Cholesky::new(m)?;
        let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        if !log_det.is_finite() {
            return None;
        }
        Some(CholFactor {
            chol,
            log_det,
            jitter,
            n,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn log_det(&self) -> f64 {
        self.log_det
    }

    /// Jitter that was actually added to the diagonal.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        self.chol.solve(b)
    }

    pub fn solve_mat(&self, b: &DMatrix<f64>) -> DMatrix<f64> {
        self.chol.solve(b)
    }

    pub fn inverse(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn lower(&self) -> DMatrix<f64> {
        self.chol.l()
    }
}
