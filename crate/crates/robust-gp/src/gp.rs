//! Gaussian-likelihood machinery shared by every model: log densities,
//! noise-augmented covariance assembly, predictive conditioning, and the
//! marginal-likelihood gradient feeding the optimizer.

use nalgebra::{DMatrix, DVector};

use crate::dataset::Dataset;
use crate::error::GpError;
use crate::kernel::{kernel_grad, kernel_matrix, KernelSpec};
use crate::linalg::CholFactor;

const LN_2PI: f64 = 1.8378770664093453;

/// Posterior mean and variance of the latent function at test points.
/// Observation noise is not included; callers add their own noise proxy
/// when scoring held-out responses.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictiveDist {
    pub mean: DVector<f64>,
    pub variance: DVector<f64>,
}

/// Observation-noise structure attached to the training covariance.
#[derive(Debug, Clone, Copy)]
pub enum NoiseSpec<'a> {
    /// sigma^2 on every diagonal entry.
    Homoscedastic(f64),
    /// One variance per training point.
    Heteroscedastic(&'a DVector<f64>),
}

impl NoiseSpec<'_> {
    fn validate(&self, n: usize) -> Result<(), GpError> {
        match self {
            NoiseSpec::Homoscedastic(v) => {
                if !(v.is_finite() && *v > 0.0) {
                    return Err(GpError::InvalidInput(format!("noise variance must be positive, got {v}")));
                }
            }
            NoiseSpec::Heteroscedastic(d) => {
                if d.len() != n {
                    return Err(GpError::DimensionMismatch(format!(
                        "noise diagonal length {} vs {} points",
                        d.len(),
                        n
                    )));
                }
                if d.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                    return Err(GpError::InvalidInput("noise diagonal entries must be positive".into()));
                }
            }
        }
        Ok(())
    }

    fn add_to_diagonal(&self, k: &mut DMatrix<f64>) {
        match self {
            NoiseSpec::Homoscedastic(v) => {
                for i in 0..k.nrows() {
                    k[(i, i)] += v;
                }
            }
            NoiseSpec::Heteroscedastic(d) => {
                for i in 0..k.nrows() {
                    k[(i, i)] += d[i];
                }
            }
        }
    }
}

/// Noise-augmented training covariance D + C_xx.
pub fn assemble_cov(spec: &KernelSpec, x: &DMatrix<f64>, noise: &NoiseSpec) -> Result<DMatrix<f64>, GpError> {
    noise.validate(x.nrows())?;
    let mut k = kernel_matrix(spec, x, x)?;
    noise.add_to_diagonal(&mut k);
    Ok(k)
}

/// Gaussian negative log likelihood of a centered vector under covariance `k`:
/// (N/2) log 2pi + 1/2 log|k| + 1/2 y' k^-1 y, solved by Cholesky.
pub fn gauss_nll(y_centered: &DVector<f64>, k: &DMatrix<f64>) -> Result<f64, GpError> {
    if k.nrows() != y_centered.len() {
        return Err(GpError::DimensionMismatch(format!(
            "gauss_nll: {}x{} matrix vs {} responses",
            k.nrows(),
            k.ncols(),
            y_centered.len()
        )));
    }
    let f = CholFactor::new(k)?;
    Ok(nll_from_factor(&f, y_centered))
}

/// Same likelihood with a caller-chosen diagonal jitter; used by the
/// conditioning sanity checks.
pub fn gauss_nll_with_jitter(y_centered: &DVector<f64>, k: &DMatrix<f64>, jitter: f64) -> Result<f64, GpError> {
    let f = CholFactor::with_jitter(k, jitter)?;
    Ok(nll_from_factor(&f, y_centered))
}

pub(crate) fn nll_from_factor(f: &CholFactor, y_centered: &DVector<f64>) -> f64 {
    let quad = y_centered.dot(&f.solve(y_centered));
    0.5 * (f.n() as f64) * LN_2PI + 0.5 * f.log_det() + 0.5 * quad
}

/// Posterior predictive distribution of the latent function.
///
/// `residual` is the caller-centered response vector: y - delta for the
/// constant-bias model, y - mu for the random-bias model, y itself for the
/// plain GP. The variance is clamped at zero after numerical cancellation.
pub fn predict(
    train: &Dataset,
    spec: &KernelSpec,
    noise_diag: &DVector<f64>,
    residual: &DVector<f64>,
    xstar: &DMatrix<f64>,
) -> Result<PredictiveDist, GpError> {
    let n = train.n();
    if residual.len() != n {
        return Err(GpError::DimensionMismatch(format!(
            "predict: residual length {} vs {} training points",
            residual.len(),
            n
        )));
    }
    if xstar.ncols() != train.dim() {
        return Err(GpError::DimensionMismatch(format!(
            "predict: test dim {} vs train dim {}",
            xstar.ncols(),
            train.dim()
        )));
    }
    if xstar.iter().any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite("test locations".into()));
    }
    let noise = NoiseSpec::Heteroscedastic(noise_diag);
    let k = assemble_cov(spec, train.x(), &noise)?;
    let f = CholFactor::new(&k)?;
    let alpha = f.solve(residual);
    let kx = kernel_matrix(spec, train.x(), xstar)?;
    let mean = kx.transpose() * &alpha;
    let w = f.solve_mat(&kx);
    let c_star = spec.signal_variance();
    let t = xstar.nrows();
    let mut variance = DVector::zeros(t);
    for j in 0..t {
        let v = c_star - kx.column(j).dot(&w.column(j));
        variance[j] = v.max(0.0);
    }
    Ok(PredictiveDist { mean, variance })
}

/// Gradient of `gauss_nll(residual, D + C_xx)` with respect to the log
/// hyperparameters.
#[derive(Debug, Clone)]
pub struct NllGradient {
    pub log_signal_variance: f64,
    pub log_lengthscale: f64,
    /// One entry for homoscedastic noise (d/d log sigma^2), or one per point
    /// for heteroscedastic noise (d/d log tau_i^2).
    pub log_noise: DVector<f64>,
}

/// Value and gradient of the marginal negative log likelihood at the
/// assembled covariance K = D + C_xx. Uses the standard identity
/// dNLL/dp = 1/2 tr(K^-1 dK) - 1/2 a' dK a with a = K^-1 r.
pub fn nll_grad_theta(
    train: &Dataset,
    spec: &KernelSpec,
    noise: &NoiseSpec,
    residual: &DVector<f64>,
) -> Result<(f64, NllGradient), GpError> {
    let n = train.n();
    noise.validate(n)?;
    if residual.len() != n {
        return Err(GpError::DimensionMismatch(format!(
            "nll_grad_theta: residual length {} vs {} points",
            residual.len(),
            n
        )));
    }
    let grads = kernel_grad(spec, train.x())?;
    let mut k = grads.d_log_signal_variance.clone();
    noise.add_to_diagonal(&mut k);
    let f = CholFactor::new(&k)?;
    let value = nll_from_factor(&f, residual);
    let alpha = f.solve(residual);
    let kinv = f.inverse();

    let grad_of = |dk: &DMatrix<f64>| -> f64 {
        let trace_term: f64 = kinv.iter().zip(dk.iter()).map(|(a, b)| a * b).sum();
        let quad_term = alpha.dot(&(dk * &alpha));
        0.5 * trace_term - 0.5 * quad_term
    };

    let g_sv = grad_of(&grads.d_log_signal_variance);
    let g_ls = grad_of(&grads.d_log_lengthscale);
    let log_noise = match noise {
        NoiseSpec::Homoscedastic(s2) => {
            let trace: f64 = (0..n).map(|i| kinv[(i, i)]).sum();
            DVector::from_element(1, 0.5 * s2 * (trace - alpha.norm_squared()))
        }
        NoiseSpec::Heteroscedastic(d) => {
            DVector::from_fn(n, |i, _| 0.5 * d[i] * (kinv[(i, i)] - alpha[i] * alpha[i]))
        }
    };
    Ok((
        value,
        NllGradient {
            log_signal_variance: g_sv,
            log_lengthscale: g_ls,
            log_noise,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelFamily;
    use approx::assert_relative_eq;

    #[test]
    fn scalar_nll_cases() {
        // N=1, y=0, K=1: 1/2 log 2pi
        let v = gauss_nll(&DVector::from_vec(vec![0.0]), &DMatrix::from_element(1, 1, 1.0)).unwrap();
        assert_relative_eq!(v, 0.5 * LN_2PI, max_relative = 1e-14);
        // N=1, y=2, K=4: 1/2 log 2pi + 1/2 log 4 + 1/2
        let v = gauss_nll(&DVector::from_vec(vec![2.0]), &DMatrix::from_element(1, 1, 4.0)).unwrap();
        assert_relative_eq!(v, 0.5 * LN_2PI + 0.5 * 4.0f64.ln() + 0.5, max_relative = 1e-14);
    }

    #[test]
    fn nll_rejects_length_mismatch() {
        let r = gauss_nll(&DVector::zeros(2), &DMatrix::identity(3, 3));
        assert!(r.is_err());
    }

    fn toy_train() -> Dataset {
        let x = DMatrix::from_row_slice(4, 1, &[-1.5, -0.2, 0.7, 2.0]);
        let y = DVector::from_vec(vec![0.3, -0.1, 0.4, 1.0]);
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn predict_interpolates_at_training_point() {
        let train = toy_train();
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 1.0).unwrap();
        let noise = DVector::from_element(4, 1e-10);
        let xs = DMatrix::from_row_slice(1, 1, &[0.7]);
        let p = predict(&train, &spec, &noise, train.y(), &xs).unwrap();
        assert!((p.mean[0] - 0.4).abs() < 1e-4);
        assert!(p.variance[0] < 1e-4);
    }

    #[test]
    fn predict_reverts_to_prior_far_away() {
        let train = toy_train();
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.3, 1.0).unwrap();
        let noise = DVector::from_element(4, 0.1);
        let xs = DMatrix::from_row_slice(1, 1, &[100.0]);
        let p = predict(&train, &spec, &noise, train.y(), &xs).unwrap();
        assert!(p.mean[0].abs() < 1e-6);
        assert!((p.variance[0] - 1.3).abs() < 1e-6);
    }

    #[test]
    fn predict_variance_never_exceeds_prior() {
        let train = toy_train();
        let spec = KernelSpec::new(KernelFamily::Exponential, 0.9, 0.5).unwrap();
        let noise = DVector::from_element(4, 0.05);
        let xs = DMatrix::from_row_slice(5, 1, &[-2.0, -0.2, 0.0, 0.7, 3.0]);
        let p = predict(&train, &spec, &noise, train.y(), &xs).unwrap();
        for v in p.variance.iter() {
            assert!(*v <= 0.9 + 1e-9);
            assert!(*v >= 0.0);
        }
    }

    #[test]
    fn predict_rejects_dimension_mismatch() {
        let train = toy_train();
        let spec = KernelSpec::new(KernelFamily::Exponential, 1.0, 1.0).unwrap();
        let noise = DVector::from_element(4, 0.1);
        let xs = DMatrix::zeros(2, 3);
        assert!(predict(&train, &spec, &noise, train.y(), &xs).is_err());
    }

    #[test]
    fn doubling_jitter_barely_moves_nll() {
        let train = toy_train();
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 1.0).unwrap();
        let noise = NoiseSpec::Homoscedastic(0.2);
        let k = assemble_cov(&spec, train.x(), &noise).unwrap();
        let j = 1e-8 * k.diagonal().sum() / 4.0;
        let a = gauss_nll_with_jitter(train.y(), &k, j).unwrap();
        let b = gauss_nll_with_jitter(train.y(), &k, 2.0 * j).unwrap();
        assert!((a - b).abs() < 1e-6);
    }
}
