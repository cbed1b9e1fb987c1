//! Parametric covariance functions and covariance-matrix assembly.
//!
//! Hyperparameters are held in log-space so that positivity is structural:
//! every finite parameter vector corresponds to a valid kernel.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::GpError;

/// Supported covariance families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    /// s^2 * exp(-||a-b||^2 / (2 l^2))
    SquaredExponential,
    /// s^2 * exp(-||a-b|| / l)
    Exponential,
}

impl std::fmt::Display for KernelFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelFamily::SquaredExponential => write!(f, "squared_exponential"),
            KernelFamily::Exponential => write!(f, "exponential"),
        }
    }
}

/// An isotropic kernel: one output scale and one shared lengthscale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "KernelSpecRepr", into = "KernelSpecRepr")]
pub struct KernelSpec {
    family: KernelFamily,
    log_signal_variance: f64,
    log_lengthscale: f64,
}

/// Plain-parameter form used on the wire.
#[derive(Serialize, Deserialize)]
struct KernelSpecRepr {
    family: KernelFamily,
    signal_variance: f64,
    lengthscale: f64,
}

impl TryFrom<KernelSpecRepr> for KernelSpec {
    type Error = GpError;
    fn try_from(r: KernelSpecRepr) -> Result<Self, GpError> {
        KernelSpec::new(r.family, r.signal_variance, r.lengthscale)
    }
}

impl From<KernelSpec> for KernelSpecRepr {
    fn from(s: KernelSpec) -> Self {
        KernelSpecRepr {
            family: s.family,
            signal_variance: s.signal_variance(),
            lengthscale: s.lengthscale(),
        }
    }
}

impl KernelSpec {
    pub fn new(family: KernelFamily, signal_variance: f64, lengthscale: f64) -> Result<Self, GpError> {
        if !(signal_variance.is_finite() && signal_variance > 0.0) {
            return Err(GpError::InvalidInput(format!(
                "signal_variance must be positive and finite, got {signal_variance}"
            )));
        }
        if !(lengthscale.is_finite() && lengthscale > 0.0) {
            return Err(GpError::InvalidInput(format!(
                "lengthscale must be positive and finite, got {lengthscale}"
            )));
        }
        Ok(KernelSpec {
            family,
            log_signal_variance: signal_variance.ln(),
            log_lengthscale: lengthscale.ln(),
        })
    }

    pub fn from_log(family: KernelFamily, log_signal_variance: f64, log_lengthscale: f64) -> Result<Self, GpError> {
        if !log_signal_variance.is_finite() || !log_lengthscale.is_finite() {
            return Err(GpError::NonFinite("log kernel parameters".into()));
        }
        Ok(KernelSpec {
            family,
            log_signal_variance,
            log_lengthscale,
        })
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn signal_variance(&self) -> f64 {
        self.log_signal_variance.exp()
    }

    pub fn lengthscale(&self) -> f64 {
        self.log_lengthscale.exp()
    }

    pub fn log_signal_variance(&self) -> f64 {
        self.log_signal_variance
    }

    pub fn log_lengthscale(&self) -> f64 {
        self.log_lengthscale
    }

    /// Kernel value from a squared distance. Hot path for matrix assembly.
    #[inline]
    pub(crate) fn eval_sq_dist(&self, d2: f64) -> f64 {
        let s2 = self.signal_variance();
        let ell = self.lengthscale();
        match self.family {
            KernelFamily::SquaredExponential => s2 * (-d2 / (2.0 * ell * ell)).exp(),
            KernelFamily::Exponential => s2 * (-d2.sqrt() / ell).exp(),
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, z)| {
            let d = x - z;
            d * d
        })
        .sum()
}

/// Evaluate the covariance between two points.
pub fn kernel_eval(spec: &KernelSpec, a: &[f64], b: &[f64]) -> Result<f64, GpError> {
    if a.len() != b.len() || a.is_empty() {
        return Err(GpError::DimensionMismatch(format!(
            "kernel_eval: point dims {} vs {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite("kernel_eval input point".into()));
    }
    Ok(spec.eval_sq_dist(sq_dist(a, b)))
}

/// Cross-covariance matrix with entry (i, j) = c(x_i, z_j).
pub fn kernel_matrix(spec: &KernelSpec, x: &DMatrix<f64>, z: &DMatrix<f64>) -> Result<DMatrix<f64>, GpError> {
    if x.ncols() != z.ncols() {
        return Err(GpError::DimensionMismatch(format!(
            "kernel_matrix: column counts {} vs {}",
            x.ncols(),
            z.ncols()
        )));
    }
    let xr: Vec<Vec<f64>> = (0..x.nrows()).map(|i| x.row(i).iter().copied().collect()).collect();
    let zr: Vec<Vec<f64>> = (0..z.nrows()).map(|i| z.row(i).iter().copied().collect()).collect();
    Ok(DMatrix::from_fn(x.nrows(), z.nrows(), |i, j| {
        spec.eval_sq_dist(sq_dist(&xr[i], &zr[j]))
    }))
}

/// Gradients of the training covariance with respect to the log hyperparameters.
pub struct KernelGrads {
    /// dC / d log s^2; equals C itself for both families.
    pub d_log_signal_variance: DMatrix<f64>,
    /// dC / d log l.
    pub d_log_lengthscale: DMatrix<f64>,
}

/// Analytic gradient matrices of `kernel_matrix(spec, x, x)`.
pub fn kernel_grad(spec: &KernelSpec, x: &DMatrix<f64>) -> Result<KernelGrads, GpError> {
    if x.nrows() == 0 {
        return Err(GpError::InvalidInput("kernel_grad: empty input".into()));
    }
    let n = x.nrows();
    let s2 = spec.signal_variance();
    let ell = spec.lengthscale();
    let xr: Vec<Vec<f64>> = (0..n).map(|i| x.row(i).iter().copied().collect()).collect();
    let mut c = DMatrix::zeros(n, n);
    let mut dl = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            let d2 = sq_dist(&xr[i], &xr[j]);
            match spec.family {
                KernelFamily::SquaredExponential => {
                    let v = s2 * (-d2 / (2.0 * ell * ell)).exp();
                    c[(i, j)] = v;
                    dl[(i, j)] = v * d2 / (ell * ell);
                }
                KernelFamily::Exponential => {
                    let r = d2.sqrt();
                    let v = s2 * (-r / ell).exp();
                    c[(i, j)] = v;
                    dl[(i, j)] = v * r / ell;
                }
            }
        }
    }
    Ok(KernelGrads {
        d_log_signal_variance: c,
        d_log_lengthscale: dl,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_distance_equals_signal_variance() {
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, 2.0, 1.0).unwrap();
        let v = kernel_eval(&spec, &[0.3, -1.0], &[0.3, -1.0]).unwrap();
        assert_eq!(v, 2.0);
    }

    #[test]
    fn exponential_unit_distance() {
        let spec = KernelSpec::new(KernelFamily::Exponential, 1.0, 1.0).unwrap();
        let v = kernel_eval(&spec, &[0.0], &[1.0]).unwrap();
        assert_relative_eq!(v, (-1.0f64).exp(), max_relative = 1e-15);
    }

    #[test]
    fn se_matches_scalar_oracle() {
        // s^2=1, l=2, ||a-b||=2 -> exp(-0.5), recomputed here from the formula
        let s2 = 1.0f64;
        let ell = 2.0f64;
        let r = 2.0f64;
        let oracle = s2 * (-r * r / (2.0 * ell * ell)).exp();
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, s2, ell).unwrap();
        let v = kernel_eval(&spec, &[0.0], &[2.0]).unwrap();
        assert_relative_eq!(v, oracle, max_relative = 1e-15);
        assert_relative_eq!(v, 0.6065306597126334, max_relative = 1e-12);
    }

    #[test]
    fn eval_rejects_bad_input() {
        let spec = KernelSpec::new(KernelFamily::Exponential, 1.0, 1.0).unwrap();
        assert!(kernel_eval(&spec, &[0.0, 1.0], &[0.0]).is_err());
        assert!(kernel_eval(&spec, &[f64::NAN], &[0.0]).is_err());
    }

    #[test]
    fn spec_rejects_nonpositive_parameters() {
        assert!(KernelSpec::new(KernelFamily::Exponential, 0.0, 1.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Exponential, 1.0, -2.0).is_err());
        assert!(KernelSpec::new(KernelFamily::Exponential, f64::INFINITY, 1.0).is_err());
    }

    #[test]
    fn single_point_matrix_is_signal_variance() {
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.7, 0.4).unwrap();
        let x = DMatrix::from_row_slice(1, 2, &[0.1, 0.2]);
        let k = kernel_matrix(&spec, &x, &x).unwrap();
        assert_eq!(k.nrows(), 1);
        assert_relative_eq!(k[(0, 0)], 1.7, max_relative = 1e-15);
    }

    #[test]
    fn matrix_matches_pairwise_eval() {
        let spec = KernelSpec::new(KernelFamily::Exponential, 0.9, 1.3).unwrap();
        let x = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, -0.5, 0.2, 2.0, -1.0]);
        let k = kernel_matrix(&spec, &x, &x).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let a: Vec<f64> = x.row(i).iter().copied().collect();
                let b: Vec<f64> = x.row(j).iter().copied().collect();
                assert_eq!(k[(i, j)], kernel_eval(&spec, &a, &b).unwrap());
            }
        }
        assert_eq!(k, k.transpose());
    }

    #[test]
    fn matrix_rejects_column_mismatch() {
        let spec = KernelSpec::new(KernelFamily::Exponential, 1.0, 1.0).unwrap();
        let x = DMatrix::zeros(2, 2);
        let z = DMatrix::zeros(2, 3);
        assert!(kernel_matrix(&spec, &x, &z).is_err());
    }

    #[test]
    fn grad_wrt_log_signal_variance_is_the_matrix() {
        for family in [KernelFamily::SquaredExponential, KernelFamily::Exponential] {
            let spec = KernelSpec::new(family, 1.9, 0.7).unwrap();
            let x = DMatrix::from_row_slice(4, 1, &[0.0, 0.5, 1.5, -2.0]);
            let g = kernel_grad(&spec, &x).unwrap();
            let k = kernel_matrix(&spec, &x, &x).unwrap();
            assert_eq!(g.d_log_signal_variance, k);
        }
    }

    #[test]
    fn grads_match_central_finite_differences() {
        let x = DMatrix::from_row_slice(4, 2, &[0.0, 0.3, 1.1, -0.4, -0.9, 0.8, 0.5, 0.5]);
        let h = 1e-6;
        for family in [KernelFamily::SquaredExponential, KernelFamily::Exponential] {
            let spec = KernelSpec::new(family, 1.4, 0.8).unwrap();
            let g = kernel_grad(&spec, &x).unwrap();
            for (which, analytic) in [(0, &g.d_log_signal_variance), (1, &g.d_log_lengthscale)] {
                let bump = |sign: f64| {
                    let (mut lsv, mut ll) = (spec.log_signal_variance(), spec.log_lengthscale());
                    if which == 0 {
                        lsv += sign * h;
                    } else {
                        ll += sign * h;
                    }
                    let s = KernelSpec::from_log(family, lsv, ll).unwrap();
                    kernel_matrix(&s, &x, &x).unwrap()
                };
                let fd = (bump(1.0) - bump(-1.0)) / (2.0 * h);
                let max_err = (analytic - &fd).abs().max();
                assert!(max_err < 1e-5, "family {family:?} param {which}: {max_err}");
            }
        }
    }
}
