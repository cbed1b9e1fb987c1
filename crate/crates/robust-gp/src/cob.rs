//! Constant bias model (COB): a per-observation bias vector estimated under
//! an L1 penalty, so that most biases are exactly zero and outliers carry the
//! nonzero entries.
//!
//! Fitting alternates three blocks: a quasi-Newton pass over
//! (log sigma^2, log s^2, log l) at fixed bias, an exact soft-threshold
//! coordinate descent for the bias vector, and an update of the penalty
//! weight. The recorded objective is the joint negative log density
//! RL1 + R1(lambda), which every block decreases.

use nalgebra::{DMatrix, DVector};

use crate::config::FitConfig;
use crate::dataset::Dataset;
use crate::error::GpError;
use crate::gp::{assemble_cov, nll_from_factor, nll_grad_theta, predict, NoiseSpec, PredictiveDist};
use crate::kernel::{KernelFamily, KernelSpec};
use crate::linalg::CholFactor;
use crate::optim::{minimize, LbfgsOptions};
use crate::util::{clamp, mad_scale, median};

/// A fitted constant-bias model.
#[derive(Debug, Clone)]
pub struct CobFit {
    /// Estimated bias vector; exactly zero off the selected support.
    pub delta: DVector<f64>,
    /// Homoscedastic noise variance.
    pub sigma2: f64,
    pub spec: KernelSpec,
    /// Final L1 weight.
    pub lambda: f64,
    /// Joint negative log density after each outer iteration; non-increasing.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// False if any bias subproblem hit its sweep cap.
    pub subproblem_converged: bool,
}

/// The RL1 objective: Gaussian negative log likelihood of y - delta under
/// sigma^2 I + C_xx, plus lambda * |delta|_1.
pub fn rl1_objective(
    train: &Dataset,
    spec: &KernelSpec,
    sigma2: f64,
    delta: &DVector<f64>,
    lambda: f64,
) -> Result<f64, GpError> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(GpError::InvalidInput(format!("sigma2 must be positive, got {sigma2}")));
    }
    if !(lambda >= 0.0) {
        return Err(GpError::InvalidInput(format!("lambda must be nonnegative, got {lambda}")));
    }
    if delta.len() != train.n() {
        return Err(GpError::DimensionMismatch(format!(
            "rl1_objective: delta length {} vs {} points",
            delta.len(),
            train.n()
        )));
    }
    let k = assemble_cov(spec, train.x(), &NoiseSpec::Homoscedastic(sigma2))?;
    let f = CholFactor::new(&k)?;
    let centered = train.y() - delta;
    Ok(nll_from_factor(&f, &centered) + lambda * delta.iter().map(|d| d.abs()).sum::<f64>())
}

/// Solution of the L1 bias subproblem.
#[derive(Debug, Clone)]
pub struct DeltaSolution {
    pub delta: DVector<f64>,
    /// False when the sweep cap was reached before the coordinate changes
    /// fell under tolerance; the best iterate is still returned.
    pub converged: bool,
}

#[inline]
fn soft(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// argmin over delta of 1/2 (y-delta)' K^-1 (y-delta) + lambda |delta|_1,
/// by cyclic coordinate descent with exact univariate soft-threshold updates.
pub fn solve_delta_subproblem(
    factor: &CholFactor,
    y: &DVector<f64>,
    lambda: f64,
    delta_init: &DVector<f64>,
) -> Result<DeltaSolution, GpError> {
    solve_delta_subproblem_with(factor, y, lambda, delta_init, 500, 1e-8)
}

/// As [`solve_delta_subproblem`] with explicit sweep cap and tolerance.
pub fn solve_delta_subproblem_with(
    factor: &CholFactor,
    y: &DVector<f64>,
    lambda: f64,
    delta_init: &DVector<f64>,
    max_sweeps: usize,
    tol: f64,
) -> Result<DeltaSolution, GpError> {
    if y.len() != factor.n() || delta_init.len() != y.len() {
        return Err(GpError::DimensionMismatch(format!(
            "delta subproblem: factor {} vs y {} vs init {}",
            factor.n(),
            y.len(),
            delta_init.len()
        )));
    }
    if !(lambda > 0.0) {
        return Err(GpError::InvalidInput(format!("lambda must be positive, got {lambda}")));
    }
    let a = factor.inverse();
    let (delta, converged) = solve_delta_with_precision(&a, y, lambda, delta_init, max_sweeps, tol);
    Ok(DeltaSolution { delta, converged })
}

/// Core coordinate-descent loop over the precision matrix a = K^-1.
/// Maintains s = a (y - delta); each accepted coordinate move costs O(N).
pub(crate) fn solve_delta_with_precision(
    a: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    delta_init: &DVector<f64>,
    max_sweeps: usize,
    tol: f64,
) -> (DVector<f64>, bool) {
    let n = y.len();
    let mut delta = delta_init.clone();
    let mut s = a * &(y - &delta);
    for _ in 0..max_sweeps {
        let mut max_change = 0.0f64;
        for i in 0..n {
            let aii = a[(i, i)];
            let v = delta[i] + s[i] / aii;
            let new = soft(v, lambda / aii);
            let change = new - delta[i];
            if change != 0.0 {
                s -= a.column(i) * change;
                delta[i] = new;
                max_change = max_change.max(change.abs());
            }
        }
        if max_change < tol {
            return (delta, true);
        }
    }
    log::warn!("bias subproblem hit the sweep cap ({max_sweeps}) before tolerance");
    (delta, false)
}

/// Stationary point of lambda * sum|delta_i| - N log(lambda / 2), clamped:
/// lambda = N / sum|delta_i|.
pub fn update_lambda_cob(delta: &DVector<f64>, n: usize, bounds: (f64, f64)) -> f64 {
    let sum_abs: f64 = delta.iter().map(|d| d.abs()).sum();
    if sum_abs <= 0.0 {
        return bounds.1;
    }
    clamp(n as f64 / sum_abs, bounds.0, bounds.1)
}

/// Scale-anchored value for the L1 weight: the weight whose median
/// soft-threshold sits `sigma_cut` robust standard deviations out, with the
/// robust scale taken from leave-one-out residuals e_i = [A r]_i / A_ii.
fn lambda_anchor(a: &DMatrix<f64>, residual: &DVector<f64>, sigma_cut: f64, bounds: (f64, f64)) -> f64 {
    let n = residual.len();
    let s = a * residual;
    let diag: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    let loo: Vec<f64> = (0..n).map(|i| s[i] / diag[i]).collect();
    let s_rob = mad_scale(&loo);
    clamp(sigma_cut * s_rob * median(&diag), bounds.0, bounds.1)
}

struct ThetaBlockState {
    log_sigma2: f64,
    spec: KernelSpec,
}

/// Quasi-Newton pass over (log sigma^2, log s^2, log l) at fixed residual.
/// The noise variance carries a small floor so the covariance stays
/// factorizable when the data are noise-free.
fn theta_block(
    train: &Dataset,
    family: KernelFamily,
    state: &ThetaBlockState,
    residual: &DVector<f64>,
    floor: f64,
    iters: usize,
) -> Result<ThetaBlockState, GpError> {
    let x0 = DVector::from_vec(vec![
        state.log_sigma2,
        state.spec.log_signal_variance(),
        state.spec.log_lengthscale(),
    ]);
    let mut objective = |p: &DVector<f64>, need_grad: bool| {
        let sigma2 = p[0].exp() + floor;
        let spec = KernelSpec::from_log(family, p[1], p[2])?;
        let noise = NoiseSpec::Homoscedastic(sigma2);
        if need_grad {
            let (value, grad) = nll_grad_theta(train, &spec, &noise, residual)?;
            let g0 = grad.log_noise[0] * p[0].exp() / sigma2;
            Ok((
                value,
                Some(DVector::from_vec(vec![g0, grad.log_signal_variance, grad.log_lengthscale])),
            ))
        } else {
            let k = assemble_cov(&spec, train.x(), &noise)?;
            let f = CholFactor::new(&k)?;
            Ok((nll_from_factor(&f, residual), None))
        }
    };
    let opts = LbfgsOptions {
        max_iters: iters,
        ..Default::default()
    };
    let r = minimize(&mut objective, x0, &opts)?;
    Ok(ThetaBlockState {
        log_sigma2: r.x[0],
        spec: KernelSpec::from_log(family, r.x[1], r.x[2])?,
    })
}

pub(crate) fn init_kernel(train: &Dataset, family: KernelFamily) -> Result<(KernelSpec, f64), GpError> {
    let vy = train.y_variance().max(1e-8);
    let ell = train.median_pairwise_distance().max(1e-8);
    let spec = KernelSpec::new(family, vy, ell)?;
    Ok((spec, vy))
}

/// Fit the constant bias model.
pub fn fit_cob(train: &Dataset, config: &FitConfig) -> Result<CobFit, GpError> {
    config.validate()?;
    if train.n() < 5 {
        return Err(GpError::InvalidInput(format!(
            "fit_cob needs at least 5 points, got {}",
            train.n()
        )));
    }
    let n = train.n();
    let (spec0, vy) = init_kernel(train, config.kernel_family)?;
    let floor = 1e-10 * vy;
    let mut state = ThetaBlockState {
        log_sigma2: (0.1 * vy).ln(),
        spec: spec0,
    };
    let mut delta = DVector::zeros(n);
    let mut lambda: Option<f64> = None;
    let mut tuning_active = true;
    let mut tuning_rounds = 0usize;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;
    let mut subproblem_converged = true;

    for outer in 0..config.max_outer {
        // (a) theta block at fixed delta
        let residual = train.y() - &delta;
        state = theta_block(
            train,
            config.kernel_family,
            &state,
            &residual,
            floor,
            config.theta_block_iters,
        )?;
        let sigma2 = state.log_sigma2.exp() + floor;

        // (b) bias subproblem at fixed theta
        let k = assemble_cov(&state.spec, train.x(), &NoiseSpec::Homoscedastic(sigma2))?;
        let factor = CholFactor::new(&k)?;
        let a = factor.inverse();
        let anchor = lambda_anchor(&a, &(train.y() - &delta), config.sigma_cut, config.lambda_bounds);
        let lam = *lambda.get_or_insert(anchor);
        let (new_delta, cd_ok) = solve_delta_with_precision(
            &a,
            train.y(),
            lam,
            &delta,
            config.delta_max_sweeps,
            config.delta_tol,
        );
        delta = new_delta;
        subproblem_converged &= cd_ok;

        // (c) penalty update, trust-limited to the robust anchor window and
        // kept between the previous value and the proposal so the joint
        // density cannot increase
        if tuning_active {
            let prop = update_lambda_cob(&delta, n, config.lambda_bounds);
            let target = clamp(prop, anchor / config.tuning_trust_factor, anchor);
            let new_lambda = clamp(target, lam.min(prop), lam.max(prop));
            let rel = (new_lambda - lam).abs() / lam.max(1e-300);
            lambda = Some(new_lambda);
            tuning_rounds += 1;
            if rel < config.tuning_rel_tol || tuning_rounds >= config.cob_tuning_rounds {
                tuning_active = false;
            }
        }
        let lam = lambda.expect("lambda initialized");

        let centered = train.y() - &delta;
        let sum_abs: f64 = delta.iter().map(|d| d.abs()).sum();
        let joint = nll_from_factor(&factor, &centered) + lam * sum_abs - (n as f64) * (lam / 2.0).ln();
        if !joint.is_finite() {
            return Err(GpError::NonFiniteObjective { block: "cob outer" });
        }
        log::debug!("cob outer {outer}: joint {joint:.6} lambda {lam:.4} sigma2 {sigma2:.6}");
        let done = trace
            .last()
            .is_some_and(|prev| (prev - joint).abs() <= config.tol * prev.abs().max(1.0));
        trace.push(joint);
        if done {
            converged = true;
            break;
        }
    }

    let sigma2 = state.log_sigma2.exp() + floor;
    Ok(CobFit {
        delta,
        sigma2,
        spec: state.spec,
        lambda: lambda.expect("lambda initialized"),
        objective_trace: trace,
        converged,
        subproblem_converged,
    })
}

/// Posterior predictive of the latent function under a COB fit.
pub fn cob_predict(fit: &CobFit, train: &Dataset, xstar: &DMatrix<f64>) -> Result<PredictiveDist, GpError> {
    let noise = DVector::from_element(train.n(), fit.sigma2);
    let residual = train.y() - &fit.delta;
    predict(train, &fit.spec, &noise, &residual, xstar)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelKind;
    use crate::gp::gauss_nll;
    use approx::assert_relative_eq;

    fn small_train() -> Dataset {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.5]);
        let y = DVector::from_vec(vec![0.5, -0.3, 1.2]);
        Dataset::new(x, y).unwrap()
    }

    #[test]
    fn rl1_with_zero_delta_is_plain_nll() {
        let train = small_train();
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 1.0).unwrap();
        let k = assemble_cov(&spec, train.x(), &NoiseSpec::Homoscedastic(0.3)).unwrap();
        let expect = gauss_nll(train.y(), &k).unwrap();
        let got = rl1_objective(&train, &spec, 0.3, &DVector::zeros(3), 7.0).unwrap();
        assert_relative_eq!(got, expect, epsilon = 1e-12);
    }

    #[test]
    fn rl1_with_delta_equal_y_drops_quadratic_term() {
        let train = small_train();
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 1.0).unwrap();
        let k = assemble_cov(&spec, train.x(), &NoiseSpec::Homoscedastic(0.3)).unwrap();
        let f = CholFactor::new(&k).unwrap();
        let expect = 0.5 * 3.0 * (2.0 * std::f64::consts::PI).ln() + 0.5 * f.log_det();
        let got = rl1_objective(&train, &spec, 0.3, &train.y().clone(), 0.0).unwrap();
        assert_relative_eq!(got, expect, epsilon = 1e-10);
    }

    #[test]
    fn rl1_matches_term_by_term_sum() {
        let train = small_train();
        let spec = KernelSpec::new(KernelFamily::Exponential, 0.8, 1.4).unwrap();
        let delta = DVector::from_vec(vec![0.2, 0.0, -0.4]);
        let lambda = 1.3;
        let k = assemble_cov(&spec, train.x(), &NoiseSpec::Homoscedastic(0.2)).unwrap();
        let term1 = gauss_nll(&(train.y() - &delta), &k).unwrap();
        let term2 = lambda * delta.iter().map(|d| d.abs()).sum::<f64>();
        let got = rl1_objective(&train, &spec, 0.2, &delta, lambda).unwrap();
        assert_relative_eq!(got, term1 + term2, epsilon = 1e-12);
    }

    #[test]
    fn delta_subproblem_identity_precision_is_soft_threshold() {
        let k = DMatrix::identity(3, 3);
        let factor = CholFactor::new(&k).unwrap();
        let y = DVector::from_vec(vec![3.0, 0.5, -3.0]);
        let sol = solve_delta_subproblem(&factor, &y, 1.0, &DVector::zeros(3)).unwrap();
        assert!(sol.converged);
        assert_relative_eq!(sol.delta[0], 2.0, epsilon = 1e-10);
        assert_relative_eq!(sol.delta[1], 0.0, epsilon = 1e-10);
        assert_relative_eq!(sol.delta[2], -2.0, epsilon = 1e-10);
    }

    #[test]
    fn delta_subproblem_huge_lambda_gives_zero() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 0.7, 1.9, 3.0]);
        let spec = KernelSpec::new(KernelFamily::SquaredExponential, 1.0, 1.0).unwrap();
        let k = assemble_cov(&spec, &x, &NoiseSpec::Homoscedastic(0.5)).unwrap();
        let factor = CholFactor::new(&k).unwrap();
        let y = DVector::from_vec(vec![2.0, -1.0, 4.0, 0.3]);
        let sol = solve_delta_subproblem(&factor, &y, 1e12, &DVector::zeros(4)).unwrap();
        assert_eq!(sol.delta, DVector::zeros(4));
    }

    #[test]
    fn lambda_update_cases() {
        let bounds = (1e-4, 1e6);
        // sum |delta| = 2, n = 4 -> 2
        let d = DVector::from_vec(vec![1.0, -1.0, 0.0, 0.0]);
        assert_relative_eq!(update_lambda_cob(&d, 4, bounds), 2.0);
        // zero delta -> upper bound
        assert_eq!(update_lambda_cob(&DVector::zeros(4), 4, bounds), 1e6);
        // sum = n -> 1
        let d = DVector::from_vec(vec![2.0, 2.0, -2.0, 0.0]);
        assert_relative_eq!(update_lambda_cob(&d, 6, bounds), 1.0);
    }

    #[test]
    fn fit_rejects_tiny_datasets() {
        let x = DMatrix::from_row_slice(4, 1, &[0.0, 1.0, 2.0, 3.0]);
        let y = DVector::from_vec(vec![0.0, 1.0, 2.0, 3.0]);
        let train = Dataset::new(x, y).unwrap();
        let config = FitConfig::for_model(ModelKind::Cob);
        assert!(fit_cob(&train, &config).is_err());
    }

    #[test]
    fn fit_handles_constant_response() {
        let x = DMatrix::from_row_slice(8, 1, &[0.0, 0.5, 1.0, 1.5, 2.0, 2.5, 3.0, 3.5]);
        let y = DVector::from_element(8, 1.0);
        let train = Dataset::new(x, y).unwrap();
        let config = FitConfig::for_model(ModelKind::Cob);
        let fit = fit_cob(&train, &config).unwrap();
        assert!(fit.delta.amax() < 1e-8, "delta should stay zero, got {:?}", fit.delta);
    }

    #[test]
    fn objective_trace_never_increases() {
        let x = DMatrix::from_row_slice(
            10,
            1,
            &[-2.5, -1.8, -1.1, -0.4, 0.1, 0.8, 1.3, 1.9, 2.4, 2.9],
        );
        let mut y = DVector::from_fn(10, |i, _| (x[(i, 0)] as f64).sin());
        y[3] += 3.0;
        let train = Dataset::new(x, y).unwrap();
        let fit = fit_cob(&train, &FitConfig::for_model(ModelKind::Cob)).unwrap();
        for w in fit.objective_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "trace increased: {} -> {}", w[0], w[1]);
        }
    }
}
