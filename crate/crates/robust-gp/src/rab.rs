//! Random bias model (RAB): biases are Gaussian with a common mean mu and
//! per-point variances, giving a heteroscedastic effective noise
//! tau_i^2 = bias variance + sigma^2. The per-point log variances carry an
//! inverse-gamma regularizer and mu an L2 one.
//!
//! Fitting alternates a joint quasi-Newton pass over
//! (mu, log s^2, log l, log tau_1^2, ..., log tau_N^2) with trust-limited
//! updates of the three penalty weights. The recorded objective is the joint
//! negative log density RL2 + R2(lambda), which every block decreases.

use nalgebra::{DMatrix, DVector};
use statrs::function::gamma::{digamma, ln_gamma};

use crate::config::FitConfig;
use crate::dataset::Dataset;
use crate::error::GpError;
use crate::gp::{assemble_cov, nll_from_factor, predict, NoiseSpec, PredictiveDist};
use crate::kernel::{kernel_grad, KernelSpec};
use crate::linalg::CholFactor;
use crate::optim::{minimize, LbfgsOptions};
use crate::special::trigamma;
use crate::util::clamp;

/// A fitted random-bias model.
#[derive(Debug, Clone)]
pub struct RabFit {
    /// Common bias mean.
    pub mu: f64,
    /// Per-point effective noise variances.
    pub tau_tilde_sq: DVector<f64>,
    pub spec: KernelSpec,
    /// (lambda1, lambda2, lambda3): L2 weight on mu, inverse-gamma shape + 1,
    /// inverse-gamma rate.
    pub lambdas: (f64, f64, f64),
    /// Joint negative log density after each outer iteration; non-increasing.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// True when a tuning update had to be clamped at its bounds.
    pub tuning_clamped: bool,
}

/// The RL2 objective: Gaussian negative log likelihood of y - mu under
/// D_tau + C_xx plus the mu and log-variance regularizers.
pub fn rl2_objective(
    train: &Dataset,
    spec: &KernelSpec,
    mu: f64,
    log_tau2: &DVector<f64>,
    lambdas: (f64, f64, f64),
) -> Result<f64, GpError> {
    let (l1, l2, l3) = lambdas;
    validate_lambdas(l1, l2, l3)?;
    if log_tau2.len() != train.n() {
        return Err(GpError::DimensionMismatch(format!(
            "rl2_objective: {} variances vs {} points",
            log_tau2.len(),
            train.n()
        )));
    }
    if !mu.is_finite() || log_tau2.iter().any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite("rl2_objective parameters".into()));
    }
    let tau2 = log_tau2.map(f64::exp);
    let k = assemble_cov(spec, train.x(), &NoiseSpec::Heteroscedastic(&tau2))?;
    let f = CholFactor::new(&k)?;
    let centered = train.y().map(|v| v - mu);
    let reg: f64 = log_tau2.iter().map(|lt| l2 * lt + l3 * (-lt).exp()).sum();
    Ok(nll_from_factor(&f, &centered) + l1 * mu * mu + reg)
}

fn validate_lambdas(l1: f64, l2: f64, l3: f64) -> Result<(), GpError> {
    if !(l1 > 0.0 && l2 > 1.0 && l3 > 0.0) {
        return Err(GpError::InvalidInput(format!(
            "require lambda1 > 0, lambda2 > 1, lambda3 > 0; got ({l1}, {l2}, {l3})"
        )));
    }
    Ok(())
}

/// Result of a tuning-parameter update.
#[derive(Debug, Clone)]
pub struct LambdaUpdate {
    pub lambdas: (f64, f64, f64),
    /// True when a stationary point fell outside its bounds and was clamped.
    pub clamped: bool,
}

/// Solve psi(lambda2 - 1) = target for lambda2 within bounds by safeguarded
/// bisection plus Newton steps. Returns the clamped bound when the root is
/// not bracketed.
fn solve_lambda2(target: f64, bounds: (f64, f64)) -> (f64, bool) {
    let (mut lo, mut hi) = (bounds.0 - 1.0, bounds.1 - 1.0);
    if digamma(lo) >= target {
        return (bounds.0, true);
    }
    if digamma(hi) <= target {
        return (bounds.1, true);
    }
    let mut x = (lo * hi).sqrt();
    for _ in 0..200 {
        let fx = digamma(x) - target;
        if fx.abs() < 1e-8 {
            break;
        }
        if fx > 0.0 {
            hi = x;
        } else {
            lo = x;
        }
        let newton = x - fx / trigamma(x);
        x = if newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
    }
    (x + 1.0, false)
}

/// Coordinate-wise stationary points of the joint negative log density in the
/// tuning parameters: lambda1 = 1/(2 mu^2); lambda3 = N (lambda2-1) / sum(1/tau_i^2);
/// lambda2 from psi(lambda2-1) = log lambda3 - mean log tau_i^2. The
/// (lambda2, lambda3) pair is iterated to a joint fixed point.
pub fn update_lambdas_rab(
    mu: f64,
    log_tau2: &DVector<f64>,
    config: &FitConfig,
) -> Result<LambdaUpdate, GpError> {
    if !mu.is_finite() || log_tau2.iter().any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite("update_lambdas_rab inputs".into()));
    }
    let n = log_tau2.len() as f64;
    let mut clamped = false;

    let l1_raw = if mu == 0.0 { f64::INFINITY } else { 1.0 / (2.0 * mu * mu) };
    let l1 = clamp(l1_raw, config.lambda1_bounds.0, config.lambda1_bounds.1);
    if l1 != l1_raw {
        clamped = true;
    }

    let sum_inv: f64 = log_tau2.iter().map(|lt| (-lt).exp()).sum();
    let mean_log: f64 = log_tau2.iter().sum::<f64>() / n;
    let mut l2 = 2.0f64.clamp(config.lambda2_bounds.0, config.lambda2_bounds.1);
    let mut l3 = 1.0;
    for _ in 0..50 {
        let l3_raw = n * (l2 - 1.0) / sum_inv;
        let l3_new = clamp(l3_raw, config.lambda3_bounds.0, config.lambda3_bounds.1);
        if l3_new != l3_raw {
            clamped = true;
        }
        let (l2_new, l2_clamped) = solve_lambda2(l3_new.ln() - mean_log, config.lambda2_bounds);
        clamped |= l2_clamped;
        let moved = (l2_new - l2).abs() / l2.max(1.0) + (l3_new - l3).abs() / l3.abs().max(1e-300);
        l2 = l2_new;
        l3 = l3_new;
        if moved < 1e-10 {
            break;
        }
    }
    Ok(LambdaUpdate {
        lambdas: (l1, l2, l3),
        clamped,
    })
}

/// Prior-normalization part of the joint negative log density:
/// -1/2 log lambda1 + N (-(lambda2-1) log lambda3 + log Gamma(lambda2-1)).
pub(crate) fn rab_prior_normalizer(l1: f64, l2: f64, l3: f64, n: usize) -> f64 {
    -0.5 * l1.ln() + (n as f64) * (-(l2 - 1.0) * l3.ln() + ln_gamma(l2 - 1.0))
}

struct RabObjective<'a> {
    train: &'a Dataset,
    family: crate::kernel::KernelFamily,
    l1: f64,
    l2: f64,
    l3: f64,
}

impl RabObjective<'_> {
    /// Parameter layout: [mu, log s^2, log l, log tau_1^2 .. log tau_N^2].
    fn eval(&self, p: &DVector<f64>, need_grad: bool) -> Result<(f64, Option<DVector<f64>>), GpError> {
        let n = self.train.n();
        let mu = p[0];
        let spec = KernelSpec::from_log(self.family, p[1], p[2])?;
        let log_tau2 = DVector::from_fn(n, |i, _| p[3 + i]);
        let tau2 = log_tau2.map(f64::exp);
        if tau2.iter().any(|v| *v == 0.0 || !v.is_finite()) {
            return Err(GpError::Factorization { attempted_jitter: 0.0 });
        }
        let centered = self.train.y().map(|v| v - mu);
        let reg: f64 = log_tau2.iter().map(|lt| self.l2 * lt + self.l3 * (-lt).exp()).sum();

        if !need_grad {
            let k = assemble_cov(&spec, self.train.x(), &NoiseSpec::Heteroscedastic(&tau2))?;
            let f = CholFactor::new(&k)?;
            return Ok((nll_from_factor(&f, &centered) + self.l1 * mu * mu + reg, None));
        }

        let grads = kernel_grad(&spec, self.train.x())?;
        let mut k = grads.d_log_signal_variance.clone();
        for i in 0..n {
            k[(i, i)] += tau2[i];
        }
        let f = CholFactor::new(&k)?;
        let value = nll_from_factor(&f, &centered) + self.l1 * mu * mu + reg;
        let alpha = f.solve(&centered);
        let kinv = f.inverse();

        let grad_kernel = |dk: &DMatrix<f64>| -> f64 {
            let trace: f64 = kinv.iter().zip(dk.iter()).map(|(a, b)| a * b).sum();
            0.5 * trace - 0.5 * alpha.dot(&(dk * &alpha))
        };
        let mut g = DVector::zeros(3 + n);
        g[0] = -alpha.sum() + 2.0 * self.l1 * mu;
        g[1] = grad_kernel(&grads.d_log_signal_variance);
        g[2] = grad_kernel(&grads.d_log_lengthscale);
        for i in 0..n {
            let likelihood = 0.5 * tau2[i] * (kinv[(i, i)] - alpha[i] * alpha[i]);
            g[3 + i] = likelihood + self.l2 - self.l3 / tau2[i];
        }
        Ok((value, Some(g)))
    }
}

/// One trust-limited move of a tuning parameter toward its conditional
/// stationary point; staying between the previous value and the proposal
/// keeps the joint density non-increasing.
fn trust_move(prev: f64, proposal: f64, trust: f64) -> f64 {
    let stepped = clamp(proposal, prev / trust, prev * trust);
    clamp(stepped, prev.min(proposal), prev.max(proposal))
}

/// Fit the random bias model.
pub fn fit_rab(train: &Dataset, config: &FitConfig) -> Result<RabFit, GpError> {
    config.validate()?;
    if train.n() < 5 {
        return Err(GpError::InvalidInput(format!(
            "fit_rab needs at least 5 points, got {}",
            train.n()
        )));
    }
    let n = train.n();
    let (spec0, vy) = crate::cob::init_kernel(train, config.kernel_family)?;
    let tau2_init = 0.1 * vy;

    let mut mu = 0.0f64;
    let mut spec = spec0;
    let mut log_tau2 = DVector::from_element(n, tau2_init.ln());
    let mut l1 = clamp(1.0, config.lambda1_bounds.0, config.lambda1_bounds.1);
    let mut l2 = clamp(2.0, config.lambda2_bounds.0, config.lambda2_bounds.1);
    // scale-aware rate: the prior mode (l2 - 1) * tau2_init matches the
    // initial variances instead of assuming unit data scale
    let mut l3 = clamp((l2 - 1.0) * tau2_init, config.lambda3_bounds.0, config.lambda3_bounds.1);

    let mut tuning_active = true;
    let mut tuning_rounds = 0usize;
    let mut tuning_clamped = false;
    let mut trace: Vec<f64> = Vec::new();
    let mut converged = false;

    for outer in 0..config.max_outer {
        // (a) joint quasi-Newton block
        let objective = RabObjective {
            train,
            family: config.kernel_family,
            l1,
            l2,
            l3,
        };
        let mut p0 = DVector::zeros(3 + n);
        p0[0] = mu;
        p0[1] = spec.log_signal_variance();
        p0[2] = spec.log_lengthscale();
        for i in 0..n {
            p0[3 + i] = log_tau2[i];
        }
        let opts = LbfgsOptions {
            max_iters: config.rab_block_iters,
            memory: 10,
            ..Default::default()
        };
        let r = minimize(&mut |p: &DVector<f64>, g| objective.eval(p, g), p0, &opts)?;
        mu = r.x[0];
        spec = KernelSpec::from_log(config.kernel_family, r.x[1], r.x[2])?;
        for i in 0..n {
            log_tau2[i] = r.x[3 + i];
        }

        // (b) tuning updates: conditional stationary points, trust-limited
        if tuning_active {
            let l1_prop = if mu == 0.0 {
                config.lambda1_bounds.1
            } else {
                clamp(1.0 / (2.0 * mu * mu), config.lambda1_bounds.0, config.lambda1_bounds.1)
            };
            let l1_new = trust_move(l1, l1_prop, config.tuning_trust_factor);

            let sum_inv: f64 = log_tau2.iter().map(|lt| (-lt).exp()).sum();
            let mean_log: f64 = log_tau2.iter().sum::<f64>() / n as f64;
            let l3_cond = clamp(
                (n as f64) * (l2 - 1.0) / sum_inv,
                config.lambda3_bounds.0,
                config.lambda3_bounds.1,
            );
            let l3_new = trust_move(l3, l3_cond, config.tuning_trust_factor);

            let (l2_cond, l2_clamped) = solve_lambda2(l3_new.ln() - mean_log, config.lambda2_bounds);
            tuning_clamped |= l2_clamped;
            let shape_new = trust_move(l2 - 1.0, l2_cond - 1.0, config.tuning_trust_factor);
            let l2_new = 1.0 + shape_new;

            let rel = ((l1_new - l1).abs() / l1.max(1e-300))
                .max((l2_new - l2).abs() / l2)
                .max((l3_new - l3).abs() / l3.max(1e-300));
            l1 = l1_new;
            l2 = l2_new;
            l3 = l3_new;
            tuning_rounds += 1;
            if rel < config.tuning_rel_tol || tuning_rounds >= config.rab_tuning_rounds {
                tuning_active = false;
            }
        }

        let rl2 = rl2_objective(train, &spec, mu, &log_tau2, (l1, l2, l3))?;
        let joint = rl2 + rab_prior_normalizer(l1, l2, l3, n);
        if !joint.is_finite() {
            return Err(GpError::NonFiniteObjective { block: "rab outer" });
        }
        log::debug!("rab outer {outer}: joint {joint:.6} lambdas ({l1:.3}, {l2:.3}, {l3:.4})");
        let done = trace
            .last()
            .is_some_and(|prev| (prev - joint).abs() <= config.tol * prev.abs().max(1.0));
        trace.push(joint);
        if done {
            converged = true;
            break;
        }
    }

    Ok(RabFit {
        mu,
        tau_tilde_sq: log_tau2.map(f64::exp),
        spec,
        lambdas: (l1, l2, l3),
        objective_trace: trace,
        converged,
        tuning_clamped,
    })
}

/// Posterior predictive of the latent function under a RAB fit. The mean is
/// the latent posterior; the fitted bias mean is not added back at test
/// points.
pub fn rab_predict(fit: &RabFit, train: &Dataset, xstar: &DMatrix<f64>) -> Result<PredictiveDist, GpError> {
    let residual = train.y().map(|v| v - fit.mu);
    predict(train, &fit.spec, &fit.tau_tilde_sq, &residual, xstar)
}
