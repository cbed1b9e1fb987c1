//! Plain GP baseline: Gaussian likelihood with no bias terms, hyperparameters
//! fitted by quasi-Newton on the marginal negative log likelihood.

use nalgebra::{DMatrix, DVector};

use crate::config::FitConfig;
use crate::dataset::Dataset;
use crate::error::GpError;
use crate::gp::{assemble_cov, nll_from_factor, nll_grad_theta, predict, NoiseSpec, PredictiveDist};
use crate::kernel::KernelSpec;
use crate::linalg::CholFactor;
use crate::optim::{minimize, LbfgsOptions};

#[derive(Debug, Clone)]
pub struct PlainFit {
    pub spec: KernelSpec,
    pub sigma2: f64,
    /// Marginal negative log likelihood after each accepted optimizer step.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
}

pub fn fit_plain(train: &Dataset, config: &FitConfig) -> Result<PlainFit, GpError> {
    config.validate()?;
    if train.n() < 5 {
        return Err(GpError::InvalidInput(format!(
            "fit_plain needs at least 5 points, got {}",
            train.n()
        )));
    }
    let (spec0, vy) = crate::cob::init_kernel(train, config.kernel_family)?;
    let floor = 1e-10 * vy;
    let x0 = DVector::from_vec(vec![
        (0.1 * vy).ln(),
        spec0.log_signal_variance(),
        spec0.log_lengthscale(),
    ]);
    let mut objective = |p: &DVector<f64>, need_grad: bool| {
        let sigma2 = p[0].exp() + floor;
        let spec = KernelSpec::from_log(config.kernel_family, p[1], p[2])?;
        let noise = NoiseSpec::Homoscedastic(sigma2);
        if need_grad {
            let (value, grad) = nll_grad_theta(train, &spec, &noise, train.y())?;
            let g0 = grad.log_noise[0] * p[0].exp() / sigma2;
            Ok((
                value,
                Some(DVector::from_vec(vec![g0, grad.log_signal_variance, grad.log_lengthscale])),
            ))
        } else {
            let k = assemble_cov(&spec, train.x(), &noise)?;
            let f = CholFactor::new(&k)?;
            Ok((nll_from_factor(&f, train.y()), None))
        }
    };
    let opts = LbfgsOptions {
        max_iters: 2 * config.max_outer,
        ..Default::default()
    };
    let r = minimize(&mut objective, x0, &opts)?;
    Ok(PlainFit {
        spec: KernelSpec::from_log(config.kernel_family, r.x[1], r.x[2])?,
        sigma2: r.x[0].exp() + floor,
        objective_trace: r.trace,
        converged: r.converged,
    })
}

pub fn plain_predict(fit: &PlainFit, train: &Dataset, xstar: &DMatrix<f64>) -> Result<PredictiveDist, GpError> {
    let noise = DVector::from_element(train.n(), fit.sigma2);
    predict(train, &fit.spec, &noise, train.y(), xstar)
}
