//! Limited-memory BFGS with Armijo backtracking.
//!
//! Deliberately minimal: monotone descent (only sufficient-decrease steps are
//! accepted), two-loop recursion over a short curvature history, and a
//! gradient-norm stopping rule. Objective evaluations that fail numerically
//! during the line search are treated as infinitely bad and backtracked over.

use nalgebra::DVector;

use crate::error::GpError;

#[derive(Debug, Clone)]
pub struct LbfgsOptions {
    pub max_iters: usize,
    pub memory: usize,
    /// Stop when the gradient infinity norm falls below this.
    pub grad_tol: f64,
    pub armijo_c1: f64,
    pub backtrack_factor: f64,
    pub max_backtracks: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            max_iters: 100,
            memory: 8,
            grad_tol: 1e-6,
            armijo_c1: 1e-4,
            backtrack_factor: 0.5,
            max_backtracks: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LbfgsResult {
    pub x: DVector<f64>,
    pub value: f64,
    pub grad_inf_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Objective value at the start plus after each accepted step; non-increasing.
    pub trace: Vec<f64>,
}

/// Minimize `f`. The closure receives the point and whether a gradient is
/// required; it must return the value, and the gradient when asked.
pub fn minimize<F>(f: &mut F, x0: DVector<f64>, opts: &LbfgsOptions) -> Result<LbfgsResult, GpError>
where
    F: FnMut(&DVector<f64>, bool) -> Result<(f64, Option<DVector<f64>>), GpError>,
{
    let n = x0.len();
    let mut x = x0;
    let (mut fx, grad) = f(&x, true)?;
    let mut g = grad.expect("gradient requested");
    if !fx.is_finite() {
        return Err(GpError::NonFiniteObjective { block: "optimizer start" });
    }
    let mut trace = vec![fx];
    let mut s_hist: Vec<DVector<f64>> = Vec::new();
    let mut y_hist: Vec<DVector<f64>> = Vec::new();
    let mut rho_hist: Vec<f64> = Vec::new();

    let mut iterations = 0;
    let mut converged = g.amax() < opts.grad_tol;

    while !converged && iterations < opts.max_iters {
        // two-loop recursion for d = -H g
        let mut q = g.clone();
        let m = s_hist.len();
        let mut alphas = vec![0.0; m];
        for i in (0..m).rev() {
            alphas[i] = rho_hist[i] * s_hist[i].dot(&q);
            q -= &y_hist[i] * alphas[i];
        }
        let gamma = if m > 0 {
            let sy = s_hist[m - 1].dot(&y_hist[m - 1]);
            let yy = y_hist[m - 1].norm_squared();
            if yy > 0.0 {
                sy / yy
            } else {
                1.0
            }
        } else {
            1.0
        };
        q *= gamma;
        for i in 0..m {
            let beta = rho_hist[i] * y_hist[i].dot(&q);
            q += &s_hist[i] * (alphas[i] - beta);
        }
        let mut d = -q;
        let mut slope = g.dot(&d);
        if !(slope < 0.0) {
            d = -g.clone();
            slope = g.dot(&d);
            s_hist.clear();
            y_hist.clear();
            rho_hist.clear();
        }

        // Armijo backtracking; failed evaluations count as +inf
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..opts.max_backtracks {
            let xt = &x + &d * step;
            let ft = match f(&xt, false) {
                Ok((v, _)) => v,
                Err(e) if e.is_numerical() => f64::INFINITY,
                Err(e) => return Err(e),
            };
            if ft.is_finite() && ft <= fx + opts.armijo_c1 * step * slope {
                accepted = Some((xt, ft));
                break;
            }
            step *= opts.backtrack_factor;
        }
        let Some((x_new, f_new)) = accepted else {
            break; // line search stalled; keep the current iterate
        };
        let (_, grad_new) = f(&x_new, true)?;
        let g_new = grad_new.expect("gradient requested");

        let s = &x_new - &x;
        let yv = &g_new - &g;
        let sy = s.dot(&yv);
        if sy > 1e-10 * s.norm() * yv.norm() {
            if s_hist.len() == opts.memory {
                s_hist.remove(0);
                y_hist.remove(0);
                rho_hist.remove(0);
            }
            rho_hist.push(1.0 / sy);
            s_hist.push(s);
            y_hist.push(yv);
        }

        x = x_new;
        fx = f_new;
        g = g_new;
        trace.push(fx);
        iterations += 1;
        converged = g.amax() < opts.grad_tol;
    }

    let _ = n;
    Ok(LbfgsResult {
        grad_inf_norm: g.amax(),
        x,
        value: fx,
        iterations,
        converged,
        trace,
    })
}
