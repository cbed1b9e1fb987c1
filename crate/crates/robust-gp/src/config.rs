use serde::{Deserialize, Serialize};

use crate::error::GpError;
use crate::kernel::KernelFamily;

/// Which regression model to fit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Cob,
    Rab,
    Plain,
}

impl ModelKind {
    pub fn tag(&self) -> &'static str {
        match self {
            ModelKind::Cob => "cob",
            ModelKind::Rab => "rab",
            ModelKind::Plain => "plain",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = GpError;
    fn from_str(s: &str) -> Result<Self, GpError> {
        match s.to_ascii_lowercase().as_str() {
            "cob" => Ok(ModelKind::Cob),
            "rab" => Ok(ModelKind::Rab),
            "plain" | "plaingp" | "gp" => Ok(ModelKind::Plain),
            other => Err(GpError::InvalidInput(format!("unknown model '{other}'"))),
        }
    }
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Everything a fit needs beyond the data. All caps and tolerances live here
/// so runs are reproducible from the echoed config alone.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    pub model: ModelKind,
    pub kernel_family: KernelFamily,
    /// Outer block-coordinate-descent iterations.
    pub max_outer: usize,
    /// Relative objective-change stopping tolerance for the outer loop.
    pub tol: f64,
    /// Quasi-Newton iterations per outer pass for the theta/noise block.
    pub theta_block_iters: usize,
    /// Quasi-Newton iterations per outer pass for the joint RAB block.
    pub rab_block_iters: usize,
    /// Coordinate-descent sweep cap for the L1 bias subproblem.
    pub delta_max_sweeps: usize,
    /// Coordinate-change tolerance for the L1 bias subproblem.
    pub delta_tol: f64,
    /// Tuning-update rounds before the penalty weights freeze.
    pub cob_tuning_rounds: usize,
    pub rab_tuning_rounds: usize,
    /// Relative-change threshold that freezes tuning early.
    pub tuning_rel_tol: f64,
    /// Largest multiplicative move a tuning parameter may take per round.
    pub tuning_trust_factor: f64,
    /// Outlier cut, in robust-sigma units, anchoring the L1 weight.
    pub sigma_cut: f64,
    pub lambda_bounds: (f64, f64),
    pub lambda1_bounds: (f64, f64),
    pub lambda2_bounds: (f64, f64),
    pub lambda3_bounds: (f64, f64),
    /// Recorded for provenance; fitting itself is deterministic.
    pub master_seed: u64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            model: ModelKind::Cob,
            kernel_family: KernelFamily::SquaredExponential,
            max_outer: 100,
            tol: 1e-6,
            theta_block_iters: 25,
            rab_block_iters: 60,
            delta_max_sweeps: 500,
            delta_tol: 1e-8,
            cob_tuning_rounds: 20,
            rab_tuning_rounds: 2,
            tuning_rel_tol: 1e-3,
            tuning_trust_factor: 2.0,
            sigma_cut: 3.0,
            lambda_bounds: (1e-4, 1e6),
            lambda1_bounds: (1e-6, 1e6),
            lambda2_bounds: (1.0 + 1e-3, 1e3),
            lambda3_bounds: (1e-6, 1e6),
            master_seed: 0,
        }
    }
}

impl FitConfig {
    pub fn for_model(model: ModelKind) -> Self {
        FitConfig {
            model,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.tol > 0.0) {
            return Err(GpError::InvalidInput("tol must be positive".into()));
        }
        if self.max_outer == 0 || self.theta_block_iters == 0 || self.delta_max_sweeps == 0 {
            return Err(GpError::InvalidInput("iteration caps must be at least 1".into()));
        }
        if !(self.tuning_trust_factor >= 1.0) {
            return Err(GpError::InvalidInput("tuning_trust_factor must be >= 1".into()));
        }
        for (lo, hi) in [
            self.lambda_bounds,
            self.lambda1_bounds,
            self.lambda2_bounds,
            self.lambda3_bounds,
        ] {
            if !(lo > 0.0 && lo < hi) {
                return Err(GpError::InvalidInput("bounds must satisfy 0 < lo < hi".into()));
            }
        }
        if self.lambda2_bounds.0 <= 1.0 {
            return Err(GpError::InvalidInput("lambda2 lower bound must exceed 1".into()));
        }
        Ok(())
    }
}
