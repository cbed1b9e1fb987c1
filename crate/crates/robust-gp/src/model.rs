//! Serialization of fitted models. A model file is a self-describing JSON
//! document carrying the family tag, hyperparameters, bias estimates, penalty
//! weights, and the training data, so prediction needs nothing else.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::cob::{cob_predict, CobFit};
use crate::config::ModelKind;
use crate::dataset::Dataset;
use crate::error::GpError;
use crate::gp::PredictiveDist;
use crate::kernel::KernelSpec;
use crate::plain::{plain_predict, PlainFit};
use crate::rab::{rab_predict, RabFit};
use crate::util::median;

pub const MODEL_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum FittedParams {
    Plain {
        sigma2: f64,
    },
    Cob {
        sigma2: f64,
        lambda: f64,
        delta: Vec<f64>,
    },
    Rab {
        mu: f64,
        lambdas: [f64; 3],
        tau_tilde_sq: Vec<f64>,
    },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FittedModel {
    pub schema_version: u32,
    pub kernel: KernelSpec,
    #[serde(flatten)]
    pub params: FittedParams,
    pub train_x: Vec<Vec<f64>>,
    pub train_y: Vec<f64>,
}

fn dataset_to_rows(train: &Dataset) -> (Vec<Vec<f64>>, Vec<f64>) {
    let x = (0..train.n())
        .map(|i| train.x().row(i).iter().copied().collect())
        .collect();
    let y = train.y().iter().copied().collect();
    (x, y)
}

impl FittedModel {
    pub fn from_plain(fit: &PlainFit, train: &Dataset) -> Self {
        let (train_x, train_y) = dataset_to_rows(train);
        FittedModel {
            schema_version: MODEL_SCHEMA_VERSION,
            kernel: fit.spec,
            params: FittedParams::Plain { sigma2: fit.sigma2 },
            train_x,
            train_y,
        }
    }

    pub fn from_cob(fit: &CobFit, train: &Dataset) -> Self {
        let (train_x, train_y) = dataset_to_rows(train);
        FittedModel {
            schema_version: MODEL_SCHEMA_VERSION,
            kernel: fit.spec,
            params: FittedParams::Cob {
                sigma2: fit.sigma2,
                lambda: fit.lambda,
                delta: fit.delta.iter().copied().collect(),
            },
            train_x,
            train_y,
        }
    }

    pub fn from_rab(fit: &RabFit, train: &Dataset) -> Self {
        let (train_x, train_y) = dataset_to_rows(train);
        FittedModel {
            schema_version: MODEL_SCHEMA_VERSION,
            kernel: fit.spec,
            params: FittedParams::Rab {
                mu: fit.mu,
                lambdas: [fit.lambdas.0, fit.lambdas.1, fit.lambdas.2],
                tau_tilde_sq: fit.tau_tilde_sq.iter().copied().collect(),
            },
            train_x,
            train_y,
        }
    }

    pub fn model_kind(&self) -> ModelKind {
        match self.params {
            FittedParams::Plain { .. } => ModelKind::Plain,
            FittedParams::Cob { .. } => ModelKind::Cob,
            FittedParams::Rab { .. } => ModelKind::Rab,
        }
    }

    pub fn train_dataset(&self) -> Result<Dataset, GpError> {
        let n = self.train_x.len();
        if n == 0 {
            return Err(GpError::InvalidInput("model carries no training data".into()));
        }
        let d = self.train_x[0].len();
        if self.train_x.iter().any(|row| row.len() != d) {
            return Err(GpError::InvalidInput("ragged training rows in model file".into()));
        }
        let x = DMatrix::from_fn(n, d, |i, j| self.train_x[i][j]);
        let y = DVector::from_vec(self.train_y.clone());
        Dataset::new(x, y)
    }

    /// Latent-function posterior at new locations.
    pub fn predict(&self, xstar: &DMatrix<f64>) -> Result<PredictiveDist, GpError> {
        let train = self.train_dataset()?;
        match &self.params {
            FittedParams::Plain { sigma2 } => {
                let fit = PlainFit {
                    spec: self.kernel,
                    sigma2: *sigma2,
                    objective_trace: Vec::new(),
                    converged: true,
                };
                plain_predict(&fit, &train, xstar)
            }
            FittedParams::Cob { sigma2, lambda, delta } => {
                if delta.len() != train.n() {
                    return Err(GpError::DimensionMismatch(
                        "model delta length vs training rows".into(),
                    ));
                }
                let fit = CobFit {
                    delta: DVector::from_vec(delta.clone()),
                    sigma2: *sigma2,
                    spec: self.kernel,
                    lambda: *lambda,
                    objective_trace: Vec::new(),
                    converged: true,
                    subproblem_converged: true,
                };
                cob_predict(&fit, &train, xstar)
            }
            FittedParams::Rab { mu, lambdas, tau_tilde_sq } => {
                if tau_tilde_sq.len() != train.n() {
                    return Err(GpError::DimensionMismatch(
                        "model tau vector length vs training rows".into(),
                    ));
                }
                let fit = RabFit {
                    mu: *mu,
                    tau_tilde_sq: DVector::from_vec(tau_tilde_sq.clone()),
                    spec: self.kernel,
                    lambdas: (lambdas[0], lambdas[1], lambdas[2]),
                    objective_trace: Vec::new(),
                    converged: true,
                    tuning_clamped: false,
                };
                rab_predict(&fit, &train, xstar)
            }
        }
    }

    /// Observation-noise proxy added to the latent variance when scoring
    /// held-out responses: sigma^2 for plain and COB, the median per-point
    /// variance for RAB (robust to the inflated outlier entries).
    pub fn observation_noise(&self) -> f64 {
        match &self.params {
            FittedParams::Plain { sigma2 } => *sigma2,
            FittedParams::Cob { sigma2, .. } => *sigma2,
            FittedParams::Rab { tau_tilde_sq, .. } => median(tau_tilde_sq),
        }
    }

    pub fn to_json(&self) -> Result<String, GpError> {
        serde_json::to_string_pretty(self).map_err(|e| GpError::Serialization(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, GpError> {
        let model: FittedModel =
            serde_json::from_str(text).map_err(|e| GpError::Serialization(e.to_string()))?;
        if model.schema_version != MODEL_SCHEMA_VERSION {
            return Err(GpError::Serialization(format!(
                "unsupported model schema version {}",
                model.schema_version
            )));
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), GpError> {
        let text = self.to_json()?;
        std::fs::write(path, text).map_err(|e| GpError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, GpError> {
        let text = std::fs::read_to_string(path).map_err(|e| GpError::io(path, e))?;
        Self::from_json(&text)
    }
}
