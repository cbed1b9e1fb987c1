use nalgebra::{DMatrix, DVector};

use crate::error::GpError;

/// Paired predictor locations and responses.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    x: DMatrix<f64>,
    y: DVector<f64>,
}

impl Dataset {
    pub fn new(x: DMatrix<f64>, y: DVector<f64>) -> Result<Self, GpError> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(GpError::InvalidInput(
                "dataset needs at least one row and one predictor column".into(),
            ));
        }
        if x.nrows() != y.len() {
            return Err(GpError::DimensionMismatch(format!(
                "dataset: {} predictor rows vs {} responses",
                x.nrows(),
                y.len()
            )));
        }
        if x.iter().any(|v| !v.is_finite()) || y.iter().any(|v| !v.is_finite()) {
            return Err(GpError::NonFinite("dataset entries".into()));
        }
        Ok(Dataset { x, y })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn x(&self) -> &DMatrix<f64> {
        &self.x
    }

    pub fn y(&self) -> &DVector<f64> {
        &self.y
    }

    /// Population variance of the responses.
    pub fn y_variance(&self) -> f64 {
        let n = self.y.len() as f64;
        let mean = self.y.sum() / n;
        self.y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n
    }

    /// Median pairwise Euclidean distance between predictor rows; the default
    /// lengthscale initializer. Falls back to 1.0 when there are no pairs.
    pub fn median_pairwise_distance(&self) -> f64 {
        let n = self.n();
        if n < 2 {
            return 1.0;
        }
        let mut dists = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in (i + 1)..n {
                let d = (self.x.row(i) - self.x.row(j)).norm();
                dists.push(d);
            }
        }
        dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = dists.len();
        if m % 2 == 1 {
            dists[m / 2]
        } else {
            0.5 * (dists[m / 2 - 1] + dists[m / 2])
        }
    }

    /// Copy of the dataset with one training row removed. Test helper for
    /// leave-one-out comparisons.
    pub fn without_row(&self, idx: usize) -> Result<Self, GpError> {
        if idx >= self.n() {
            return Err(GpError::InvalidInput(format!("row {idx} out of range")));
        }
        if self.n() == 1 {
            return Err(GpError::InvalidInput("cannot drop the only row".into()));
        }
        let x = self.x.clone().remove_row(idx);
        let y = self.y.clone().remove_row(idx);
        Dataset::new(x, y)
    }
}
