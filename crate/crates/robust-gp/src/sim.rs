//! Benchmark data generation and evaluation metrics: the 1D synthetic
//! function, the 10D Friedman function, mixture-noise outlier injection, and
//! the MSE / NLPD scores.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::GpError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Synth1d,
    Friedman,
}

impl Generator {
    pub fn tag(&self) -> &'static str {
        match self {
            Generator::Synth1d => "synth1d",
            Generator::Friedman => "friedman",
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Generator::Synth1d => 1,
            Generator::Friedman => 10,
        }
    }
}

impl std::str::FromStr for Generator {
    type Err = GpError;
    fn from_str(s: &str) -> Result<Self, GpError> {
        match s.to_ascii_lowercase().as_str() {
            "synth1d" => Ok(Generator::Synth1d),
            "friedman" | "friedman10d" => Ok(Generator::Friedman),
            other => Err(GpError::InvalidInput(format!("unknown generator '{other}'"))),
        }
    }
}

impl std::fmt::Display for Generator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.tag())
    }
}

/// Denominator of sigma = mu_o / ratio.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SigmaRatio {
    #[serde(rename = "6")]
    Sixth,
    #[serde(rename = "12")]
    Twelfth,
}

impl SigmaRatio {
    pub fn denominator(&self) -> f64 {
        match self {
            SigmaRatio::Sixth => 6.0,
            SigmaRatio::Twelfth => 12.0,
        }
    }
}

impl std::str::FromStr for SigmaRatio {
    type Err = GpError;
    fn from_str(s: &str) -> Result<Self, GpError> {
        match s {
            "6" | "sixth" => Ok(SigmaRatio::Sixth),
            "12" | "twelfth" => Ok(SigmaRatio::Twelfth),
            other => Err(GpError::InvalidInput(format!(
                "sigma ratio must be 6 or 12, got '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for SigmaRatio {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.denominator() as u32)
    }
}

/// One benchmark scenario: generator, outlier pattern, sizes, and the seed of
/// this replicate. sigma is always derived as mu_o / ratio, never stored.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub generator: Generator,
    /// Outlier fraction in (0, 1).
    pub q: f64,
    /// Mean bias of outliers.
    pub mu_o: f64,
    pub sigma_ratio: SigmaRatio,
    pub n_train: usize,
    pub n_test: usize,
    pub replicate_seed: u64,
}

impl ScenarioSpec {
    pub fn sigma(&self) -> f64 {
        self.mu_o / self.sigma_ratio.denominator()
    }

    pub fn validate(&self) -> Result<(), GpError> {
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(GpError::InvalidInput(format!("q must lie in (0,1), got {}", self.q)));
        }
        if !(self.mu_o > 0.0) {
            return Err(GpError::InvalidInput(format!("mu_o must be positive, got {}", self.mu_o)));
        }
        if self.n_train == 0 || self.n_test == 0 {
            return Err(GpError::InvalidInput("n_train and n_test must be at least 1".into()));
        }
        Ok(())
    }

    /// Short label used in file names and report rows.
    pub fn tag(&self) -> String {
        format!(
            "{}_q{}_mu{}_r{}",
            self.generator.tag(),
            self.q,
            self.mu_o,
            self.sigma_ratio
        )
    }
}

/// Evaluation of one fitted model on one scenario replicate.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    pub mse: f64,
    pub nlpd: f64,
    pub fit_seconds: f64,
    pub model_tag: String,
    pub scenario: ScenarioSpec,
}

/// The 1D target: 0.3 + 0.4 x + 0.5 sin(2.7 x) + 1.1 / (1 + x^2).
pub fn f_synth1d(x: f64) -> f64 {
    0.3 + 0.4 * x + 0.5 * (2.7 * x).sin() + 1.1 / (1.0 + x * x)
}

/// The 10D Friedman target; the last five coordinates are inert.
pub fn f_friedman(x: &[f64]) -> Result<f64, GpError> {
    if x.len() != 10 {
        return Err(GpError::DimensionMismatch(format!(
            "friedman input needs 10 coordinates, got {}",
            x.len()
        )));
    }
    Ok(10.0 * (std::f64::consts::PI * x[0] * x[1]).sin()
        + 20.0 * (x[2] - 0.5) * (x[2] - 0.5)
        + 10.0 * x[3]
        + 5.0 * x[4])
}

/// Training and test data for one replicate, plus the train outlier mask.
#[derive(Debug, Clone)]
pub struct GeneratedScenario {
    pub train: Dataset,
    pub test: Dataset,
    pub outlier_mask: Vec<bool>,
}

/// Draw one scenario replicate. Train noise follows the two-component
/// mixture (1-q) N(0, sigma^2) + q N(mu_o, sigma^2) with the component
/// choice recorded per point; test responses carry inlier noise only.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<GeneratedScenario, GpError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.replicate_seed);
    let sigma = spec.sigma();
    let noise = Normal::new(0.0, sigma).map_err(|e| GpError::InvalidInput(e.to_string()))?;
    let d = spec.generator.dim();

    let draw_x = |rng: &mut ChaCha8Rng| -> Vec<f64> {
        (0..d)
            .map(|_| match spec.generator {
                Generator::Synth1d => rng.gen_range(-3.0..3.0),
                Generator::Friedman => rng.gen_range(0.0..1.0),
            })
            .collect()
    };
    let f_of = |row: &[f64]| -> Result<f64, GpError> {
        match spec.generator {
            Generator::Synth1d => Ok(f_synth1d(row[0])),
            Generator::Friedman => f_friedman(row),
        }
    };

    let mut train_x = DMatrix::zeros(spec.n_train, d);
    let mut train_y = DVector::zeros(spec.n_train);
    let mut mask = vec![false; spec.n_train];
    for i in 0..spec.n_train {
        let row = draw_x(&mut rng);
        let is_outlier = rng.gen::<f64>() < spec.q;
        let eps = noise.sample(&mut rng) + if is_outlier { spec.mu_o } else { 0.0 };
        train_y[i] = f_of(&row)? + eps;
        for (j, v) in row.iter().enumerate() {
            train_x[(i, j)] = *v;
        }
        mask[i] = is_outlier;
    }

    let mut test_x = DMatrix::zeros(spec.n_test, d);
    let mut test_y = DVector::zeros(spec.n_test);
    for i in 0..spec.n_test {
        let row = draw_x(&mut rng);
        test_y[i] = f_of(&row)? + noise.sample(&mut rng);
        for (j, v) in row.iter().enumerate() {
            test_x[(i, j)] = *v;
        }
    }

    Ok(GeneratedScenario {
        train: Dataset::new(train_x, train_y)?,
        test: Dataset::new(test_x, test_y)?,
        outlier_mask: mask,
    })
}

/// Mean squared error of a mean prediction.
pub fn mse(y_true: &DVector<f64>, mean: &DVector<f64>) -> Result<f64, GpError> {
    if y_true.len() != mean.len() || y_true.is_empty() {
        return Err(GpError::DimensionMismatch(format!(
            "mse: {} truths vs {} predictions",
            y_true.len(),
            mean.len()
        )));
    }
    let t = y_true.len() as f64;
    Ok(y_true
        .iter()
        .zip(mean.iter())
        .map(|(y, m)| (y - m) * (y - m))
        .sum::<f64>()
        / t)
}

/// Negative log predictive density under per-point Gaussian predictions.
/// The variance must already include observation noise.
pub fn nlpd(y_true: &DVector<f64>, mean: &DVector<f64>, var: &DVector<f64>) -> Result<f64, GpError> {
    if y_true.len() != mean.len() || y_true.len() != var.len() || y_true.is_empty() {
        return Err(GpError::DimensionMismatch(format!(
            "nlpd: lengths {} / {} / {}",
            y_true.len(),
            mean.len(),
            var.len()
        )));
    }
    if var.iter().any(|v| !(*v > 0.0)) {
        return Err(GpError::InvalidInput("nlpd variances must be positive".into()));
    }
    let t = y_true.len() as f64;
    let two_pi = 2.0 * std::f64::consts::PI;
    Ok(y_true
        .iter()
        .zip(mean.iter())
        .zip(var.iter())
        .map(|((y, m), v)| (y - m) * (y - m) / (2.0 * v) + 0.5 * (two_pi * v).ln())
        .sum::<f64>()
        / t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn synth1d_values() {
        assert_relative_eq!(f_synth1d(0.0), 1.4, max_relative = 1e-15);
        // at x = pi/2.7 the sine term vanishes; oracle recomputed termwise
        let x = std::f64::consts::PI / 2.7;
        let oracle = 0.3 + 0.4 * x + 1.1 / (1.0 + x * x);
        assert!((f_synth1d(x) - oracle).abs() < 1e-12);
        // far out the linear term dominates and the bump vanishes
        let far = f_synth1d(100.0);
        assert!((far - (0.3 + 40.0 + 0.5 * (270.0f64).sin())).abs() < 1.2e-4);
    }

    #[test]
    fn friedman_values() {
        let x = [0.5; 10];
        let v = f_friedman(&x).unwrap();
        assert_relative_eq!(
            v,
            10.0 * (std::f64::consts::PI * 0.25).sin() + 5.0 + 2.5,
            max_relative = 1e-14
        );
        // all terms vanish
        let z = [0.0, 0.3, 0.5, 0.0, 0.0, 0.9, 0.9, 0.9, 0.9, 0.9];
        assert_eq!(f_friedman(&z).unwrap(), 0.0);
        // inert coordinates
        let mut w = x;
        w[7] = 0.123;
        assert_eq!(f_friedman(&x).unwrap(), f_friedman(&w).unwrap());
        assert!(f_friedman(&[0.0; 9]).is_err());
    }

    fn spec(seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            generator: Generator::Synth1d,
            q: 0.1,
            mu_o: 3.0,
            sigma_ratio: SigmaRatio::Sixth,
            n_train: 300,
            n_test: 200,
            replicate_seed: seed,
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let a = generate_scenario(&spec(7)).unwrap();
        let b = generate_scenario(&spec(7)).unwrap();
        assert_eq!(a.train, b.train);
        assert_eq!(a.test, b.test);
        assert_eq!(a.outlier_mask, b.outlier_mask);
    }

    #[test]
    fn outlier_fraction_concentrates_around_q() {
        let mut total = 0usize;
        let mut count = 0usize;
        for seed in 0..200 {
            let g = generate_scenario(&spec(seed)).unwrap();
            total += g.outlier_mask.len();
            count += g.outlier_mask.iter().filter(|m| **m).count();
        }
        let frac = count as f64 / total as f64;
        assert!((frac - 0.1).abs() < 0.06, "fraction {frac}");
    }

    #[test]
    fn outlier_responses_center_on_mu_o() {
        let s = ScenarioSpec {
            q: 0.1,
            mu_o: 5.0,
            sigma_ratio: SigmaRatio::Twelfth,
            ..spec(11)
        };
        let g = generate_scenario(&s).unwrap();
        let mut sum = 0.0;
        let mut k = 0usize;
        for i in 0..s.n_train {
            if g.outlier_mask[i] {
                sum += g.train.y()[i] - f_synth1d(g.train.x()[(i, 0)]);
                k += 1;
            }
        }
        let mean = sum / k as f64;
        let three_sigma = 3.0 * s.sigma() / (k as f64).sqrt();
        assert!((mean - 5.0).abs() < three_sigma, "mean {mean}, band {three_sigma}");
    }

    #[test]
    fn test_set_has_no_mixture_outliers() {
        for seed in [3, 17, 99] {
            let s = ScenarioSpec {
                n_test: 1000,
                ..spec(seed)
            };
            let g = generate_scenario(&s).unwrap();
            let sigma = s.sigma();
            for i in 0..s.n_test {
                let r = (g.test.y()[i] - f_synth1d(g.test.x()[(i, 0)])).abs();
                assert!(r < 6.0 * sigma, "seed {seed} point {i}: residual {r}");
            }
        }
    }

    #[test]
    fn inlier_noise_variance_matches_sigma2() {
        let s = spec(42);
        let g = generate_scenario(&s).unwrap();
        let resid: Vec<f64> = (0..s.n_train)
            .filter(|i| !g.outlier_mask[*i])
            .map(|i| g.train.y()[i] - f_synth1d(g.train.x()[(i, 0)]))
            .collect();
        let m = resid.iter().sum::<f64>() / resid.len() as f64;
        let var = resid.iter().map(|r| (r - m) * (r - m)).sum::<f64>() / resid.len() as f64;
        let sigma2 = s.sigma() * s.sigma();
        assert!((var - sigma2).abs() / sigma2 < 0.15, "var {var} vs {sigma2}");
    }

    #[test]
    fn metric_basics() {
        let y = DVector::from_vec(vec![0.0, 0.0]);
        let m = DVector::from_vec(vec![1.0, -1.0]);
        assert_relative_eq!(mse(&y, &m).unwrap(), 1.0);
        assert_relative_eq!(mse(&y, &y).unwrap(), 0.0);
        let v = DVector::from_vec(vec![1.0, 1.0]);
        assert_relative_eq!(
            nlpd(&y, &y, &v).unwrap(),
            0.5 * (2.0 * std::f64::consts::PI).ln(),
            max_relative = 1e-14
        );
        // single point with residual^2 = var
        let y1 = DVector::from_vec(vec![2.0]);
        let m1 = DVector::from_vec(vec![1.0]);
        let v1 = DVector::from_vec(vec![1.0]);
        assert_relative_eq!(
            nlpd(&y1, &m1, &v1).unwrap(),
            0.5 + 0.5 * (2.0 * std::f64::consts::PI).ln(),
            max_relative = 1e-14
        );
        assert!(mse(&y, &y1).is_err());
        assert!(nlpd(&y1, &m1, &DVector::from_vec(vec![0.0])).is_err());
    }
}
