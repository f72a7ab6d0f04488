//! Base-forecast error covariance estimates used as MinT weights.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::symmetrize;

/// Which covariance structure to estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CovarianceKind {
    /// `W = I` (OLS reconciliation).
    Identity,
    /// Diagonal of the sample covariance (variance scaling).
    Variance,
    /// Sample covariance shrunk towards its diagonal.
    Shrinkage,
}

/// Estimator for the sampling variance of a correlation coefficient, the
/// numerator of the shrinkage intensity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorrelationVariance {
    /// `(1 − r̂²)² / (T − 1)`. Vanishes for perfectly correlated pairs.
    #[default]
    Asymptotic,
    /// `T/(T−1)³ · Σ_t (w_t − w̄)²` over products of standardized residuals.
    Empirical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub w: DMatrix<f64>,
    /// Shrinkage intensity; `None` unless `kind` is `Shrinkage`.
    pub lambda: Option<f64>,
    pub kind: CovarianceKind,
}

impl CovarianceEstimate {
    pub fn identity(m: usize) -> Self {
        Self {
            w: DMatrix::identity(m, m),
            lambda: None,
            kind: CovarianceKind::Identity,
        }
    }

    pub fn dim(&self) -> usize {
        self.w.nrows()
    }
}

struct Moments {
    rows: usize,
    centered: DMatrix<f64>,
    covariance: DMatrix<f64>,
}

fn moments(residuals: &DMatrix<f64>, labels: &[String]) -> Result<Moments> {
    let (rows, cols) = residuals.shape();
    if rows < 3 {
        return Err(Error::validation(format!(
            "covariance estimation needs at least 3 residual rows, got {rows}"
        )));
    }
    if labels.len() != cols {
        return Err(Error::structural(format!(
            "{} labels for {cols} residual columns",
            labels.len()
        )));
    }
    let mut centered = residuals.clone();
    for (j, mut col) in centered.column_iter_mut().enumerate() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
        let scale = residuals.column(j).amax().max(1.0);
        let sd = (col.norm_squared() / (rows - 1) as f64).sqrt();
        if !(sd > 1e-12 * scale) {
            return Err(Error::ZeroVariance {
                node: labels[j].clone(),
            });
        }
    }
    let mut covariance = centered.transpose() * &centered / (rows - 1) as f64;
    symmetrize(&mut covariance);
    Ok(Moments {
        rows,
        centered,
        covariance,
    })
}

/// Shrinkage intensity towards the diagonal target, clamped to `[0, 1]`.
///
/// Returns 1 when there are no off-diagonal correlations to shrink.
pub fn shrinkage_intensity(
    residuals: &DMatrix<f64>,
    estimator: CorrelationVariance,
    labels: &[String],
) -> Result<f64> {
    let m = moments(residuals, labels)?;
    Ok(intensity_from_moments(&m, estimator))
}

fn intensity_from_moments(m: &Moments, estimator: CorrelationVariance) -> f64 {
    let n = m.covariance.nrows();
    let t = m.rows as f64;
    let sd: Vec<f64> = (0..n).map(|i| m.covariance[(i, i)].sqrt()).collect();
    let mut numerator = 0.0;
    let mut denominator = 0.0;
    // Standardized residuals are only needed for the empirical estimator.
    let standardized = match estimator {
        CorrelationVariance::Empirical => {
            let mut z = m.centered.clone();
            for (j, mut col) in z.column_iter_mut().enumerate() {
                col.unscale_mut(sd[j]);
            }
            Some(z)
        }
        CorrelationVariance::Asymptotic => None,
    };
    for i in 0..n {
        for j in (i + 1)..n {
            let r = (m.covariance[(i, j)] / (sd[i] * sd[j])).clamp(-1.0, 1.0);
            let var = match &standardized {
                None => (1.0 - r * r).powi(2) / (t - 1.0),
                Some(z) => {
                    let w: Vec<f64> = z
                        .column(i)
                        .iter()
                        .zip(z.column(j).iter())
                        .map(|(a, b)| a * b)
                        .collect();
                    let mean = w.iter().sum::<f64>() / t;
                    let ss: f64 = w.iter().map(|v| (v - mean).powi(2)).sum();
                    t / (t - 1.0).powi(3) * ss
                }
            };
            // Each unordered pair appears twice in the i ≠ j sums.
            numerator += 2.0 * var;
            denominator += 2.0 * r * r;
        }
    }
    if denominator <= 0.0 {
        return 1.0;
    }
    (numerator / denominator).clamp(0.0, 1.0)
}

/// Estimates `W` from one-step residuals (time × series).
pub fn estimate_w(
    residuals: &DMatrix<f64>,
    kind: CovarianceKind,
    labels: &[String],
) -> Result<CovarianceEstimate> {
    estimate_w_with(residuals, kind, CorrelationVariance::default(), labels)
}

/// [`estimate_w`] with an explicit correlation-variance estimator.
pub fn estimate_w_with(
    residuals: &DMatrix<f64>,
    kind: CovarianceKind,
    estimator: CorrelationVariance,
    labels: &[String],
) -> Result<CovarianceEstimate> {
    match kind {
        CovarianceKind::Identity => Ok(CovarianceEstimate::identity(residuals.ncols())),
        CovarianceKind::Variance => {
            let m = moments(residuals, labels)?;
            Ok(CovarianceEstimate {
                w: DMatrix::from_diagonal(&m.covariance.diagonal()),
                lambda: None,
                kind,
            })
        }
        CovarianceKind::Shrinkage => {
            let m = moments(residuals, labels)?;
            let lambda = intensity_from_moments(&m, estimator);
            let mut w = m.covariance.clone() * (1.0 - lambda);
            for i in 0..w.nrows() {
                w[(i, i)] = m.covariance[(i, i)];
            }
            symmetrize(&mut w);
            Ok(CovarianceEstimate {
                w,
                lambda: Some(lambda),
                kind,
            })
        }
    }
}
