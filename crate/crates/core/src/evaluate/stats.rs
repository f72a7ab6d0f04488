//! Friedman rank test and Nemenyi critical distance.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Upper quantiles of the studentized range with infinite degrees of
/// freedom divided by √2, for k = 2..=20 methods.
const Q_010: [f64; 19] = [
    1.644854, 2.052293, 2.291341, 2.459516, 2.588521, 2.692732, 2.779884, 2.854606, 2.919889,
    2.977768, 3.029694, 3.076733, 3.119693, 3.159199, 3.195743, 3.229723, 3.261461, 3.291224,
    3.319233,
];
const Q_005: [f64; 19] = [
    1.959964, 2.343701, 2.569032, 2.727774, 2.849705, 2.948320, 3.030878, 3.101730, 3.163684,
    3.218654, 3.268004, 3.312739, 3.353618, 3.391230, 3.426041, 3.458425, 3.488685, 3.517073,
    3.543799,
];
const Q_001: [f64; 19] = [
    2.575829, 2.913494, 3.113250, 3.254686, 3.363740, 3.452213, 3.526471, 3.590339, 3.646292,
    3.696021, 3.740733, 3.781318, 3.818451, 3.852654, 3.884343, 3.913850, 3.941446, 3.967357,
    3.991770,
];

pub const MAX_NEMENYI_METHODS: usize = 20;

/// Critical value `q_α(k)` used by the Nemenyi test.
pub fn nemenyi_q(alpha: f64, k: usize) -> Result<f64> {
    let table = if (alpha - 0.10).abs() < 1e-12 {
        &Q_010
    } else if (alpha - 0.05).abs() < 1e-12 {
        &Q_005
    } else if (alpha - 0.01).abs() < 1e-12 {
        &Q_001
    } else {
        return Err(Error::validation(format!(
            "alpha {alpha} not tabulated; use 0.01, 0.05 or 0.10"
        )));
    };
    if !(2..=MAX_NEMENYI_METHODS).contains(&k) {
        return Err(Error::validation(format!(
            "Nemenyi table covers 2..={MAX_NEMENYI_METHODS} methods, got {k}"
        )));
    }
    Ok(table[k - 2])
}

/// Ranks each row ascending (1 = smallest), ties sharing their mean rank.
pub fn rank_rows(values: &DMatrix<f64>) -> DMatrix<f64> {
    let mut ranks = DMatrix::zeros(values.nrows(), values.ncols());
    for r in 0..values.nrows() {
        let mut order: Vec<usize> = (0..values.ncols()).collect();
        order.sort_by(|&a, &b| values[(r, a)].total_cmp(&values[(r, b)]));
        let mut i = 0;
        while i < order.len() {
            let mut j = i;
            while j + 1 < order.len() && values[(r, order[j + 1])] == values[(r, order[i])] {
                j += 1;
            }
            let mid = (i + j) as f64 / 2.0 + 1.0;
            for &c in &order[i..=j] {
                ranks[(r, c)] = mid;
            }
            i = j + 1;
        }
    }
    ranks
}

fn mean_ranks(ranks: &DMatrix<f64>) -> Result<Vec<f64>> {
    let (n, k) = ranks.shape();
    if k < 2 {
        return Err(Error::validation(format!("rank tests need at least 2 methods, got {k}")));
    }
    if n < 2 {
        return Err(Error::validation(format!("rank tests need at least 2 series, got {n}")));
    }
    Ok(ranks.column_iter().map(|c| c.mean()).collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FriedmanResult {
    pub statistic: f64,
    pub p_value: f64,
    pub mean_ranks: Vec<f64>,
}

/// Friedman chi-squared test on a series × methods rank matrix.
pub fn friedman_test(ranks: &DMatrix<f64>) -> Result<FriedmanResult> {
    let mean_ranks = mean_ranks(ranks)?;
    let n = ranks.nrows() as f64;
    let k = ranks.ncols() as f64;
    let sum_sq: f64 = mean_ranks.iter().map(|r| r * r).sum();
    let statistic = (12.0 * n / (k * (k + 1.0)) * (sum_sq - k * (k + 1.0).powi(2) / 4.0)).max(0.0);
    let chi = ChiSquared::new(k - 1.0).map_err(|e| Error::validation(e.to_string()))?;
    Ok(FriedmanResult {
        statistic,
        p_value: chi.sf(statistic),
        mean_ranks,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NemenyiResult {
    pub alpha: f64,
    pub critical_distance: f64,
    pub mean_ranks: Vec<f64>,
    /// Whether each method lies within the critical distance of the best.
    pub top_group: Vec<bool>,
}

/// Nemenyi post-hoc test on a series × methods rank matrix.
pub fn nemenyi(ranks: &DMatrix<f64>, alpha: f64) -> Result<NemenyiResult> {
    let mean_ranks = mean_ranks(ranks)?;
    let k = ranks.ncols();
    let n = ranks.nrows() as f64;
    let cd = nemenyi_q(alpha, k)? * ((k * (k + 1)) as f64 / (6.0 * n)).sqrt();
    let best = mean_ranks.iter().copied().fold(f64::INFINITY, f64::min);
    let top_group = mean_ranks.iter().map(|r| r - best <= cd).collect();
    Ok(NemenyiResult {
        alpha,
        critical_distance: cd,
        mean_ranks,
        top_group,
    })
}
