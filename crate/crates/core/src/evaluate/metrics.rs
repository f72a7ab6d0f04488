//! Error measures relative to a benchmark.

use crate::error::{Error, Result};

/// Root mean squared error.
pub fn rmse(errors: &[f64]) -> Result<f64> {
    if errors.is_empty() {
        return Err(Error::validation("RMSE of an empty error set"));
    }
    Ok((errors.iter().map(|e| e * e).sum::<f64>() / errors.len() as f64).sqrt())
}

/// RMSE of `errors` divided by the RMSE of `benchmark_errors`.
pub fn rel_rmse(errors: &[f64], benchmark_errors: &[f64]) -> Result<f64> {
    if errors.len() != benchmark_errors.len() {
        return Err(Error::validation(format!(
            "{} errors against {} benchmark errors",
            errors.len(),
            benchmark_errors.len()
        )));
    }
    let bench = rmse(benchmark_errors)?;
    if bench == 0.0 {
        return Err(Error::DegenerateBenchmark("benchmark RMSE is zero".into()));
    }
    Ok(rmse(errors)? / bench)
}

/// Geometric mean, accumulated in the log domain.
pub fn avg_rel_rmse(values: &[f64]) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::validation("geometric mean of an empty set"));
    }
    if let Some(bad) = values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
        return Err(Error::validation(format!(
            "geometric mean needs finite positive values, got {bad}"
        )));
    }
    Ok((values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp())
}
