//! The 58-column regression design: lags, moving windows and calendar dummies.
//!
//! Every feature for target index `k` is computed from observations at
//! indices strictly below `k`. A box of width `b` covers `k-b .. k-1`.

use chrono::{Datelike, NaiveDateTime, Timelike};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_LAG: usize = 6;
pub const BOX_WIDTHS: [usize; 5] = [2, 3, 4, 5, 6];
pub const QUARTER_DUMMIES: usize = 3;
pub const HOUR_DUMMIES: usize = 23;
pub const FEATURE_COUNT: usize =
    2 * MAX_LAG + 4 * BOX_WIDTHS.len() + QUARTER_DUMMIES + HOUR_DUMMIES;

/// Column names in table order.
pub fn feature_names() -> Vec<String> {
    let mut names = Vec::with_capacity(FEATURE_COUNT);
    names.extend((1..=MAX_LAG).map(|l| format!("wind_lag{l}")));
    names.extend((1..=MAX_LAG).map(|l| format!("power_lag{l}")));
    for prefix in ["wind_ma", "wind_msd", "power_ma", "power_msd"] {
        names.extend(BOX_WIDTHS.iter().map(|b| format!("{prefix}{b}")));
    }
    names.extend((2..=4).map(|q| format!("quarter_q{q}")));
    names.extend((1..24).map(|h| format!("hour_{h:02}")));
    names
}

fn window(series: &[f64], b: usize, k: usize) -> Result<&[f64]> {
    if b == 0 {
        return Err(Error::FeatureWindow("box width must be >= 1".into()));
    }
    if k < b || k > series.len() {
        return Err(Error::FeatureWindow(format!(
            "box of width {b} ending before index {k} needs indices {}..{k} of a length-{} series",
            k as i64 - b as i64,
            series.len()
        )));
    }
    Ok(&series[k - b..k])
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_sd(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Equal-weight mean of the `b` observations before index `k`.
pub fn moving_average(series: &[f64], b: usize, k: usize) -> Result<f64> {
    window(series, b, k).map(mean)
}

/// Population standard deviation over the same window as [`moving_average`].
pub fn moving_sd(series: &[f64], b: usize, k: usize) -> Result<f64> {
    window(series, b, k).map(population_sd)
}

/// Quarter (Q1 baseline) and hour-of-day (hour 0 baseline) indicators.
pub fn calendar_dummies(t: &NaiveDateTime) -> [f64; QUARTER_DUMMIES + HOUR_DUMMIES] {
    let mut out = [0.0; QUARTER_DUMMIES + HOUR_DUMMIES];
    let quarter = (t.month0() / 3) as usize;
    if quarter > 0 {
        out[quarter - 1] = 1.0;
    }
    let hour = t.hour() as usize;
    if hour > 0 {
        out[QUARTER_DUMMIES + hour - 1] = 1.0;
    }
    out
}

/// Feature row for a target at time `t` given the history immediately
/// before it. The last element of each history slice is the lag-1 value;
/// at least [`MAX_LAG`] values are required.
pub fn feature_row(wind_history: &[f64], power_history: &[f64], t: &NaiveDateTime) -> Result<Vec<f64>> {
    if wind_history.len() < MAX_LAG || power_history.len() < MAX_LAG {
        return Err(Error::FeatureWindow(format!(
            "need {MAX_LAG} prior observations, have {}",
            wind_history.len().min(power_history.len())
        )));
    }
    let mut row = Vec::with_capacity(FEATURE_COUNT);
    let kw = wind_history.len();
    let kp = power_history.len();
    row.extend((1..=MAX_LAG).map(|l| wind_history[kw - l]));
    row.extend((1..=MAX_LAG).map(|l| power_history[kp - l]));
    for b in BOX_WIDTHS {
        row.push(moving_average(wind_history, b, kw)?);
    }
    for b in BOX_WIDTHS {
        row.push(moving_sd(wind_history, b, kw)?);
    }
    for b in BOX_WIDTHS {
        row.push(moving_average(power_history, b, kp)?);
    }
    for b in BOX_WIDTHS {
        row.push(moving_sd(power_history, b, kp)?);
    }
    row.extend_from_slice(&calendar_dummies(t));
    debug_assert_eq!(row.len(), FEATURE_COUNT);
    Ok(row)
}

/// Design matrix and target for one series.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    /// rows × 58, without an intercept column.
    pub x: DMatrix<f64>,
    pub y: DVector<f64>,
    /// Series index of each row's target.
    pub target_index: Vec<usize>,
    pub timestamps: Vec<NaiveDateTime>,
}

impl DesignMatrix {
    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    /// CSV with a `timestamp` column, the 58 features and `target`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("timestamp,");
        out.push_str(&feature_names().join(","));
        out.push_str(",target\n");
        for r in 0..self.rows() {
            out.push_str(&crate::ingest::format_timestamp(&self.timestamps[r]));
            for c in 0..FEATURE_COUNT {
                out.push(',');
                out.push_str(&self.x[(r, c)].to_string());
            }
            out.push(',');
            out.push_str(&self.y[r].to_string());
            out.push('\n');
        }
        out
    }
}

/// Builds the design for targets at indices `MAX_LAG..len`; warm-up rows
/// without a full history are dropped.
pub fn build_design_matrix(
    wind: &[f64],
    power: &[f64],
    timestamps: &[NaiveDateTime],
) -> Result<DesignMatrix> {
    build_design_rows(wind, power, timestamps, MAX_LAG..timestamps.len())
}

/// As [`build_design_matrix`], restricted to target indices in `targets`.
pub fn build_design_rows(
    wind: &[f64],
    power: &[f64],
    timestamps: &[NaiveDateTime],
    targets: std::ops::Range<usize>,
) -> Result<DesignMatrix> {
    let n = timestamps.len();
    if wind.len() != n || power.len() != n {
        return Err(Error::structural("wind, power and timestamps differ in length"));
    }
    if n <= MAX_LAG {
        return Err(Error::FeatureWindow(format!(
            "series of length {n} is shorter than the {} observations needed",
            MAX_LAG + 1
        )));
    }
    let start = targets.start.max(MAX_LAG);
    let end = targets.end.min(n);
    let rows = end.saturating_sub(start);
    let mut x = DMatrix::zeros(rows, FEATURE_COUNT);
    let mut y = DVector::zeros(rows);
    for (r, k) in (start..end).enumerate() {
        let row = feature_row(&wind[..k], &power[..k], &timestamps[k])?;
        x.row_mut(r).copy_from_slice(&row);
        y[r] = power[k];
    }
    Ok(DesignMatrix {
        x,
        y,
        target_index: (start..end).collect(),
        timestamps: timestamps[start..end].to_vec(),
    })
}
