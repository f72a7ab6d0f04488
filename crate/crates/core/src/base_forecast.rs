//! Base forecasts: the naive benchmark, least-squares linear regression and
//! the [`Forecaster`] trait through which other models plug in.

use chrono::{Duration, NaiveDateTime};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{build_design_rows, feature_row, MAX_LAG};
use crate::hierarchy::TemporalScheme;
use crate::ingest::MultiLevelPanel;
use crate::linalg::lstsq_min_norm;

/// Borrowed view of one node's series at one temporal level.
#[derive(Debug, Clone, Copy)]
pub struct SeriesView<'a> {
    pub wind: &'a [f64],
    pub power: &'a [f64],
    pub timestamps: &'a [NaiveDateTime],
    pub step_minutes: u32,
}

impl SeriesView<'_> {
    pub fn len(&self) -> usize {
        self.power.len()
    }

    pub fn is_empty(&self) -> bool {
        self.power.is_empty()
    }
}

/// `h` copies of the last value observed before `origin`.
pub fn naive_forecast(series: &[f64], origin: usize, h: usize) -> Result<Vec<f64>> {
    if origin == 0 {
        return Err(Error::validation("naive forecast needs at least one observation"));
    }
    if origin > series.len() {
        return Err(Error::validation(format!(
            "origin {origin} beyond series of length {}",
            series.len()
        )));
    }
    Ok(vec![series[origin - 1]; h])
}

/// Where and on what a linear model was fitted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub node: String,
    pub factor: u32,
    /// Target indices used for fitting, half-open.
    pub train_range: (usize, usize),
}

/// Intercept followed by one coefficient per feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub coefficients: DVector<f64>,
    pub fitted_on: Option<FitInfo>,
}

impl LinearModel {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn predict_row(&self, row: &[f64]) -> f64 {
        debug_assert_eq!(row.len() + 1, self.coefficients.len());
        self.coefficients[0]
            + row
                .iter()
                .zip(self.coefficients.iter().skip(1))
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> DVector<f64> {
        let b = self.coefficients.rows(1, x.ncols());
        x * b + DVector::from_element(x.nrows(), self.coefficients[0])
    }
}

/// Least squares with an intercept; collinear columns get the
/// minimum-norm solution.
pub fn fit_linear(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearModel> {
    let cols = x.ncols() + 1;
    if x.nrows() != y.len() {
        return Err(Error::structural(format!(
            "design has {} rows but target has {}",
            x.nrows(),
            y.len()
        )));
    }
    if x.nrows() < cols {
        return Err(Error::Underdetermined {
            rows: x.nrows(),
            cols,
        });
    }
    let mut design = DMatrix::from_element(x.nrows(), cols, 1.0);
    design.columns_mut(1, x.ncols()).copy_from(x);
    let coefficients = lstsq_min_norm(&design, y);
    if coefficients.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical {
            message: "regression produced non-finite coefficients".into(),
            condition: crate::linalg::condition_number(&design),
        });
    }
    Ok(LinearModel {
        coefficients,
        fitted_on: None,
    })
}

/// `y − X·β` for a fitted model.
pub fn insample_residuals(model: &LinearModel, x: &DMatrix<f64>, y: &DVector<f64>) -> DVector<f64> {
    y - model.predict(x)
}

/// Multi-step forecast from `origin` feeding predicted power back into the
/// lags and windows. Future wind is held at the last observed value and
/// calendar dummies follow the clock.
pub fn forecast_recursive(
    model: &LinearModel,
    series: &SeriesView<'_>,
    origin: usize,
    h: usize,
) -> Result<Vec<f64>> {
    if origin < MAX_LAG || origin > series.len() {
        return Err(Error::FeatureWindow(format!(
            "origin {origin} needs {MAX_LAG} prior observations in a series of length {}",
            series.len()
        )));
    }
    let mut wind: Vec<f64> = series.wind[origin - MAX_LAG..origin].to_vec();
    let mut power: Vec<f64> = series.power[origin - MAX_LAG..origin].to_vec();
    let last_wind = series.wind[origin - 1];
    let last_time = series.timestamps[origin - 1];
    let step = Duration::minutes(series.step_minutes as i64);
    let mut out = Vec::with_capacity(h);
    for i in 1..=h {
        let t = last_time + step * i as i32;
        let row = feature_row(&wind, &power, &t)?;
        let value = model.predict_row(&row);
        out.push(value);
        power.remove(0);
        power.push(value);
        wind.remove(0);
        wind.push(last_wind);
    }
    Ok(out)
}

/// A model fitted to one series.
pub trait FittedModel: Send + Sync {
    /// `h` forecasts for indices `origin..origin+h`, using data before `origin`.
    fn forecast(&self, series: &SeriesView<'_>, origin: usize, h: usize) -> Result<Vec<f64>>;

    /// One-step in-sample residuals as `(target index, residual)`.
    fn residuals(&self) -> &[(usize, f64)];
}

/// A base-forecasting method.
pub trait Forecaster: Send + Sync {
    /// Short label used in report rows, e.g. `LR`.
    fn label(&self) -> &str;

    /// Fits on indices `..train_end` of `series`.
    fn fit(&self, series: &SeriesView<'_>, train_end: usize) -> Result<Box<dyn FittedModel>>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NaiveForecaster;

struct FittedNaive {
    residuals: Vec<(usize, f64)>,
}

impl FittedModel for FittedNaive {
    fn forecast(&self, series: &SeriesView<'_>, origin: usize, h: usize) -> Result<Vec<f64>> {
        naive_forecast(series.power, origin, h)
    }

    fn residuals(&self) -> &[(usize, f64)] {
        &self.residuals
    }
}

impl Forecaster for NaiveForecaster {
    fn label(&self) -> &str {
        "Naive"
    }

    fn fit(&self, series: &SeriesView<'_>, train_end: usize) -> Result<Box<dyn FittedModel>> {
        let end = train_end.min(series.len());
        // Same warm-up as the regression so residual sets line up.
        let residuals = (MAX_LAG..end)
            .map(|t| (t, series.power[t] - series.power[t - 1]))
            .collect();
        Ok(Box::new(FittedNaive { residuals }))
    }
}

/// Linear regression on the 58 lag, window and calendar features.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearForecaster {
    /// Refit on all data before each origin instead of once on the training split.
    pub refit_per_origin: bool,
}

struct FittedLinear {
    model: LinearModel,
    train_end: usize,
    refit_per_origin: bool,
    residuals: Vec<(usize, f64)>,
}

fn fit_series(series: &SeriesView<'_>, end: usize) -> Result<(LinearModel, Vec<(usize, f64)>)> {
    let design = build_design_rows(series.wind, series.power, series.timestamps, MAX_LAG..end)?;
    let model = fit_linear(&design.x, &design.y)?;
    let res = insample_residuals(&model, &design.x, &design.y);
    let residuals = design.target_index.iter().copied().zip(res.iter().copied()).collect();
    Ok((model, residuals))
}

impl FittedModel for FittedLinear {
    fn forecast(&self, series: &SeriesView<'_>, origin: usize, h: usize) -> Result<Vec<f64>> {
        if self.refit_per_origin && origin > self.train_end {
            let (model, _) = fit_series(series, origin)?;
            forecast_recursive(&model, series, origin, h)
        } else {
            forecast_recursive(&self.model, series, origin, h)
        }
    }

    fn residuals(&self) -> &[(usize, f64)] {
        &self.residuals
    }
}

impl Forecaster for LinearForecaster {
    fn label(&self) -> &str {
        "LR"
    }

    fn fit(&self, series: &SeriesView<'_>, train_end: usize) -> Result<Box<dyn FittedModel>> {
        let (model, residuals) = fit_series(series, train_end)?;
        Ok(Box::new(FittedLinear {
            model,
            train_end,
            refit_per_origin: self.refit_per_origin,
            residuals,
        }))
    }
}

/// Forecasts for every node and temporal level, one stacked matrix per
/// origin window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastSet {
    pub node_ids: Vec<String>,
    pub scheme: TemporalScheme,
    pub origins: Vec<NaiveDateTime>,
    /// Per origin: nodes × stacked slots (coarsest level first).
    pub values: Vec<DMatrix<f64>>,
}

impl ForecastSet {
    /// Forecast for `node` at `factor`, origin number `origin`, step `step` (1-based).
    pub fn get(&self, node: usize, factor: u32, origin: usize, step: usize) -> Option<f64> {
        let level = self.scheme.level_for(factor)?;
        if step == 0 || step > level.slots {
            return None;
        }
        self.values
            .get(origin)
            .map(|m| m[(node, level.offset + step - 1)])
    }

    pub fn validate(&self) -> Result<()> {
        let shape = (self.node_ids.len(), self.scheme.slots_per_window());
        if self.values.len() != self.origins.len() {
            return Err(Error::structural("forecast set origin count mismatch"));
        }
        for (o, v) in self.values.iter().enumerate() {
            if v.shape() != shape {
                return Err(Error::structural(format!(
                    "origin {o}: expected {shape:?} forecasts, got {:?}",
                    v.shape()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Numerical {
                    message: format!("non-finite forecast at origin {o}"),
                    condition: f64::NAN,
                });
            }
        }
        Ok(())
    }
}

/// One-step in-sample residuals of every node at one temporal level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelResiduals {
    pub factor: u32,
    /// Position of each row in the level series.
    pub index: Vec<usize>,
    pub timestamps: Vec<NaiveDateTime>,
    /// time × nodes
    pub values: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualSet {
    pub node_ids: Vec<String>,
    /// Coarsest first, matching the scheme.
    pub levels: Vec<LevelResiduals>,
}

impl ResidualSet {
    pub fn level(&self, factor: u32) -> Option<&LevelResiduals> {
        self.levels.iter().find(|l| l.factor == factor)
    }
}

/// Forecasts per origin and one-step residuals of one (level, node) series.
type SeriesForecasts = (Vec<Vec<f64>>, Vec<(usize, f64)>);

/// Fits `forecaster` on the first `train_windows` top-level windows of
/// every (node, level) series and forecasts one window ahead from each
/// origin window in `origin_windows`.
pub fn produce_base_forecasts(
    data: &MultiLevelPanel,
    forecaster: &dyn Forecaster,
    train_windows: usize,
    origin_windows: &[usize],
) -> Result<(ForecastSet, ResidualSet)> {
    let scheme = data.scheme();
    let nodes = data.node_ids().len();
    let levels = scheme.levels();

    let jobs: Vec<(usize, usize)> = (0..levels.len())
        .flat_map(|l| (0..nodes).map(move |n| (l, n)))
        .collect();
    let results: Vec<Result<SeriesForecasts>> = jobs
        .par_iter()
        .map(|&(l, n)| {
            let level = levels[l];
            let panel = &data.levels()[l];
            let view = SeriesView {
                wind: panel.wind_column(n),
                power: panel.power_column(n),
                timestamps: panel.timestamps(),
                step_minutes: panel.step_minutes(),
            };
            let fitted = forecaster.fit(&view, train_windows * level.slots)?;
            let forecasts = origin_windows
                .iter()
                .map(|&w| fitted.forecast(&view, w * level.slots, level.slots))
                .collect::<Result<Vec<_>>>()?;
            Ok((forecasts, fitted.residuals().to_vec()))
        })
        .collect();

    let slots = scheme.slots_per_window();
    let mut values = vec![DMatrix::zeros(nodes, slots); origin_windows.len()];
    let mut residual_columns: Vec<Vec<Vec<(usize, f64)>>> = vec![vec![Vec::new(); nodes]; levels.len()];
    for (&(l, n), result) in jobs.iter().zip(results) {
        let (forecasts, residuals) = result?;
        for (o, f) in forecasts.into_iter().enumerate() {
            for (j, v) in f.into_iter().enumerate() {
                values[o][(n, levels[l].offset + j)] = v;
            }
        }
        residual_columns[l][n] = residuals;
    }

    let mut residual_levels = Vec::with_capacity(levels.len());
    for (l, cols) in residual_columns.into_iter().enumerate() {
        let index: Vec<usize> = cols[0].iter().map(|r| r.0).collect();
        if cols.iter().any(|c| c.len() != index.len() || c.iter().zip(&index).any(|(a, b)| a.0 != *b)) {
            return Err(Error::structural(format!(
                "residuals of factor {} are not aligned across nodes",
                levels[l].factor
            )));
        }
        let mut m = DMatrix::zeros(index.len(), nodes);
        for (n, c) in cols.iter().enumerate() {
            for (t, r) in c.iter().enumerate() {
                m[(t, n)] = r.1;
            }
        }
        let ts = data.levels()[l].timestamps();
        residual_levels.push(LevelResiduals {
            factor: levels[l].factor,
            timestamps: index.iter().map(|&i| ts[i]).collect(),
            index,
            values: m,
        });
    }

    let top = &data.levels()[0];
    let origins = origin_windows
        .iter()
        .map(|&w| top.timestamps()[w * levels[0].slots])
        .collect();
    let set = ForecastSet {
        node_ids: data.node_ids().to_vec(),
        scheme: scheme.clone(),
        origins,
        values,
    };
    set.validate()?;
    Ok((
        set,
        ResidualSet {
            node_ids: data.node_ids().to_vec(),
            levels: residual_levels,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FEATURE_COUNT;
    use chrono::NaiveDate;

    fn ts(n: usize) -> Vec<NaiveDateTime> {
        let t0 = NaiveDate::from_ymd_opt(2020, 7, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        (0..n).map(|i| t0 + Duration::minutes(10 * i as i64)).collect()
    }

    #[test]
    fn naive_repeats_last_value() {
        assert_eq!(naive_forecast(&[3.0, 100.0], 2, 6).unwrap(), vec![100.0; 6]);
        assert_eq!(naive_forecast(&[3.0, 100.0], 2, 1).unwrap(), vec![100.0]);
        assert!(naive_forecast(&[], 0, 1).is_err());
    }

    #[test]
    fn exact_linear_fit_in_one_feature() {
        let n = 30;
        let mut x = DMatrix::zeros(n, 3);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            x[(i, 1)] = i as f64 * 0.7 - 3.0;
            y[i] = 2.5 * x[(i, 1)] + 4.0;
        }
        let m = fit_linear(&x, &y).unwrap();
        assert!((m.coefficients[2] - 2.5).abs() < 1e-10);
        assert!((m.intercept() - 4.0).abs() < 1e-10);
        assert!(insample_residuals(&m, &x, &y).amax() < 1e-10);
    }

    #[test]
    fn duplicate_columns_predict_like_single_column() {
        let n = 25;
        let mut single = DMatrix::zeros(n, 1);
        let mut y = DVector::zeros(n);
        for i in 0..n {
            let v = ((i * 7) % 11) as f64;
            single[(i, 0)] = v;
            y[i] = 1.0 + 0.5 * v + ((i * 3) % 5) as f64 * 0.1;
        }
        let mut doubled = DMatrix::zeros(n, 2);
        doubled.column_mut(0).copy_from(&single.column(0));
        doubled.column_mut(1).copy_from(&single.column(0));
        let a = fit_linear(&single, &y).unwrap();
        let b = fit_linear(&doubled, &y).unwrap();
        assert!((a.predict(&single) - b.predict(&doubled)).amax() < 1e-10);
        // Minimum norm splits the weight evenly.
        assert!((b.coefficients[1] - b.coefficients[2]).abs() < 1e-10);
    }

    #[test]
    fn constant_features_give_mean_intercept() {
        let x = DMatrix::from_element(10, 2, 3.0);
        let y = DVector::from_iterator(10, (0..10).map(|i| i as f64));
        let m = fit_linear(&x, &y).unwrap();
        let fitted = m.predict(&x);
        assert!((fitted[0] - 4.5).abs() < 1e-10);
        let r = insample_residuals(&m, &x, &y);
        assert!((r[0] + 4.5).abs() < 1e-10);
    }

    #[test]
    fn underdetermined_fit_is_rejected() {
        let x = DMatrix::zeros(10, FEATURE_COUNT);
        let y = DVector::zeros(10);
        assert!(matches!(
            fit_linear(&x, &y),
            Err(Error::Underdetermined { rows: 10, cols: 59 })
        ));
    }

    fn lag1_model() -> LinearModel {
        let mut c = DVector::zeros(FEATURE_COUNT + 1);
        c[1 + MAX_LAG] = 1.0;
        LinearModel {
            coefficients: c,
            fitted_on: None,
        }
    }

    #[test]
    fn lag_one_model_is_a_fixed_point() {
        let t = ts(12);
        let wind = vec![5.0; 12];
        let power: Vec<f64> = (0..12).map(|i| 10.0 + i as f64).collect();
        let view = SeriesView { wind: &wind, power: &power, timestamps: &t, step_minutes: 10 };
        let f = forecast_recursive(&lag1_model(), &view, 10, 6).unwrap();
        assert_eq!(f, vec![19.0; 6]);
    }

    #[test]
    fn one_step_equals_static_prediction() {
        let t = ts(20);
        let wind: Vec<f64> = (0..20).map(|i| 4.0 + (i as f64 * 0.3).sin()).collect();
        let power: Vec<f64> = (0..20).map(|i| 50.0 + (i as f64 * 0.7).cos() * 10.0).collect();
        let mut c = DVector::from_iterator(59, (0..59).map(|i| (i as f64 * 0.37).sin() * 0.1));
        c[0] = 2.0;
        let model = LinearModel { coefficients: c, fitted_on: None };
        let view = SeriesView { wind: &wind, power: &power, timestamps: &t, step_minutes: 10 };
        let design = build_design_rows(&wind, &power, &t, 14..15).unwrap();
        let f = forecast_recursive(&model, &view, 14, 1).unwrap();
        assert!((f[0] - model.predict(&design.x)[0]).abs() < 1e-12);
    }

    #[test]
    fn two_step_recursion_unrolled_by_hand() {
        // power_t = 1 + 0.5 power_{t-1} + 0.25 power_{t-2} + 0.1 wind_{t-1}
        let mut c = DVector::zeros(59);
        c[0] = 1.0;
        c[1 + MAX_LAG] = 0.5;
        c[1 + MAX_LAG + 1] = 0.25;
        c[1] = 0.1;
        let model = LinearModel { coefficients: c, fitted_on: None };
        let t = ts(8);
        let wind = vec![1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0, 3.0];
        let power = vec![0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 4.0, 8.0];
        let view = SeriesView { wind: &wind, power: &power, timestamps: &t, step_minutes: 10 };
        let f = forecast_recursive(&model, &view, 8, 2).unwrap();
        let s1 = 1.0 + 0.5 * 8.0 + 0.25 * 4.0 + 0.1 * 3.0;
        let s2 = 1.0 + 0.5 * s1 + 0.25 * 8.0 + 0.1 * 3.0;
        assert!((f[0] - s1).abs() < 1e-12);
        assert!((f[1] - s2).abs() < 1e-12);
    }

    #[test]
    fn residuals_are_orthogonal_to_design() {
        let n = 400;
        let t = ts(n);
        let wind: Vec<f64> = (0..n).map(|i| 6.0 + 3.0 * (i as f64 * 0.05).sin() + ((i * 13) % 7) as f64 * 0.2).collect();
        let power: Vec<f64> = wind.iter().enumerate().map(|(i, w)| 80.0 * w + ((i * 31) % 17) as f64).collect();
        let design = build_design_rows(&wind, &power, &t, 0..n).unwrap();
        let m = fit_linear(&design.x, &design.y).unwrap();
        let r = insample_residuals(&m, &design.x, &design.y);
        let scale = design.y.norm();
        assert!(r.sum().abs() / scale < 1e-8);
        for c in 0..design.x.ncols() {
            let col = design.x.column(c);
            let dot = col.dot(&r);
            assert!(dot.abs() <= 1e-8 * scale * col.norm().max(1.0), "column {c}: {dot}");
        }
    }
}
