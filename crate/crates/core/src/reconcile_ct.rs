//! Cross-temporal reconciliation of one top-level window at a time.
//!
//! A window is held as a `nodes × slots` matrix: rows follow the hierarchy's
//! node order and columns the stacked temporal slots, coarsest level first.
//! Its node-major vectorization lines up with the Kronecker summing matrix.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::base_forecast::{ForecastSet, LevelResiduals, ResidualSet};
use crate::error::{Error, Result};
use crate::hierarchy::{
    build_cross_temporal_summing_matrix, build_summing_matrix, build_temporal_summing_matrix,
    HierarchySpec, SummingMatrix, TemporalScheme,
};
use crate::reconcile_cs::{estimate_w, min_trace_g_or_pinv, CovarianceKind};

/// Summing matrices for both axes and their Kronecker product.
#[derive(Debug, Clone)]
pub struct CrossTemporalStructure {
    cross_sectional: SummingMatrix,
    scheme: TemporalScheme,
    temporal: SummingMatrix,
    combined: SummingMatrix,
}

impl CrossTemporalStructure {
    pub fn new(spec: &HierarchySpec, scheme: TemporalScheme) -> Self {
        Self::from_summing(build_summing_matrix(spec), scheme)
    }

    pub fn from_summing(cross_sectional: SummingMatrix, scheme: TemporalScheme) -> Self {
        let temporal = build_temporal_summing_matrix(&scheme);
        let combined = build_cross_temporal_summing_matrix(&cross_sectional, &temporal);
        Self {
            cross_sectional,
            scheme,
            temporal,
            combined,
        }
    }

    pub fn cross_sectional(&self) -> &SummingMatrix {
        &self.cross_sectional
    }

    pub fn temporal(&self) -> &SummingMatrix {
        &self.temporal
    }

    pub fn combined(&self) -> &SummingMatrix {
        &self.combined
    }

    pub fn scheme(&self) -> &TemporalScheme {
        &self.scheme
    }

    pub fn nodes(&self) -> usize {
        self.cross_sectional.rows()
    }

    pub fn slots(&self) -> usize {
        self.temporal.rows()
    }

    /// Cross-temporal bottom-up: sums bottom nodes' finest slots on both axes.
    pub fn bottom_up(&self, window: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_window(window)?;
        let rows = self.cross_sectional.bottom_rows();
        let cols = self.temporal.bottom_rows();
        let bottom = DMatrix::from_fn(rows.len(), cols.len(), |i, j| window[(rows[i], cols[j])]);
        if bottom.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("missing bottom-level forecast in window"));
        }
        Ok(self.cross_sectional.entries() * bottom * self.temporal.entries().transpose())
    }

    fn check_window(&self, window: &DMatrix<f64>) -> Result<()> {
        if window.shape() != (self.nodes(), self.slots()) {
            return Err(Error::structural(format!(
                "window is {:?}, expected {}x{}",
                window.shape(),
                self.nodes(),
                self.slots()
            )));
        }
        Ok(())
    }

    /// Two-axis incoherence of a window, relative to its largest entry.
    pub fn audit(&self, window: &DMatrix<f64>) -> CoherenceAudit {
        let scale = window.amax().max(f64::MIN_POSITIVE);
        let cross = window
            .column_iter()
            .map(|c| self.cross_sectional.incoherence(&c.into_owned()))
            .fold(0.0, f64::max);
        let temporal = window
            .row_iter()
            .map(|r| self.temporal.incoherence(&r.transpose()))
            .fold(0.0, f64::max);
        CoherenceAudit {
            cross_sectional: cross / scale,
            temporal: temporal / scale,
        }
    }
}

/// Largest relative incoherence along each axis.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CoherenceAudit {
    pub cross_sectional: f64,
    pub temporal: f64,
}

impl CoherenceAudit {
    pub fn max(&self) -> f64 {
        self.cross_sectional.max(self.temporal)
    }
}

/// Weighting of the temporal trace-minimizing projection for one series.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemporalWeights {
    /// Number of base steps aggregated in each slot.
    Structural,
    /// One residual variance per level, repeated over its slots.
    SeriesVariance,
    /// Shrunk within-window residual covariance per level, block diagonal.
    Autocovariance,
}

/// Residuals of one node at one level, reshaped to `windows × slots`.
/// Windows missing any slot are skipped.
pub fn windowed_residuals(level: &LevelResiduals, slots: usize, node: usize) -> DMatrix<f64> {
    let mut windows: Vec<(usize, Vec<Option<f64>>)> = Vec::new();
    for (row, &pos) in level.index.iter().enumerate() {
        let w = pos / slots;
        if windows.last().map(|(idx, _)| *idx) != Some(w) {
            windows.push((w, vec![None; slots]));
        }
        windows.last_mut().unwrap().1[pos % slots] = Some(level.values[(row, node)]);
    }
    let full: Vec<Vec<f64>> = windows
        .into_iter()
        .filter_map(|(_, v)| v.into_iter().collect::<Option<Vec<f64>>>())
        .collect();
    DMatrix::from_fn(full.len(), slots, |i, j| full[i][j])
}

fn residual_level(residuals: &ResidualSet, factor: u32) -> Result<&LevelResiduals> {
    residuals
        .level(factor)
        .ok_or_else(|| Error::validation(format!("no residuals for factor {factor}")))
}

/// Temporal weight matrix (slots × slots) for `node`.
pub fn temporal_weight_matrix(
    structure: &CrossTemporalStructure,
    residuals: &ResidualSet,
    node: usize,
    weights: TemporalWeights,
) -> Result<DMatrix<f64>> {
    let n = structure.slots();
    let mut w = DMatrix::zeros(n, n);
    let label = &residuals.node_ids[node];
    for level in structure.scheme().levels() {
        let span = level.offset..level.offset + level.slots;
        match weights {
            TemporalWeights::Structural => {
                for s in span {
                    w[(s, s)] = level.factor as f64;
                }
            }
            TemporalWeights::SeriesVariance => {
                let column = residual_level(residuals, level.factor)?.values.column(node).into_owned();
                let est = estimate_w(
                    &DMatrix::from_column_slice(column.len(), 1, column.as_slice()),
                    CovarianceKind::Variance,
                    std::slice::from_ref(label),
                )?;
                for s in span {
                    w[(s, s)] = est.w[(0, 0)];
                }
            }
            TemporalWeights::Autocovariance => {
                let windowed =
                    windowed_residuals(residual_level(residuals, level.factor)?, level.slots, node);
                let labels: Vec<String> = (1..=level.slots).map(|j| format!("{label}#{j}")).collect();
                let est = estimate_w(&windowed, CovarianceKind::Shrinkage, &labels)?;
                w.view_mut((level.offset, level.offset), (level.slots, level.slots))
                    .copy_from(&est.w);
            }
        }
    }
    Ok(w)
}

/// Temporal projection `S_te·G` for the given weights.
pub fn temporal_projection(s_te: &SummingMatrix, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    Ok(s_te.entries() * min_trace_g_or_pinv(s_te.entries(), w)?)
}

/// Reconciles one node's stacked temporal forecasts.
pub fn reconcile_temporal_one_series(
    structure: &CrossTemporalStructure,
    base: &DVector<f64>,
    residuals: &ResidualSet,
    node: usize,
    weights: TemporalWeights,
) -> Result<DVector<f64>> {
    let w = temporal_weight_matrix(structure, residuals, node, weights)?;
    Ok(temporal_projection(structure.temporal(), &w)? * base)
}

/// Precomputed weight matrices shared by the cross-temporal methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtWeights {
    /// Per temporal level (coarsest first): shrunk cross-sectional covariance.
    pub cross_sectional: Vec<DMatrix<f64>>,
    /// Per node: series-variance temporal weights.
    pub series_variance: Vec<DMatrix<f64>>,
    /// Per node: autocovariance temporal weights.
    pub autocovariance: Vec<DMatrix<f64>>,
}

impl CtWeights {
    pub fn from_residuals(structure: &CrossTemporalStructure, residuals: &ResidualSet) -> Result<Self> {
        if residuals.node_ids.as_slice() != structure.cross_sectional().row_labels() {
            return Err(Error::structural("residual nodes do not match the hierarchy"));
        }
        let cross_sectional = structure
            .scheme()
            .levels()
            .iter()
            .map(|level| {
                let r = residual_level(residuals, level.factor)?;
                Ok(estimate_w(&r.values, CovarianceKind::Shrinkage, &residuals.node_ids)?.w)
            })
            .collect::<Result<Vec<_>>>()?;
        let per_node = |weights| {
            (0..structure.nodes())
                .into_par_iter()
                .map(|n| temporal_weight_matrix(structure, residuals, n, weights))
                .collect::<Result<Vec<_>>>()
        };
        Ok(Self {
            cross_sectional,
            series_variance: per_node(TemporalWeights::SeriesVariance)?,
            autocovariance: per_node(TemporalWeights::Autocovariance)?,
        })
    }

    /// Identity weights everywhere.
    pub fn identity(structure: &CrossTemporalStructure) -> Self {
        let m = structure.nodes();
        let n = structure.slots();
        let levels = structure.scheme().levels().len();
        Self {
            cross_sectional: vec![DMatrix::identity(m, m); levels],
            series_variance: vec![DMatrix::identity(n, n); m],
            autocovariance: vec![DMatrix::identity(n, n); m],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IteOrder {
    #[default]
    TemporalFirst,
    CrossSectionalFirst,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CtMethod {
    BottomUp,
    Thf,
    Tcs,
    Cst,
    Ite { tol: f64, max_iter: usize, order: IteOrder },
    Oct,
}

impl CtMethod {
    pub fn ite_default() -> Self {
        CtMethod::Ite {
            tol: 1e-8,
            max_iter: 100,
            order: IteOrder::TemporalFirst,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            CtMethod::BottomUp => "BU-CT",
            CtMethod::Thf => "THF",
            CtMethod::Tcs => "TCS",
            CtMethod::Cst => "CST",
            CtMethod::Ite { .. } => "ITE",
            CtMethod::Oct => "OCT",
        }
    }
}

/// Applies `per_node[i]` to row `i` of the window.
pub fn apply_temporal(window: &DMatrix<f64>, per_node: &[DMatrix<f64>]) -> DMatrix<f64> {
    let mut out = window.clone();
    for (i, p) in per_node.iter().enumerate() {
        let row = p * window.row(i).transpose();
        out.row_mut(i).copy_from(&row.transpose());
    }
    out
}

/// Applies the projection of each slot's temporal level to that column.
pub fn apply_cross_sectional(
    window: &DMatrix<f64>,
    per_level: &[DMatrix<f64>],
    scheme: &TemporalScheme,
) -> DMatrix<f64> {
    let mut out = window.clone();
    for (level, m) in scheme.levels().iter().zip(per_level) {
        let span = level.offset..level.offset + level.slots;
        let block = m * window.columns(span.start, level.slots);
        out.columns_mut(span.start, level.slots).copy_from(&block);
    }
    out
}

/// Arithmetic mean of equally shaped matrices.
pub fn mean_matrix(matrices: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (r, c) = matrices[0].shape();
    let sum = matrices.iter().fold(DMatrix::zeros(r, c), |acc, m| acc + m);
    sum / matrices.len() as f64
}

/// Block-diagonal-by-level weights over the node-major stacked window.
pub fn oct_weight_matrix(structure: &CrossTemporalStructure, per_level: &[DMatrix<f64>]) -> DMatrix<f64> {
    let (m, n) = (structure.nodes(), structure.slots());
    let mut w = DMatrix::zeros(m * n, m * n);
    for s in 0..n {
        let (level, _) = structure.scheme().locate_slot(s);
        let idx = structure.scheme().levels().iter().position(|l| l.factor == level.factor).unwrap();
        let block = &per_level[idx];
        for i in 0..m {
            for j in 0..m {
                w[(i * n + s, j * n + s)] = block[(i, j)];
            }
        }
    }
    w
}

#[derive(Debug, Clone)]
enum Plan {
    BottomUp,
    Thf {
        temporal: Vec<DMatrix<f64>>,
    },
    Tcs {
        temporal: Vec<DMatrix<f64>>,
        cross: DMatrix<f64>,
    },
    Cst {
        cross: Vec<DMatrix<f64>>,
        temporal: DMatrix<f64>,
    },
    Ite {
        temporal: Vec<DMatrix<f64>>,
        cross: Vec<DMatrix<f64>>,
        tol: f64,
        max_iter: usize,
        order: IteOrder,
    },
    Oct {
        projection: DMatrix<f64>,
    },
}

/// Reconciled window with iteration diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowOutcome {
    pub values: DMatrix<f64>,
    pub audit: CoherenceAudit,
    pub iterations: usize,
    pub converged: bool,
    /// Incoherence after each iteration; empty for non-iterative methods.
    pub residual_history: Vec<f64>,
}

/// Reconciled forecast set with a per-origin audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CtOutcome {
    pub method: CtMethod,
    pub set: ForecastSet,
    pub windows: Vec<WindowOutcome>,
}

impl CtOutcome {
    pub fn audits(&self) -> Vec<CoherenceAudit> {
        self.windows.iter().map(|w| w.audit).collect()
    }
}

/// A cross-temporal method bound to its weights.
#[derive(Debug, Clone)]
pub struct CtReconciler {
    structure: CrossTemporalStructure,
    method: CtMethod,
    plan: Plan,
}

impl CtReconciler {
    pub fn new(structure: CrossTemporalStructure, method: CtMethod, weights: &CtWeights) -> Result<Self> {
        let levels = structure.scheme().levels().len();
        if weights.cross_sectional.len() != levels
            || weights.series_variance.len() != structure.nodes()
            || weights.autocovariance.len() != structure.nodes()
        {
            return Err(Error::structural("weights do not match the cross-temporal structure"));
        }
        let cs = structure.cross_sectional();
        let cross_projections = || -> Result<Vec<DMatrix<f64>>> {
            weights
                .cross_sectional
                .iter()
                .map(|w| Ok(cs.entries() * min_trace_g_or_pinv(cs.entries(), w)?))
                .collect()
        };
        let temporal_projections = |ws: &[DMatrix<f64>]| -> Result<Vec<DMatrix<f64>>> {
            ws.par_iter()
                .map(|w| temporal_projection(structure.temporal(), w))
                .collect()
        };
        let plan = match method {
            CtMethod::BottomUp => Plan::BottomUp,
            CtMethod::Thf => Plan::Thf {
                temporal: temporal_projections(&weights.autocovariance)?,
            },
            CtMethod::Tcs => Plan::Tcs {
                temporal: temporal_projections(&weights.series_variance)?,
                cross: mean_matrix(&cross_projections()?),
            },
            CtMethod::Cst => Plan::Cst {
                cross: cross_projections()?,
                temporal: mean_matrix(&temporal_projections(&weights.autocovariance)?),
            },
            CtMethod::Ite { tol, max_iter, order } => {
                if !(tol > 0.0) || max_iter == 0 {
                    return Err(Error::validation("iterative reconciliation needs tol > 0 and max_iter >= 1"));
                }
                Plan::Ite {
                    temporal: temporal_projections(&weights.series_variance)?,
                    cross: cross_projections()?,
                    tol,
                    max_iter,
                    order,
                }
            }
            CtMethod::Oct => {
                let s = structure.combined().entries();
                let w = oct_weight_matrix(&structure, &weights.cross_sectional);
                Plan::Oct {
                    projection: s * min_trace_g_or_pinv(s, &w)?,
                }
            }
        };
        Ok(Self {
            structure,
            method,
            plan,
        })
    }

    /// Estimates weights from `residuals` and binds them to `method`.
    pub fn from_residuals(
        structure: CrossTemporalStructure,
        method: CtMethod,
        residuals: &ResidualSet,
    ) -> Result<Self> {
        let weights = CtWeights::from_residuals(&structure, residuals)?;
        Self::new(structure, method, &weights)
    }

    pub fn method(&self) -> CtMethod {
        self.method
    }

    pub fn structure(&self) -> &CrossTemporalStructure {
        &self.structure
    }

    pub fn reconcile_window(&self, window: &DMatrix<f64>) -> Result<WindowOutcome> {
        self.structure.check_window(window)?;
        let scheme = self.structure.scheme();
        let single = |values: DMatrix<f64>| {
            let audit = self.structure.audit(&values);
            WindowOutcome {
                values,
                audit,
                iterations: 1,
                converged: true,
                residual_history: Vec::new(),
            }
        };
        Ok(match &self.plan {
            Plan::BottomUp => single(self.structure.bottom_up(window)?),
            Plan::Thf { temporal } => single(apply_temporal(window, temporal)),
            Plan::Tcs { temporal, cross } => single(cross * apply_temporal(window, temporal)),
            Plan::Cst { cross, temporal } => {
                single(apply_cross_sectional(window, cross, scheme) * temporal.transpose())
            }
            Plan::Oct { projection } => {
                let (m, n) = window.shape();
                // Row-major flattening is the node-major stacking.
                let stacked = DVector::from_iterator(m * n, window.transpose().iter().copied());
                let out = projection * stacked;
                single(DMatrix::from_row_slice(m, n, out.as_slice()))
            }
            Plan::Ite {
                temporal,
                cross,
                tol,
                max_iter,
                order,
            } => {
                let mut values = window.clone();
                let mut history = Vec::new();
                let mut converged = false;
                for _ in 0..*max_iter {
                    values = match order {
                        IteOrder::TemporalFirst => {
                            apply_cross_sectional(&apply_temporal(&values, temporal), cross, scheme)
                        }
                        IteOrder::CrossSectionalFirst => {
                            apply_temporal(&apply_cross_sectional(&values, cross, scheme), temporal)
                        }
                    };
                    let residual = self.structure.audit(&values).max();
                    history.push(residual);
                    if residual < *tol {
                        converged = true;
                        break;
                    }
                }
                if !converged {
                    log::warn!(
                        "iterative reconciliation stopped after {max_iter} iterations at residual {:.3e}",
                        history.last().copied().unwrap_or(f64::NAN)
                    );
                }
                WindowOutcome {
                    audit: self.structure.audit(&values),
                    values,
                    iterations: history.len(),
                    converged,
                    residual_history: history,
                }
            }
        })
    }

    /// Reconciles every origin window of `base`.
    pub fn reconcile(&self, base: &ForecastSet) -> Result<CtOutcome> {
        if base.node_ids.as_slice() != self.structure.cross_sectional().row_labels() {
            return Err(Error::structural("forecast set nodes do not match the hierarchy"));
        }
        if &base.scheme != self.structure.scheme() {
            return Err(Error::structural("forecast set uses a different temporal scheme"));
        }
        let windows = base
            .values
            .par_iter()
            .map(|w| self.reconcile_window(w))
            .collect::<Result<Vec<_>>>()?;
        let mut set = base.clone();
        set.values = windows.iter().map(|w| w.values.clone()).collect();
        Ok(CtOutcome {
            method: self.method,
            set,
            windows,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reconcile_cs::min_trace_g;
    use chrono::NaiveDate;

    fn fig1() -> HierarchySpec {
        HierarchySpec::three_level("T", &[("A", &["A1", "A2"]), ("B", &["B1", "B2"])]).unwrap()
    }

    fn lcg(seed: &mut u64) -> f64 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
    }

    #[test]
    fn bottom_up_constant_bottom_gives_hourly_root_24c() {
        let st = CrossTemporalStructure::new(&fig1(), TemporalScheme::wind_default());
        let mut w = DMatrix::from_element(7, 12, f64::NAN);
        for i in 3..7 {
            for s in 6..12 {
                w[(i, s)] = 2.5;
            }
        }
        let out = st.bottom_up(&w).unwrap();
        assert_eq!(out[(0, 0)], 60.0);
        assert!(st.audit(&out).max() < 1e-15);
    }

    #[test]
    fn bottom_up_indicator_propagation_and_kronecker_agreement() {
        let st = CrossTemporalStructure::new(&fig1(), TemporalScheme::wind_default());
        let mut w = DMatrix::zeros(7, 12);
        // Turbine A2, 10-minute slot 4.
        w[(4, 6 + 3)] = 1.0;
        let out = st.bottom_up(&w).unwrap();
        let nonzero: Vec<(usize, usize)> = (0..7)
            .flat_map(|i| (0..12).map(move |s| (i, s)))
            .filter(|&(i, s)| out[(i, s)] != 0.0)
            .collect();
        // Nodes T, A, A2 × slots hour, 30min#2, 20min#2, 10min#4.
        let slots = [0, 2, 4, 9];
        let expected: Vec<(usize, usize)> = [0, 1, 4]
            .iter()
            .flat_map(|&i| slots.iter().map(move |&s| (i, s)))
            .collect();
        assert_eq!(nonzero, expected);

        let mut seed = 7;
        let w = DMatrix::from_fn(7, 12, |_, _| lcg(&mut seed));
        let out = st.bottom_up(&w).unwrap();
        let b = DVector::from_iterator(
            24,
            (3..7).flat_map(|i| (6..12).map(move |s| (i, s))).map(|(i, s)| w[(i, s)]),
        );
        let via_kron = st.combined().entries() * b;
        let flat = DVector::from_iterator(84, out.transpose().iter().copied());
        assert!((via_kron - flat).amax() < 1e-12);
    }

    #[test]
    fn structural_weights_on_two_level_scheme() {
        let spec = HierarchySpec::star("T", &["x"]).unwrap();
        let st = CrossTemporalStructure::new(&spec, TemporalScheme::new(30, &[1, 2]).unwrap());
        let res = ResidualSet {
            node_ids: vec!["T".into(), "x".into()],
            levels: vec![],
        };
        let base = DVector::from_vec(vec![10.0, 4.0, 4.0]);
        let out =
            reconcile_temporal_one_series(&st, &base, &res, 0, TemporalWeights::Structural).unwrap();
        assert!((out[0] - 9.0).abs() < 1e-12);
        assert!((out[1] - 4.5).abs() < 1e-12);
        assert!((out[2] - 4.5).abs() < 1e-12);
    }

    #[test]
    fn oct_identity_fixes_coherent_points() {
        let st = CrossTemporalStructure::new(&fig1(), TemporalScheme::wind_default());
        let rec = CtReconciler::new(st.clone(), CtMethod::Oct, &CtWeights::identity(&st)).unwrap();
        let mut seed = 3;
        let b = DMatrix::from_fn(7, 12, |_, _| lcg(&mut seed));
        let coherent = st.bottom_up(&b).unwrap();
        let out = rec.reconcile_window(&coherent).unwrap();
        assert!((out.values - coherent).amax() < 1e-9);
    }

    #[test]
    fn oct_matches_gls_with_two_bottom_series() {
        // Two bottom series and their total, factors {1,2}: 3 nodes × 3 slots.
        // The oracle solves the constrained problem in its null-space form
        // ỹ = ŷ − W Cᵀ (C W Cᵀ)⁻¹ C ŷ, with C spanning the constraints.
        let spec = HierarchySpec::star("T", &["a", "b"]).unwrap();
        let st = CrossTemporalStructure::new(&spec, TemporalScheme::new(30, &[1, 2]).unwrap());
        let weights = CtWeights {
            cross_sectional: vec![
                DMatrix::from_row_slice(3, 3, &[3.0, 0.5, 0.2, 0.5, 1.0, 0.1, 0.2, 0.1, 2.0]),
                DMatrix::from_row_slice(3, 3, &[1.5, 0.3, 0.0, 0.3, 0.8, 0.2, 0.0, 0.2, 1.1]),
            ],
            series_variance: vec![DMatrix::identity(3, 3); 3],
            autocovariance: vec![DMatrix::identity(3, 3); 3],
        };
        let rec = CtReconciler::new(st.clone(), CtMethod::Oct, &weights).unwrap();
        let yhat = DMatrix::from_row_slice(3, 3, &[10.0, 4.0, 5.0, 3.0, 1.0, 2.5, 6.5, 3.0, 2.0]);
        let got = rec.reconcile_window(&yhat).unwrap().values;

        // Constraints on the node-major vector (T0 T1 T2 a0 a1 a2 b0 b1 b2),
        // slot 0 = coarse, slots 1,2 = halves.
        #[rustfmt::skip]
        let c = DMatrix::from_row_slice(5, 9, &[
            // cross-sectional per slot
            1.0, 0.0, 0.0, -1.0, 0.0, 0.0, -1.0, 0.0, 0.0,
            0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, -1.0, 0.0,
            0.0, 0.0, 1.0, 0.0, 0.0, -1.0, 0.0, 0.0, -1.0,
            // temporal for bottoms
            0.0, 0.0, 0.0, 1.0, -1.0, -1.0, 0.0, 0.0, 0.0,
            0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, -1.0, -1.0,
        ]);
        let w = oct_weight_matrix(&st, &weights.cross_sectional);
        let y = DVector::from_iterator(9, yhat.transpose().iter().copied());
        let cw = &c * &w;
        let inner = (&cw * c.transpose()).try_inverse().unwrap();
        let oracle = &y - w * c.transpose() * inner * (&c * &y);
        let flat = DVector::from_iterator(9, got.transpose().iter().copied());
        assert!((flat - oracle).amax() < 1e-9);
    }

    #[test]
    fn bu_ct_is_the_limit_of_heavy_aggregate_weights() {
        let spec = HierarchySpec::star("T", &["a", "b"]).unwrap();
        let scheme = TemporalScheme::new(30, &[1, 2]).unwrap();
        let st = CrossTemporalStructure::new(&spec, scheme);
        let mut w = DMatrix::<f64>::identity(9, 9);
        for r in 0..9 {
            if !st.combined().bottom_rows().contains(&r) {
                w[(r, r)] = 1e8;
            }
        }
        let s = st.combined().entries();
        let p = s * min_trace_g(s, &w).unwrap();
        let yhat = DMatrix::from_row_slice(3, 3, &[10.0, 4.0, 5.0, 3.0, 1.0, 2.5, 6.5, 3.0, 2.0]);
        let flat = DVector::from_iterator(9, yhat.transpose().iter().copied());
        let gls = p * flat;
        let bu = st.bottom_up(&yhat).unwrap();
        let bu_flat = DVector::from_iterator(9, bu.transpose().iter().copied());
        assert!((gls - bu_flat).amax() < 1e-6);
    }

    fn residual_fixture(st: &CrossTemporalStructure, seed: u64) -> ResidualSet {
        let mut s = seed;
        let nodes: Vec<String> = st.cross_sectional().row_labels().to_vec();
        let t0 = NaiveDate::from_ymd_opt(2020, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let levels = st
            .scheme()
            .levels()
            .iter()
            .map(|l| {
                let rows = 40 * l.slots;
                let bottom = DMatrix::from_fn(rows, st.cross_sectional().cols(), |_, _| lcg(&mut s));
                let noise = DMatrix::from_fn(rows, nodes.len(), |_, _| 0.3 * lcg(&mut s));
                let values = bottom * st.cross_sectional().entries().transpose() + noise;
                LevelResiduals {
                    factor: l.factor,
                    index: (0..rows).collect(),
                    timestamps: vec![t0; rows],
                    values,
                }
            })
            .collect();
        ResidualSet {
            node_ids: nodes,
            levels,
        }
    }

    #[test]
    fn coherence_of_every_method_on_random_bases() {
        let st = CrossTemporalStructure::new(&fig1(), TemporalScheme::wind_default());
        let res = residual_fixture(&st, 11);
        let weights = CtWeights::from_residuals(&st, &res).unwrap();
        let mut seed = 5;
        let base = DMatrix::from_fn(7, 12, |_, _| 5.0 + lcg(&mut seed));
        for method in [
            CtMethod::BottomUp,
            CtMethod::Thf,
            CtMethod::Tcs,
            CtMethod::Cst,
            CtMethod::ite_default(),
            CtMethod::Oct,
        ] {
            let rec = CtReconciler::new(st.clone(), method, &weights).unwrap();
            let out = rec.reconcile_window(&base).unwrap();
            if method == CtMethod::Thf {
                assert!(out.audit.temporal < 1e-9, "{:?}", out.audit);
            } else {
                assert!(out.audit.max() < 1e-8, "{method:?} {:?}", out.audit);
            }
            let coherent = st.bottom_up(&base).unwrap();
            let fixed = rec.reconcile_window(&coherent).unwrap().values;
            assert!((fixed - &coherent).amax() < 1e-9 * coherent.amax(), "{method:?}");
        }
    }

    #[test]
    fn thf_leaves_cross_sectional_conflict() {
        let st = CrossTemporalStructure::new(&fig1(), TemporalScheme::wind_default());
        let rec = CtReconciler::new(st.clone(), CtMethod::Thf, &CtWeights::identity(&st)).unwrap();
        let mut base = st.bottom_up(&DMatrix::from_element(7, 12, 1.0)).unwrap();
        base.row_mut(0).scale_mut(2.0);
        let out = rec.reconcile_window(&base).unwrap();
        assert!(out.audit.temporal < 1e-12);
        assert!(out.audit.cross_sectional > 0.1);
    }

    #[test]
    fn tcs_with_equal_level_projections_is_per_level_mint() {
        let st = CrossTemporalStructure::new(&fig1(), TemporalScheme::wind_default());
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 2.0, 2.0, 1.0, 1.0, 1.5, 0.5]));
        let mut weights = CtWeights::identity(&st);
        weights.cross_sectional = vec![w.clone(); 4];
        let rec = CtReconciler::new(st.clone(), CtMethod::Tcs, &weights).unwrap();
        let mut seed = 9;
        let base = DMatrix::from_fn(7, 12, |_, _| lcg(&mut seed));
        let got = rec.reconcile_window(&base).unwrap().values;
        let s = st.cross_sectional().entries();
        let m = s * min_trace_g(s, &w).unwrap();
        let p = temporal_projection(st.temporal(), &DMatrix::identity(12, 12)).unwrap();
        let expected = m * apply_temporal(&base, &vec![p; 7]);
        assert!((got - expected).amax() < 1e-12);
    }

    #[test]
    fn cst_with_one_temporal_level_is_cross_sectional_mint() {
        let spec = fig1();
        let st = CrossTemporalStructure::new(&spec, TemporalScheme::new(60, &[1]).unwrap());
        let w = DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 2.0, 2.0, 1.0, 1.0, 1.5, 0.5]));
        let mut weights = CtWeights::identity(&st);
        weights.cross_sectional = vec![w.clone()];
        let rec = CtReconciler::new(st.clone(), CtMethod::Cst, &weights).unwrap();
        let base = DMatrix::from_column_slice(7, 1, &[10.0, 4.0, 5.0, 1.0, 2.0, 3.0, 1.5]);
        let got = rec.reconcile_window(&base).unwrap().values;
        let s = st.cross_sectional().entries();
        let expected = s * min_trace_g(s, &w).unwrap() * base;
        assert!((got - expected).amax() < 1e-12);
    }

    #[test]
    fn ite_converges_in_one_iteration_on_coherent_input() {
        let st = CrossTemporalStructure::new(&fig1(), TemporalScheme::wind_default());
        let res = residual_fixture(&st, 2);
        let rec = CtReconciler::from_residuals(st.clone(), CtMethod::ite_default(), &res).unwrap();
        let coherent = st.bottom_up(&DMatrix::from_element(7, 12, 0.7)).unwrap();
        let out = rec.reconcile_window(&coherent).unwrap();
        assert_eq!(out.iterations, 1);
        assert!(out.converged);
    }

    #[test]
    fn ite_converges_with_monotone_residuals_on_random_bases() {
        let st = CrossTemporalStructure::new(&fig1(), TemporalScheme::wind_default());
        for trial in 0..20u64 {
            let res = residual_fixture(&st, 100 + trial);
            let rec = CtReconciler::from_residuals(st.clone(), CtMethod::ite_default(), &res).unwrap();
            let mut seed = trial;
            let base = DMatrix::from_fn(7, 12, |_, _| 3.0 + lcg(&mut seed));
            let out = rec.reconcile_window(&base).unwrap();
            assert!(out.converged, "trial {trial}: {:?}", out.residual_history);
            for pair in out.residual_history.windows(2) {
                assert!(pair[1] <= pair[0] + 1e-12, "trial {trial}: {:?}", out.residual_history);
            }
        }
    }

    #[test]
    fn single_node_oct_equals_series_variance_thf() {
        let spec = HierarchySpec::new(vec!["solo".into()], vec![]).unwrap();
        let st = CrossTemporalStructure::new(&spec, TemporalScheme::wind_default());
        let res = residual_fixture(&st, 4);
        let base = DVector::from_iterator(12, (0..12).map(|i| (i as f64).sin() + 2.0));
        let thf = reconcile_temporal_one_series(&st, &base, &res, 0, TemporalWeights::SeriesVariance)
            .unwrap();
        let rec = CtReconciler::from_residuals(st, CtMethod::Oct, &res).unwrap();
        let oct = rec
            .reconcile_window(&DMatrix::from_row_slice(1, 12, base.as_slice()))
            .unwrap()
            .values;
        assert!((oct.transpose() - thf).amax() < 1e-10);
    }

    #[test]
    fn windowed_residuals_skip_partial_windows() {
        let level = LevelResiduals {
            factor: 2,
            index: vec![0, 1, 2, 3, 4, 5, 6],
            timestamps: vec![],
            values: DMatrix::from_fn(7, 1, |i, _| i as f64),
        };
        let w = windowed_residuals(&level, 3, 0);
        assert_eq!(w, DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0]));
        let shifted = LevelResiduals {
            index: vec![1, 2, 3, 4, 5, 6, 7],
            ..level
        };
        assert_eq!(windowed_residuals(&shifted, 3, 0), DMatrix::from_row_slice(1, 3, &[2.0, 3.0, 4.0]));
    }
}
