//! Cross-sectional reconciliation `ỹ = S·G·ŷ` with bottom-up, top-down,
//! middle-out and trace-minimizing mapping matrices.

mod shrinkage;

pub use shrinkage::{
    estimate_w, estimate_w_with, shrinkage_intensity, CorrelationVariance, CovarianceEstimate,
    CovarianceKind,
};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::base_forecast::ForecastSet;
use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySpec, SummingMatrix};
use crate::linalg::{pseudo_inverse, spd_inverse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CsMethod {
    BottomUp,
    TopDown,
    MiddleOut { level: usize },
    Ols,
    MinT,
}

impl CsMethod {
    pub fn label(&self) -> &'static str {
        match self {
            CsMethod::BottomUp => "BU",
            CsMethod::TopDown => "TD",
            CsMethod::MiddleOut { .. } => "MO",
            CsMethod::Ols => "OLS",
            CsMethod::MinT => "MinT",
        }
    }
}

/// `G` (bottom × all series) plus the method that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingMatrix {
    pub g: DMatrix<f64>,
    pub method: CsMethod,
}

impl MappingMatrix {
    /// The reconciliation projection `S·G`.
    pub fn projection(&self, s: &SummingMatrix) -> DMatrix<f64> {
        s.entries() * &self.g
    }
}

/// `G = [0 | I]`.
pub fn g_bottom_up(s: &SummingMatrix) -> MappingMatrix {
    let mut g = DMatrix::zeros(s.cols(), s.rows());
    for (j, &row) in s.bottom_rows().iter().enumerate() {
        g[(j, row)] = 1.0;
    }
    MappingMatrix {
        g,
        method: CsMethod::BottomUp,
    }
}

/// Per-node sums of a history matrix (time × all nodes).
pub fn node_totals(history: &DMatrix<f64>) -> Vec<f64> {
    history.column_iter().map(|c| c.sum()).collect()
}

/// Disaggregates the root forecast by historical proportions of each bottom
/// series in the root total. `totals` holds one history sum per node.
pub fn g_top_down(s: &SummingMatrix, totals: &[f64]) -> Result<MappingMatrix> {
    check_totals(s, totals)?;
    let root = totals[0];
    if !(root > 0.0) {
        return Err(Error::validation("top-down proportions need a positive total history"));
    }
    let mut g = DMatrix::zeros(s.cols(), s.rows());
    for (j, &row) in s.bottom_rows().iter().enumerate() {
        g[(j, 0)] = totals[row] / root;
    }
    Ok(MappingMatrix {
        g,
        method: CsMethod::TopDown,
    })
}

/// Disaggregates forecasts at `level` down each subtree by historical
/// proportions. `level = k` is bottom-up and `level = 0` top-down.
pub fn g_middle_out(spec: &HierarchySpec, level: usize, totals: &[f64]) -> Result<MappingMatrix> {
    if level > spec.depth() {
        return Err(Error::validation(format!(
            "middle-out level {level} outside 0..={}",
            spec.depth()
        )));
    }
    if totals.len() != spec.m() {
        return Err(Error::structural(format!(
            "{} history totals for {} nodes",
            totals.len(),
            spec.m()
        )));
    }
    let mk = spec.bottom_count();
    let offset = spec.bottom_offset();
    let mut g = DMatrix::zeros(mk, spec.m());
    for j in 0..mk {
        let anchor = spec.ancestor_at_level(j, level);
        let denom = totals[anchor];
        if !(denom > 0.0) {
            return Err(Error::validation(format!(
                "node `{}` has a non-positive history total",
                spec.nodes()[anchor]
            )));
        }
        g[(j, anchor)] = totals[offset + j] / denom;
    }
    Ok(MappingMatrix {
        g,
        method: CsMethod::MiddleOut { level },
    })
}

/// `G = (Sᵀ W† S)⁻¹ Sᵀ W†`.
pub fn g_min_trace(s: &SummingMatrix, w: &CovarianceEstimate) -> Result<MappingMatrix> {
    let method = match w.kind {
        CovarianceKind::Identity => CsMethod::Ols,
        _ => CsMethod::MinT,
    };
    Ok(MappingMatrix {
        g: min_trace_g(s.entries(), &w.w)?,
        method,
    })
}

/// Trace-minimizing `G` for any summing matrix and weight matrix.
pub fn min_trace_g(s: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if w.nrows() != s.nrows() || w.ncols() != s.nrows() {
        return Err(Error::structural(format!(
            "weight matrix is {:?}, expected {}x{}",
            w.shape(),
            s.nrows(),
            s.nrows()
        )));
    }
    let w_pinv = pseudo_inverse(w);
    let st_wp = s.transpose() * &w_pinv;
    let normal = &st_wp * s;
    let inv = spd_inverse(&normal, "SᵀW†S")?;
    Ok(inv * st_wp)
}

/// As [`min_trace_g`], falling back to a pseudo-inverse of the normal
/// matrix (with a logged condition number) when it is singular.
pub fn min_trace_g_or_pinv(s: &DMatrix<f64>, w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    match min_trace_g(s, w) {
        Err(Error::Numerical { message, condition }) => {
            log::warn!("{message} (condition {condition:.3e}); using pseudo-inverse");
            let w_pinv = pseudo_inverse(w);
            let st_wp = s.transpose() * &w_pinv;
            let normal = &st_wp * s;
            Ok(pseudo_inverse(&normal) * st_wp)
        }
        other => other,
    }
}

fn check_totals(s: &SummingMatrix, totals: &[f64]) -> Result<()> {
    if totals.len() != s.rows() {
        return Err(Error::structural(format!(
            "{} history totals for {} nodes",
            totals.len(),
            s.rows()
        )));
    }
    Ok(())
}

/// `S·G·ŷ` for a single stacked vector of all series.
pub fn reconcile_vector(g: &MappingMatrix, s: &SummingMatrix, y: &DVector<f64>) -> DVector<f64> {
    s.entries() * (&g.g * y)
}

/// Reconciles every forecast of `base` at temporal level `factor`; other
/// levels pass through unchanged.
pub fn reconcile(
    g: &MappingMatrix,
    s: &SummingMatrix,
    base: &ForecastSet,
    factor: u32,
) -> Result<ForecastSet> {
    if base.node_ids.as_slice() != s.row_labels() {
        let missing: Vec<&String> = s
            .row_labels()
            .iter()
            .filter(|n| !base.node_ids.contains(n))
            .collect();
        return Err(Error::structural(format!(
            "forecast set nodes do not match the hierarchy; missing {missing:?}"
        )));
    }
    let level = base
        .scheme
        .level_for(factor)
        .ok_or_else(|| Error::validation(format!("factor {factor} not in the temporal scheme")))?;
    let projection = g.projection(s);
    let mut out = base.clone();
    for values in &mut out.values {
        for slot in level.offset..level.offset + level.slots {
            let col = &projection * values.column(slot);
            values.column_mut(slot).copy_from(&col);
        }
    }
    Ok(out)
}
