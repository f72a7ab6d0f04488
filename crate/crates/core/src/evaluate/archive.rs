//! Rolling-origin forecast archive: actuals, benchmark, base and
//! reconciled forecasts for every hourly origin of the test split.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::base_forecast::{produce_base_forecasts, ForecastSet, Forecaster, NaiveForecaster, ResidualSet};
use crate::error::{Error, Result};
use crate::features::MAX_LAG;
use crate::hierarchy::{build_summing_matrix, HierarchySpec, TemporalScheme};
use crate::ingest::{format_timestamp, MultiLevelPanel};
use crate::reconcile_cs::{
    estimate_w, g_bottom_up, g_middle_out, g_min_trace, g_top_down, reconcile, CovarianceEstimate,
    CovarianceKind, CsMethod,
};
use crate::reconcile_ct::{CoherenceAudit, CrossTemporalStructure, CtMethod, CtReconciler, IteOrder};

/// A cross-sectional or cross-temporal reconciliation method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Reconciler {
    Cs(CsMethod),
    Ct(CtMethod),
}

/// Settings that method tags alone do not carry.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TagOptions {
    pub mo_level: Option<usize>,
    pub ite_tol: f64,
    pub ite_max_iter: usize,
    pub ite_order: IteOrder,
}

impl Default for TagOptions {
    fn default() -> Self {
        Self {
            mo_level: None,
            ite_tol: 1e-8,
            ite_max_iter: 100,
            ite_order: IteOrder::TemporalFirst,
        }
    }
}

impl Reconciler {
    pub const TAGS: [&'static str; 11] =
        ["bu", "td", "mo", "ols", "mint", "bu-ct", "thf", "tcs", "cst", "ite", "oct"];

    /// Parses a method tag such as `mint` or `bu-ct`.
    pub fn from_tag(tag: &str, options: &TagOptions) -> Result<Self> {
        Ok(match tag.to_ascii_lowercase().as_str() {
            "bu" => Reconciler::Cs(CsMethod::BottomUp),
            "td" => Reconciler::Cs(CsMethod::TopDown),
            "mo" => Reconciler::Cs(CsMethod::MiddleOut {
                level: options
                    .mo_level
                    .ok_or_else(|| Error::validation("middle-out needs an explicit level"))?,
            }),
            "ols" => Reconciler::Cs(CsMethod::Ols),
            "mint" => Reconciler::Cs(CsMethod::MinT),
            "bu-ct" => Reconciler::Ct(CtMethod::BottomUp),
            "thf" => Reconciler::Ct(CtMethod::Thf),
            "tcs" => Reconciler::Ct(CtMethod::Tcs),
            "cst" => Reconciler::Ct(CtMethod::Cst),
            "ite" => Reconciler::Ct(CtMethod::Ite {
                tol: options.ite_tol,
                max_iter: options.ite_max_iter,
                order: options.ite_order,
            }),
            "oct" => Reconciler::Ct(CtMethod::Oct),
            other => {
                return Err(Error::validation(format!(
                    "unknown reconciler `{other}`; expected one of {}",
                    Self::TAGS.join(", ")
                )))
            }
        })
    }

    pub fn label(&self) -> &'static str {
        match self {
            Reconciler::Cs(m) => m.label(),
            Reconciler::Ct(m) => m.label(),
        }
    }
}

impl fmt::Display for Reconciler {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for IteOrder {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal-first" => Ok(IteOrder::TemporalFirst),
            "cross-sectional-first" => Ok(IteOrder::CrossSectionalFirst),
            other => Err(Error::validation(format!("unknown iteration order `{other}`"))),
        }
    }
}

/// One reconciled copy of the base forecasts with per-origin diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconciledSet {
    pub reconciler: Reconciler,
    pub set: ForecastSet,
    pub audits: Vec<CoherenceAudit>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastArchive {
    /// Base forecaster label, e.g. `LR`.
    pub forecaster: String,
    pub node_ids: Vec<String>,
    pub scheme: TemporalScheme,
    pub train_windows: usize,
    /// Top-level window index of each origin.
    pub origin_windows: Vec<usize>,
    pub actuals: ForecastSet,
    pub benchmark: ForecastSet,
    pub base: ForecastSet,
    pub residuals: ResidualSet,
    /// Per temporal level (coarsest first): training-split power sum per node.
    pub training_totals: Vec<Vec<f64>>,
    pub reconciled: Vec<ReconciledSet>,
}

/// Number of training windows for a split fraction.
pub fn train_window_count(windows: usize, train_fraction: f64) -> Result<usize> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::validation(format!(
            "train fraction must lie in (0, 1), got {train_fraction}"
        )));
    }
    let train = (windows as f64 * train_fraction).floor() as usize;
    if train == 0 || train >= windows {
        return Err(Error::validation(format!(
            "a {train_fraction} split of {windows} windows leaves an empty train or test set"
        )));
    }
    Ok(train)
}

/// Base and benchmark forecasts from every hourly origin of the test split.
pub fn build_archive(
    panel: &MultiLevelPanel,
    forecaster: &dyn Forecaster,
    train_fraction: f64,
) -> Result<ForecastArchive> {
    let windows = panel.windows();
    let train_windows = train_window_count(windows, train_fraction)?;
    let scheme = panel.scheme().clone();
    let top_slots = scheme.steps(scheme.max_factor());
    let (origin_windows, skipped): (Vec<usize>, Vec<usize>) =
        (train_windows..windows).partition(|&w| w * top_slots >= MAX_LAG);
    if !skipped.is_empty() {
        log::info!(
            "skipping {} origin(s) without {MAX_LAG} steps of feature history",
            skipped.len()
        );
    }
    if origin_windows.is_empty() {
        return Err(Error::validation("no test origin has enough feature history"));
    }

    let (base, residuals) = produce_base_forecasts(panel, forecaster, train_windows, &origin_windows)?;
    let (benchmark, _) = produce_base_forecasts(panel, &NaiveForecaster, train_windows, &origin_windows)?;

    let levels = scheme.levels();
    let nodes = panel.node_ids().len();
    let mut actual_values = vec![DMatrix::zeros(nodes, scheme.slots_per_window()); origin_windows.len()];
    for (l, level) in levels.iter().enumerate() {
        let power = panel.levels()[l].power();
        for (o, &w) in origin_windows.iter().enumerate() {
            for j in 0..level.slots {
                for n in 0..nodes {
                    actual_values[o][(n, level.offset + j)] = power[(w * level.slots + j, n)];
                }
            }
        }
    }
    let actuals = ForecastSet {
        values: actual_values,
        ..base.clone()
    };
    let training_totals = levels
        .iter()
        .enumerate()
        .map(|(l, level)| {
            let power = panel.levels()[l].power();
            let rows = train_windows * level.slots;
            (0..nodes).map(|n| power.column(n).rows(0, rows).sum()).collect()
        })
        .collect();

    Ok(ForecastArchive {
        forecaster: forecaster.label().to_string(),
        node_ids: panel.node_ids().to_vec(),
        scheme,
        train_windows,
        origin_windows,
        actuals,
        benchmark,
        base,
        residuals,
        training_totals,
        reconciled: Vec::new(),
    })
}

impl ForecastArchive {
    /// Long-format table with one row per (origin, node, slot).
    pub fn to_csv(&self) -> String {
        let mut out = String::from("origin,node,minutes,step,actual,benchmark,base");
        for r in &self.reconciled {
            out.push(',');
            out.push_str(r.reconciler.label());
        }
        out.push('\n');
        let base_step = self.scheme.base_step_minutes();
        for (o, origin) in self.base.origins.iter().enumerate() {
            for (n, node) in self.node_ids.iter().enumerate() {
                for level in self.scheme.levels() {
                    for j in 0..level.slots {
                        let s = level.offset + j;
                        out.push_str(&format!(
                            "{},{node},{},{},{},{},{}",
                            format_timestamp(origin),
                            level.factor * base_step,
                            j + 1,
                            self.actuals.values[o][(n, s)],
                            self.benchmark.values[o][(n, s)],
                            self.base.values[o][(n, s)]
                        ));
                        for r in &self.reconciled {
                            out.push_str(&format!(",{}", r.set.values[o][(n, s)]));
                        }
                        out.push('\n');
                    }
                }
            }
        }
        out
    }

    /// Coherence diagnostics of every reconciled set, one row per origin.
    pub fn audit_csv(&self) -> String {
        let mut out = String::from("method,origin,cross_sectional,temporal,iterations,converged\n");
        for r in &self.reconciled {
            for (o, origin) in r.set.origins.iter().enumerate() {
                out.push_str(&format!(
                    "{},{},{:e},{:e},{},{}\n",
                    r.reconciler.label(),
                    format_timestamp(origin),
                    r.audits[o].cross_sectional,
                    r.audits[o].temporal,
                    r.iterations[o],
                    r.converged[o]
                ));
            }
        }
        out
    }

    fn check_hierarchy(&self, spec: &HierarchySpec) -> Result<()> {
        if self.node_ids.as_slice() != spec.nodes() {
            return Err(Error::structural("archive nodes do not match the hierarchy"));
        }
        Ok(())
    }

    /// Applies `reconciler` to the base forecasts.
    pub fn reconcile_with(&self, spec: &HierarchySpec, reconciler: Reconciler) -> Result<ReconciledSet> {
        self.check_hierarchy(spec)?;
        let structure = CrossTemporalStructure::new(spec, self.scheme.clone());
        match reconciler {
            Reconciler::Cs(method) => {
                let s = build_summing_matrix(spec);
                let mut set = self.base.clone();
                for (l, level) in self.scheme.levels().iter().enumerate() {
                    let totals = &self.training_totals[l];
                    let g = match method {
                        CsMethod::BottomUp => g_bottom_up(&s),
                        CsMethod::TopDown => g_top_down(&s, totals)?,
                        CsMethod::MiddleOut { level } => g_middle_out(spec, level, totals)?,
                        CsMethod::Ols => g_min_trace(&s, &CovarianceEstimate::identity(s.rows()))?,
                        CsMethod::MinT => {
                            let residuals = self.residuals.level(level.factor).ok_or_else(|| {
                                Error::validation(format!("no residuals for factor {}", level.factor))
                            })?;
                            let w = estimate_w(&residuals.values, CovarianceKind::Shrinkage, &self.node_ids)?;
                            g_min_trace(&s, &w)?
                        }
                    };
                    set = reconcile(&g, &s, &set, level.factor)?;
                }
                let audits = set.values.iter().map(|w| structure.audit(w)).collect();
                let n = set.values.len();
                Ok(ReconciledSet {
                    reconciler,
                    set,
                    audits,
                    iterations: vec![1; n],
                    converged: vec![true; n],
                })
            }
            Reconciler::Ct(method) => {
                let outcome = CtReconciler::from_residuals(structure, method, &self.residuals)?
                    .reconcile(&self.base)?;
                Ok(ReconciledSet {
                    reconciler,
                    audits: outcome.audits(),
                    iterations: outcome.windows.iter().map(|w| w.iterations).collect(),
                    converged: outcome.windows.iter().map(|w| w.converged).collect(),
                    set: outcome.set,
                })
            }
        }
    }

    /// Applies each reconciler in order, replacing any earlier result with the same label.
    pub fn add_reconciled(&mut self, spec: &HierarchySpec, reconcilers: &[Reconciler]) -> Result<()> {
        for &r in reconcilers {
            let result = self.reconcile_with(spec, r)?;
            self.reconciled.retain(|x| x.reconciler.label() != r.label());
            self.reconciled.push(result);
        }
        Ok(())
    }
}

/// Builds the archive and applies every reconciler.
pub fn rolling_origin(
    panel: &MultiLevelPanel,
    spec: &HierarchySpec,
    forecaster: &dyn Forecaster,
    train_fraction: f64,
    reconcilers: &[Reconciler],
) -> Result<ForecastArchive> {
    let mut archive = build_archive(panel, forecaster, train_fraction)?;
    archive.add_reconciled(spec, reconcilers)?;
    Ok(archive)
}
