//! Relative accuracy tables and significance tests over an archive.

use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::archive::ForecastArchive;
use super::metrics::{avg_rel_rmse, rel_rmse};
use super::stats::{friedman_test, nemenyi, nemenyi_q, rank_rows, FriedmanResult, NemenyiResult};
use crate::base_forecast::ForecastSet;
use crate::error::{Error, Result};
use crate::hierarchy::HierarchySpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// Row labels: the base forecaster first, then each reconciled set.
    pub methods: Vec<String>,
    pub node_ids: Vec<String>,
    /// Cross-sectional level of each node, 0 at the root.
    pub node_levels: Vec<usize>,
    pub depth: usize,
    /// Coarsest first.
    pub factors: Vec<u32>,
    pub base_step_minutes: u32,
    /// Per method: nodes × factors RelRMSE.
    pub rel_rmse: Vec<DMatrix<f64>>,
    /// Series (factor-major, then node) × methods, 1 = lowest RelRMSE.
    pub ranks: DMatrix<f64>,
    pub friedman: Option<FriedmanResult>,
    pub nemenyi: Option<NemenyiResult>,
}

/// Errors of `set` against `actuals` for one node and temporal level.
fn series_errors(set: &ForecastSet, actuals: &ForecastSet, node: usize, offset: usize, slots: usize) -> Vec<f64> {
    set.values
        .iter()
        .zip(&actuals.values)
        .flat_map(|(f, a)| (offset..offset + slots).map(move |s| f[(node, s)] - a[(node, s)]))
        .collect()
}

/// Scores every method in the archive against the naive benchmark.
pub fn evaluate(archive: &ForecastArchive, spec: &HierarchySpec, alpha: f64) -> Result<EvaluationReport> {
    if archive.node_ids.as_slice() != spec.nodes() {
        return Err(Error::structural("archive nodes do not match the hierarchy"));
    }
    // Reject an untabulated level even when there are too few methods to test.
    nemenyi_q(alpha, 2)?;
    let mut methods = vec![archive.forecaster.clone()];
    let mut sets = vec![&archive.base];
    for r in &archive.reconciled {
        methods.push(format!("{}-{}", archive.forecaster, r.reconciler.label()));
        sets.push(&r.set);
    }
    let levels = archive.scheme.levels();
    let m = archive.node_ids.len();
    let rel = sets
        .par_iter()
        .map(|set| {
            let mut out = DMatrix::zeros(m, levels.len());
            for (l, level) in levels.iter().enumerate() {
                for n in 0..m {
                    let e = series_errors(set, &archive.actuals, n, level.offset, level.slots);
                    let b = series_errors(&archive.benchmark, &archive.actuals, n, level.offset, level.slots);
                    out[(n, l)] = rel_rmse(&e, &b).map_err(|err| match err {
                        Error::DegenerateBenchmark(msg) => Error::DegenerateBenchmark(format!(
                            "{msg} for node `{}` at factor {}",
                            archive.node_ids[n], level.factor
                        )),
                        other => other,
                    })?;
                }
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;

    let series = m * levels.len();
    let scores = DMatrix::from_fn(series, methods.len(), |row, k| rel[k][(row % m, row / m)]);
    let ranks = rank_rows(&scores);
    let (friedman, nemenyi) = if methods.len() >= 2 && series >= 2 {
        (Some(friedman_test(&ranks)?), Some(nemenyi(&ranks, alpha)?))
    } else {
        (None, None)
    };
    Ok(EvaluationReport {
        methods,
        node_ids: archive.node_ids.clone(),
        node_levels: (0..m).map(|n| spec.level_of(n)).collect(),
        depth: spec.depth(),
        factors: archive.scheme.factors().to_vec(),
        base_step_minutes: archive.scheme.base_step_minutes(),
        rel_rmse: rel,
        ranks,
        friedman,
        nemenyi,
    })
}

impl EvaluationReport {
    fn granularity(&self, factor: u32) -> String {
        format!("{}min", factor * self.base_step_minutes)
    }

    fn method_index(&self, method: &str) -> Result<usize> {
        self.methods
            .iter()
            .position(|m| m == method)
            .ok_or_else(|| Error::validation(format!("no method `{method}` in report")))
    }

    fn factor_index(&self, factor: u32) -> Result<usize> {
        self.factors
            .iter()
            .position(|&f| f == factor)
            .ok_or_else(|| Error::validation(format!("no factor {factor} in report")))
    }

    fn gm_where(&self, method: usize, factors: &[usize], keep: impl Fn(usize) -> bool) -> Result<f64> {
        let values: Vec<f64> = factors
            .iter()
            .flat_map(|&l| (0..self.node_ids.len()).filter(|&n| keep(n)).map(move |n| (n, l)))
            .map(|(n, l)| self.rel_rmse[method][(n, l)])
            .collect();
        avg_rel_rmse(&values)
    }

    /// AvgRelRMSE of `method` over all nodes at `factor`.
    pub fn avg_rel_rmse(&self, method: &str, factor: u32) -> Result<f64> {
        self.gm_where(self.method_index(method)?, &[self.factor_index(factor)?], |_| true)
    }

    /// AvgRelRMSE of `method` over the nodes of one cross-sectional level at `factor`.
    pub fn avg_rel_rmse_at_level(&self, method: &str, factor: u32, level: usize) -> Result<f64> {
        self.gm_where(self.method_index(method)?, &[self.factor_index(factor)?], |n| {
            self.node_levels[n] == level
        })
    }

    /// AvgRelRMSE of `method` over every (node, factor) series.
    pub fn avg_rel_rmse_all(&self, method: &str) -> Result<f64> {
        let all: Vec<usize> = (0..self.factors.len()).collect();
        self.gm_where(self.method_index(method)?, &all, |_| true)
    }

    /// Table of AvgRelRMSE with one column per cross-sectional level (bottom
    /// first) and an all-nodes GM column, one block per granularity plus a
    /// block over all granularities.
    pub fn avg_rel_rmse_csv(&self) -> Result<String> {
        let mut out = String::from("granularity,method");
        for level in (0..=self.depth).rev() {
            write!(out, ",L{level}").unwrap();
        }
        out.push_str(",GM\n");
        let mut blocks: Vec<(String, Vec<usize>)> = self
            .factors
            .iter()
            .enumerate()
            .map(|(l, &f)| (self.granularity(f), vec![l]))
            .collect();
        blocks.push(("all".into(), (0..self.factors.len()).collect()));
        for (name, factors) in &blocks {
            for (k, method) in self.methods.iter().enumerate() {
                write!(out, "{name},{method}").unwrap();
                for level in (0..=self.depth).rev() {
                    let v = self.gm_where(k, factors, |n| self.node_levels[n] == level)?;
                    write!(out, ",{v:.6}").unwrap();
                }
                writeln!(out, ",{:.6}", self.gm_where(k, factors, |_| true)?).unwrap();
            }
        }
        Ok(out)
    }

    /// RelRMSE of every method on every series, long format.
    pub fn rel_rmse_csv(&self) -> String {
        let mut out = String::from("method,node,level,granularity,rel_rmse\n");
        for (k, method) in self.methods.iter().enumerate() {
            for (l, &f) in self.factors.iter().enumerate() {
                for (n, node) in self.node_ids.iter().enumerate() {
                    writeln!(
                        out,
                        "{method},{node},{},{},{:.6}",
                        self.node_levels[n],
                        self.granularity(f),
                        self.rel_rmse[k][(n, l)]
                    )
                    .unwrap();
                }
            }
        }
        out
    }

    /// Rank of every method on every series.
    pub fn ranks_csv(&self) -> String {
        let mut out = String::from("series");
        for m in &self.methods {
            write!(out, ",{m}").unwrap();
        }
        out.push('\n');
        let m = self.node_ids.len();
        for row in 0..self.ranks.nrows() {
            write!(out, "{}@{}", self.node_ids[row % m], self.granularity(self.factors[row / m])).unwrap();
            for k in 0..self.methods.len() {
                write!(out, ",{}", self.ranks[(row, k)]).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// Friedman and Nemenyi outcome as plain text.
    pub fn significance_text(&self) -> String {
        let mut out = String::new();
        let (Some(f), Some(n)) = (&self.friedman, &self.nemenyi) else {
            out.push_str("Significance tests need at least two methods and two series; not performed.\n");
            return out;
        };
        writeln!(out, "Series: {}", self.ranks.nrows()).unwrap();
        writeln!(out, "Methods: {}", self.methods.len()).unwrap();
        writeln!(out, "Friedman statistic: {:.6}", f.statistic).unwrap();
        writeln!(out, "Friedman p-value: {:.6e}", f.p_value).unwrap();
        writeln!(out, "Nemenyi alpha: {}", n.alpha).unwrap();
        writeln!(out, "Nemenyi critical distance: {:.6}", n.critical_distance).unwrap();
        out.push_str("Mean ranks:\n");
        let mut order: Vec<usize> = (0..self.methods.len()).collect();
        order.sort_by(|&a, &b| n.mean_ranks[a].total_cmp(&n.mean_ranks[b]).then(a.cmp(&b)));
        for k in order {
            writeln!(
                out,
                "  {:<12} {:>9.4}{}",
                self.methods[k],
                n.mean_ranks[k],
                if n.top_group[k] { "  [top group]" } else { "" }
            )
            .unwrap();
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::base_forecast::ResidualSet;
    use crate::evaluate::archive::{ReconciledSet, Reconciler};
    use crate::hierarchy::TemporalScheme;
    use crate::reconcile_cs::CsMethod;
    use chrono::NaiveDate;

    fn toy_archive() -> (ForecastArchive, HierarchySpec) {
        let spec = HierarchySpec::star("T", &["a", "b"]).unwrap();
        let scheme = TemporalScheme::new(30, &[1, 2]).unwrap();
        let t0 = NaiveDate::from_ymd_opt(2021, 3, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let origins = 4;
        let actual: Vec<DMatrix<f64>> = (0..origins)
            .map(|o| DMatrix::from_fn(3, 3, |n, s| 1.0 + (o * 7 + n * 3 + s) as f64 % 5.0))
            .collect();
        let shift = |d: f64| -> Vec<DMatrix<f64>> {
            actual
                .iter()
                .enumerate()
                .map(|(o, a)| a.map(|v| v + if o % 2 == 0 { d } else { -d }))
                .collect()
        };
        let set = |values| ForecastSet {
            node_ids: spec.nodes().to_vec(),
            scheme: scheme.clone(),
            origins: (0..origins).map(|o| t0 + chrono::Duration::hours(o as i64)).collect(),
            values,
        };
        let archive = ForecastArchive {
            forecaster: "Naive".into(),
            node_ids: spec.nodes().to_vec(),
            scheme: scheme.clone(),
            train_windows: 10,
            origin_windows: (10..14).collect(),
            actuals: set(actual.clone()),
            benchmark: set(shift(2.0)),
            base: set(shift(1.0)),
            residuals: ResidualSet {
                node_ids: spec.nodes().to_vec(),
                levels: vec![],
            },
            training_totals: vec![],
            reconciled: vec![ReconciledSet {
                reconciler: Reconciler::Cs(CsMethod::BottomUp),
                set: set(shift(2.0)),
                audits: vec![Default::default(); origins],
                iterations: vec![1; origins],
                converged: vec![true; origins],
            }],
        };
        (archive, spec)
    }

    #[test]
    fn benchmark_copy_scores_exactly_one() {
        let (archive, spec) = toy_archive();
        let report = evaluate(&archive, &spec, 0.05).unwrap();
        assert_eq!(report.methods, vec!["Naive", "Naive-BU"]);
        assert_eq!(report.avg_rel_rmse_all("Naive-BU").unwrap(), 1.0);
        assert!((report.avg_rel_rmse_all("Naive").unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(report.ranks.nrows(), 6);
        assert!(report.ranks.column(0).iter().all(|&r| r == 1.0));
        let f = report.friedman.as_ref().unwrap();
        assert!((f.statistic - 6.0).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let (archive, spec) = toy_archive();
        let report = evaluate(&archive, &spec, 0.05).unwrap();
        let table = report.avg_rel_rmse_csv().unwrap();
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], "granularity,method,L1,L0,GM");
        assert_eq!(lines[1], "60min,Naive,0.500000,0.500000,0.500000");
        assert_eq!(lines.len(), 1 + 2 * 3);
        assert!(lines[5].starts_with("all,Naive,"));
        assert_eq!(report.rel_rmse_csv().lines().count(), 1 + 2 * 2 * 3);
        assert!(report.ranks_csv().contains("a@30min,1,2"));
        assert!(report.significance_text().contains("[top group]"));
    }
}
