//! Raw turbine CSV loading, cleaning, aggregation and descriptive statistics.

use std::collections::HashMap;
use std::io::Read;
use std::ops::Range;
use std::path::Path;

use chrono::{Duration, NaiveDateTime, Timelike};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::{HierarchySpec, SummingMatrix, TemporalScheme};

/// Aligned wind and power observations on a regular time grid.
///
/// Matrices are time × node; `NaN` marks a missing reading until the
/// panel has been through [`clean`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeSeriesPanel {
    timestamps: Vec<NaiveDateTime>,
    node_ids: Vec<String>,
    wind: DMatrix<f64>,
    power: DMatrix<f64>,
    step_minutes: u32,
}

impl TimeSeriesPanel {
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        node_ids: Vec<String>,
        wind: DMatrix<f64>,
        power: DMatrix<f64>,
        step_minutes: u32,
    ) -> Result<Self> {
        if step_minutes == 0 {
            return Err(Error::validation("panel step must be positive"));
        }
        let shape = (timestamps.len(), node_ids.len());
        if wind.shape() != shape || power.shape() != shape {
            return Err(Error::structural(format!(
                "panel matrices must be {}x{}, got wind {:?} and power {:?}",
                shape.0,
                shape.1,
                wind.shape(),
                power.shape()
            )));
        }
        let step = Duration::minutes(step_minutes as i64);
        if let Some(w) = timestamps.windows(2).find(|w| w[1] - w[0] != step) {
            return Err(Error::validation(format!(
                "timestamps not on a regular {step_minutes}-minute grid near {}",
                w[0]
            )));
        }
        Ok(Self {
            timestamps,
            node_ids,
            wind,
            power,
            step_minutes,
        })
    }

    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn node_ids(&self) -> &[String] {
        &self.node_ids
    }

    pub fn node_position(&self, id: &str) -> Option<usize> {
        self.node_ids.iter().position(|n| n == id)
    }

    pub fn wind(&self) -> &DMatrix<f64> {
        &self.wind
    }

    pub fn power(&self) -> &DMatrix<f64> {
        &self.power
    }

    pub fn step_minutes(&self) -> u32 {
        self.step_minutes
    }

    pub fn wind_column(&self, node: usize) -> &[f64] {
        column_slice(&self.wind, node)
    }

    pub fn power_column(&self, node: usize) -> &[f64] {
        column_slice(&self.power, node)
    }

    /// Count of missing (`NaN`) cells in either matrix.
    pub fn missing_cells(&self) -> usize {
        self.wind.iter().chain(self.power.iter()).filter(|v| v.is_nan()).count()
    }

    /// Rows in `range`, all nodes.
    pub fn slice_rows(&self, range: Range<usize>) -> Self {
        let n = range.len();
        Self {
            timestamps: self.timestamps[range.clone()].to_vec(),
            node_ids: self.node_ids.clone(),
            wind: self.wind.rows(range.start, n).into_owned(),
            power: self.power.rows(range.start, n).into_owned(),
            step_minutes: self.step_minutes,
        }
    }

    /// Drops leading rows up to the first timestamp aligned to a
    /// `window_steps`-step boundary (counted from midnight) and trailing rows
    /// of an incomplete window.
    pub fn align_to_windows(&self, window_steps: u32) -> Result<Self> {
        if window_steps == 0 {
            return Err(Error::validation("window must span at least one step"));
        }
        let span = self.step_minutes * window_steps;
        let start = self
            .timestamps
            .iter()
            .position(|t| minutes_of_day(t).is_multiple_of(span))
            .unwrap_or(self.len());
        let usable = (self.len() - start) / window_steps as usize * window_steps as usize;
        Ok(self.slice_rows(start..start + usable))
    }
}

fn column_slice(m: &DMatrix<f64>, col: usize) -> &[f64] {
    let n = m.nrows();
    &m.as_slice()[col * n..(col + 1) * n]
}

fn minutes_of_day(t: &NaiveDateTime) -> u32 {
    t.hour() * 60 + t.minute()
}

const TIMESTAMP_FORMATS: &[&str] = &[
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%dT%H:%M",
    "%d/%m/%Y %H:%M:%S",
    "%d/%m/%Y %H:%M",
];

pub fn parse_timestamp(text: &str) -> Result<NaiveDateTime> {
    let text = text.trim();
    let text = text.strip_suffix('Z').unwrap_or(text);
    TIMESTAMP_FORMATS
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(text, f).ok())
        .ok_or_else(|| Error::Ingest(format!("unparseable timestamp `{text}`")))
}

pub fn format_timestamp(t: &NaiveDateTime) -> String {
    t.format("%Y-%m-%d %H:%M:%S").to_string()
}

fn parse_reading(text: &str) -> Result<f64> {
    let t = text.trim();
    if t.is_empty() || t.eq_ignore_ascii_case("na") || t.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    t.parse::<f64>()
        .map_err(|_| Error::Ingest(format!("unparseable reading `{t}`")))
}

#[derive(Debug, Deserialize)]
struct RawRow {
    timestamp: String,
    turbine_id: String,
    wind_speed_mps: String,
    power_kw: String,
}

/// Loads a long-format turbine CSV onto a dense 10-minute grid.
pub fn load_panel(path: &Path, spec: &HierarchySpec) -> Result<TimeSeriesPanel> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    load_panel_from_reader(file, spec, 10)
}

/// Reader form of [`load_panel`] with an explicit grid step.
pub fn load_panel_from_reader<R: Read>(
    reader: R,
    spec: &HierarchySpec,
    step_minutes: u32,
) -> Result<TimeSeriesPanel> {
    let bottom = spec.bottom_ids();
    let column: HashMap<&str, usize> = bottom
        .iter()
        .enumerate()
        .map(|(i, id)| (id.as_str(), i))
        .collect();

    let mut rows = Vec::new();
    let mut csv = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    for record in csv.deserialize() {
        let raw: RawRow = record?;
        let col = *column.get(raw.turbine_id.as_str()).ok_or_else(|| {
            Error::Ingest(format!("unknown turbine id `{}`", raw.turbine_id))
        })?;
        rows.push((
            parse_timestamp(&raw.timestamp)?,
            col,
            parse_reading(&raw.wind_speed_mps)?,
            parse_reading(&raw.power_kw)?,
        ));
    }
    if rows.is_empty() {
        return Err(Error::Ingest("no data rows".into()));
    }

    let first = rows.iter().map(|r| r.0).min().expect("non-empty");
    let last = rows.iter().map(|r| r.0).max().expect("non-empty");
    let step = step_minutes as i64;
    let len = ((last - first).num_minutes() / step + 1) as usize;
    let timestamps: Vec<NaiveDateTime> = (0..len)
        .map(|i| first + Duration::minutes(i as i64 * step))
        .collect();

    let mut wind = DMatrix::from_element(len, bottom.len(), f64::NAN);
    let mut power = DMatrix::from_element(len, bottom.len(), f64::NAN);
    let mut seen = vec![false; len * bottom.len()];
    for (t, col, w, p) in rows {
        let offset = (t - first).num_minutes();
        if offset % step != 0 {
            return Err(Error::Ingest(format!(
                "timestamp {t} is off the {step_minutes}-minute grid"
            )));
        }
        let row = (offset / step) as usize;
        let cell = row * bottom.len() + col;
        if seen[cell] {
            return Err(Error::Ingest(format!(
                "duplicate reading for ({}, {})",
                format_timestamp(&t),
                bottom[col]
            )));
        }
        seen[cell] = true;
        wind[(row, col)] = w;
        power[(row, col)] = p;
    }

    TimeSeriesPanel::new(timestamps, bottom.to_vec(), wind, power, step_minutes)
}

fn clean_column(values: &mut [f64], node: &str) -> Result<()> {
    let valid = |v: f64| v.is_finite() && v > 0.0;
    let first = values
        .iter()
        .copied()
        .find(|&v| valid(v))
        .ok_or_else(|| Error::Cleaning {
            node: node.to_string(),
        })?;
    let mut last = first;
    for v in values.iter_mut() {
        if valid(*v) {
            last = *v;
        } else {
            *v = last;
        }
    }
    Ok(())
}

/// Replaces missing and non-positive readings by the last preceding valid
/// value in the same column; leading gaps take the first valid value.
pub fn clean(panel: &TimeSeriesPanel) -> Result<TimeSeriesPanel> {
    let mut out = panel.clone();
    let n = out.len();
    for (j, node) in panel.node_ids.iter().enumerate() {
        clean_column(&mut out.wind.as_mut_slice()[j * n..(j + 1) * n], node)?;
        clean_column(&mut out.power.as_mut_slice()[j * n..(j + 1) * n], node)?;
    }
    Ok(out)
}

/// Extends a bottom-level panel to every node of the hierarchy: power is
/// summed through `S`, wind is averaged over descendants.
pub fn aggregate_cross_sectional(
    panel: &TimeSeriesPanel,
    s: &SummingMatrix,
) -> Result<TimeSeriesPanel> {
    if panel.node_ids.as_slice() != s.col_labels() {
        return Err(Error::structural(format!(
            "panel columns {:?} do not match bottom nodes {:?}",
            panel.node_ids,
            s.col_labels()
        )));
    }
    let st = s.entries().transpose();
    let power = &panel.power * &st;
    let mut wind = &panel.wind * &st;
    for (node, row) in s.entries().row_iter().enumerate() {
        let count = row.sum();
        wind.column_mut(node).unscale_mut(count);
    }
    TimeSeriesPanel::new(
        panel.timestamps.clone(),
        s.row_labels().to_vec(),
        wind,
        power,
        panel.step_minutes,
    )
}

/// Sums power and averages wind over blocks of `factor` steps.
///
/// Blocks start at the first timestamp aligned to a `factor`-step boundary
/// from midnight; a partial trailing block is dropped.
pub fn aggregate_temporal(panel: &TimeSeriesPanel, factor: u32) -> Result<TimeSeriesPanel> {
    if factor < 1 {
        return Err(Error::validation("aggregation factor must be >= 1"));
    }
    let aligned = panel.align_to_windows(factor)?;
    let f = factor as usize;
    let blocks = aligned.len() / f;
    let nodes = aligned.node_ids.len();
    let mut power = DMatrix::zeros(blocks, nodes);
    let mut wind = DMatrix::zeros(blocks, nodes);
    for j in 0..nodes {
        let p = aligned.power_column(j);
        let w = aligned.wind_column(j);
        for b in 0..blocks {
            power[(b, j)] = p[b * f..(b + 1) * f].iter().sum::<f64>();
            wind[(b, j)] = w[b * f..(b + 1) * f].iter().sum::<f64>() / f as f64;
        }
    }
    let timestamps = (0..blocks).map(|b| aligned.timestamps[b * f]).collect();
    TimeSeriesPanel::new(
        timestamps,
        aligned.node_ids.clone(),
        wind,
        power,
        panel.step_minutes * factor,
    )
}

/// A hierarchy's series at every temporal aggregation level of a scheme.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiLevelPanel {
    scheme: TemporalScheme,
    /// One panel per factor, coarsest first, each holding all `m` nodes.
    levels: Vec<TimeSeriesPanel>,
}

impl MultiLevelPanel {
    /// Trims a cleaned bottom panel to whole top-level windows, aggregates
    /// it cross-sectionally and then temporally at every factor.
    pub fn build(bottom: &TimeSeriesPanel, s: &SummingMatrix, scheme: &TemporalScheme) -> Result<Self> {
        let aligned = bottom.align_to_windows(scheme.max_factor())?;
        if aligned.is_empty() {
            return Err(Error::validation("panel holds no complete top-level window"));
        }
        let all = aggregate_cross_sectional(&aligned, s)?;
        let levels = scheme
            .factors()
            .iter()
            .map(|&f| aggregate_temporal(&all, f))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            scheme: scheme.clone(),
            levels,
        })
    }

    pub fn scheme(&self) -> &TemporalScheme {
        &self.scheme
    }

    pub fn levels(&self) -> &[TimeSeriesPanel] {
        &self.levels
    }

    pub fn level(&self, factor: u32) -> Option<&TimeSeriesPanel> {
        self.scheme
            .factors()
            .iter()
            .position(|&f| f == factor)
            .map(|i| &self.levels[i])
    }

    /// Number of complete top-level windows.
    pub fn windows(&self) -> usize {
        self.levels[0].len() / self.scheme.steps(self.scheme.factors()[0])
    }

    pub fn node_ids(&self) -> &[String] {
        self.levels[0].node_ids()
    }
}

/// One row of the descriptive-statistics table.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerSummary {
    pub node: String,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub mean: f64,
    pub q3: f64,
    pub max: f64,
}

/// Quantile by linear interpolation between order statistics (type 7).
/// `sorted` must be ascending and non-empty.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Min, quartiles, mean and max of power per node.
pub fn describe_panel(panel: &TimeSeriesPanel) -> Result<Vec<PowerSummary>> {
    if panel.is_empty() || panel.node_ids.is_empty() {
        return Err(Error::validation("cannot describe an empty panel"));
    }
    let mut out = Vec::with_capacity(panel.node_ids.len());
    for (j, node) in panel.node_ids.iter().enumerate() {
        let mut v: Vec<f64> = panel.power_column(j).iter().copied().filter(|x| !x.is_nan()).collect();
        if v.is_empty() {
            return Err(Error::validation(format!("node `{node}` has no observations")));
        }
        v.sort_by(f64::total_cmp);
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        out.push(PowerSummary {
            node: node.clone(),
            min: v[0],
            q1: quantile_type7(&v, 0.25),
            median: quantile_type7(&v, 0.5),
            mean,
            q3: quantile_type7(&v, 0.75),
            max: v[v.len() - 1],
        });
    }
    Ok(out)
}

/// CSV rendering of [`describe_panel`] with the parent group in the first column.
pub fn describe_csv(summaries: &[PowerSummary], spec: &HierarchySpec) -> String {
    let mut out = String::from("group,node,min,q1,median,mean,q3,max\n");
    for s in summaries {
        let group = spec
            .node_index(&s.node)
            .and_then(|i| spec.parent_of(i))
            .map(|p| spec.nodes()[p].clone())
            .unwrap_or_default();
        out.push_str(&format!(
            "{},{},{:.1},{:.1},{:.1},{:.1},{:.1},{:.1}\n",
            group, s.node, s.min, s.q1, s.median, s.mean, s.q3, s.max
        ));
    }
    out
}
