//! Synthetic turbine panels: correlated wind speeds with a diurnal cycle,
//! a logistic power curve and a sprinkling of invalid readings.

use std::fmt::Write as _;
use std::str::FromStr;

use chrono::{Duration, NaiveDate, NaiveDateTime};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hierarchy::HierarchySpec;
use crate::ingest::{format_timestamp, TimeSeriesPanel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SynthShape {
    /// Total over two groups of two turbines.
    Fig1,
    /// Farm over a 14-turbine group and a 6-turbine group.
    DatasetB,
}

impl FromStr for SynthShape {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fig1" => Ok(Self::Fig1),
            "dataset-b" => Ok(Self::DatasetB),
            other => Err(Error::validation(format!(
                "unknown synthetic shape `{other}`; expected fig1 or dataset-b"
            ))),
        }
    }
}

pub fn synth_hierarchy(shape: SynthShape) -> HierarchySpec {
    match shape {
        SynthShape::Fig1 => {
            HierarchySpec::three_level("Total", &[("A", &["A1", "A2"]), ("B", &["B1", "B2"])])
        }
        SynthShape::DatasetB => {
            let a: Vec<String> = (1..=15).filter(|&i| i != 3).map(|i| format!("A{i}")).collect();
            let b: Vec<String> = (1..=6).map(|i| format!("B{i}")).collect();
            let a: Vec<&str> = a.iter().map(String::as_str).collect();
            let b: Vec<&str> = b.iter().map(String::as_str).collect();
            HierarchySpec::three_level("Farm", &[("ModelA", &a), ("ModelB", &b)])
        }
    }
    .expect("built-in hierarchy is valid")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub shape: SynthShape,
    pub days: u32,
    pub seed: u64,
    /// Probability that a reading is replaced by a missing or invalid value.
    pub invalid_rate: f64,
}

impl SynthConfig {
    pub fn new(shape: SynthShape, days: u32, seed: u64) -> Self {
        Self {
            shape,
            days,
            seed,
            invalid_rate: 0.002,
        }
    }
}

const STEP_MINUTES: u32 = 10;

fn start_time() -> NaiveDateTime {
    NaiveDate::from_ymd_opt(2020, 3, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap()
}

/// Logistic power curve in kW.
pub fn power_curve(wind: f64, rated_kw: f64) -> f64 {
    rated_kw / (1.0 + (-(wind - 8.5) / 1.3).exp())
}

fn ar1_step(state: &mut f64, phi: f64, shock: f64) -> f64 {
    *state = phi * *state + shock;
    *state
}

/// Raw 10-minute panel for the bottom nodes of `spec`, invalid readings included.
pub fn synth_panel(spec: &HierarchySpec, config: &SynthConfig) -> Result<TimeSeriesPanel> {
    if config.days == 0 {
        return Err(Error::validation("synthetic panel needs at least one day"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let n = config.days as usize * 24 * 60 / STEP_MINUTES as usize;
    let bottom = spec.bottom_ids().to_vec();
    let offset = spec.bottom_offset();
    let groups: Vec<usize> = (0..bottom.len())
        .map(|j| spec.parent_of(offset + j).unwrap_or(offset + j))
        .collect();
    let distinct_groups: Vec<usize> = {
        let mut g = groups.clone();
        g.dedup();
        g
    };
    let rated: Vec<f64> = groups
        .iter()
        .map(|g| 1800.0 + 400.0 * distinct_groups.iter().position(|x| x == g).unwrap_or(0) as f64)
        .collect();

    let t0 = start_time();
    let timestamps: Vec<NaiveDateTime> = (0..n)
        .map(|i| t0 + Duration::minutes((i as u32 * STEP_MINUTES) as i64))
        .collect();
    let mut wind = DMatrix::zeros(n, bottom.len());
    let mut power = DMatrix::zeros(n, bottom.len());

    let mut regional = 0.0;
    let mut group_state = vec![0.0; distinct_groups.len()];
    let mut own = vec![0.0; bottom.len()];
    for t in 0..n {
        let hour = (t as f64 * STEP_MINUTES as f64) / 60.0;
        let diurnal = 1.4 * (2.0 * std::f64::consts::PI * (hour - 15.0) / 24.0).cos();
        let common = 7.5 + diurnal + ar1_step(&mut regional, 0.995, 0.25 * std.sample(&mut rng));
        for state in group_state.iter_mut() {
            ar1_step(state, 0.97, 0.15 * std.sample(&mut rng));
        }
        for j in 0..bottom.len() {
            let g = distinct_groups.iter().position(|x| *x == groups[j]).unwrap();
            let local = ar1_step(&mut own[j], 0.9, 0.2 * std.sample(&mut rng));
            let v = (common + group_state[g] + local).max(0.3);
            let p = (power_curve(v, rated[j]) + 15.0 * std.sample(&mut rng)).clamp(0.5, rated[j]);
            wind[(t, j)] = v;
            power[(t, j)] = p;
        }
    }
    for t in 0..n {
        for j in 0..bottom.len() {
            if rng.random::<f64>() < config.invalid_rate {
                match rng.random_range(0..3) {
                    0 => power[(t, j)] = f64::NAN,
                    1 => power[(t, j)] = -power[(t, j)],
                    _ => wind[(t, j)] = f64::NAN,
                }
            }
        }
    }
    TimeSeriesPanel::new(timestamps, bottom, wind, power, STEP_MINUTES)
}

/// Long-format CSV accepted by the panel loader; missing values as `NA`.
pub fn panel_to_csv(panel: &TimeSeriesPanel) -> String {
    let fmt = |v: f64| if v.is_nan() { "NA".to_string() } else { format!("{v:.3}") };
    let mut out = String::from("timestamp,turbine_id,wind_speed_mps,power_kw\n");
    for (t, ts) in panel.timestamps().iter().enumerate() {
        let stamp = format_timestamp(ts);
        for (j, id) in panel.node_ids().iter().enumerate() {
            writeln!(
                out,
                "{stamp},{id},{},{}",
                fmt(panel.wind()[(t, j)]),
                fmt(panel.power()[(t, j)])
            )
            .unwrap();
        }
    }
    out
}
