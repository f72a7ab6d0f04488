//! TOML experiment configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::synth::{SynthConfig, SynthShape};
use crate::base_forecast::{Forecaster, LinearForecaster, NaiveForecaster};
use crate::error::{Error, Result};
use crate::evaluate::{Reconciler, TagOptions};
use crate::hierarchy::TemporalScheme;
use crate::reconcile_ct::IteOrder;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForecasterKind {
    Naive,
    Lr,
}

impl ForecasterKind {
    pub fn build(self, refit_per_origin: bool) -> Box<dyn Forecaster> {
        match self {
            ForecasterKind::Naive => Box::new(NaiveForecaster),
            ForecasterKind::Lr => Box::new(LinearForecaster { refit_per_origin }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IteConfig {
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub order: IteOrder,
}

fn default_tol() -> f64 {
    1e-8
}

fn default_max_iter() -> usize {
    100
}

impl Default for IteConfig {
    fn default() -> Self {
        Self {
            tol: default_tol(),
            max_iter: default_max_iter(),
            order: IteOrder::default(),
        }
    }
}

/// Generated input used when no panel file is configured.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSection {
    pub shape: SynthShape,
    pub days: u32,
    #[serde(default = "default_invalid_rate")]
    pub invalid_rate: f64,
}

fn default_invalid_rate() -> f64 {
    0.002
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Hierarchy JSON; optional when the panel is synthetic.
    pub hierarchy: Option<PathBuf>,
    /// Long-format turbine CSV; when absent, `synth` must be given.
    pub panel: Option<PathBuf>,
    pub synth: Option<SynthSection>,
    pub output: PathBuf,
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_factors")]
    pub factors: Vec<u32>,
    #[serde(default = "default_base_step")]
    pub base_step_minutes: u32,
    pub forecaster: ForecasterKind,
    #[serde(default)]
    pub refit_per_origin: bool,
    /// Method tags; `base` alone evaluates unreconciled forecasts only.
    pub reconcilers: Vec<String>,
    pub mo_level: Option<usize>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub ite: IteConfig,
}

fn default_train_fraction() -> f64 {
    0.9
}

fn default_factors() -> Vec<u32> {
    vec![1, 2, 3, 6]
}

fn default_base_step() -> u32 {
    10
}

fn default_alpha() -> f64 {
    0.05
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::validation(format!("config: {e}")))
    }

    /// Loads a config and resolves relative paths against its directory.
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut config = Self::from_toml_str(&text)?;
        let dir = path.parent().unwrap_or(Path::new("."));
        for p in [&mut config.hierarchy, &mut config.panel].into_iter().flatten() {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        if config.output.is_relative() {
            config.output = dir.join(&config.output);
        }
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn scheme(&self) -> Result<TemporalScheme> {
        TemporalScheme::new(self.base_step_minutes, &self.factors)
    }

    pub fn tag_options(&self) -> TagOptions {
        TagOptions {
            mo_level: self.mo_level,
            ite_tol: self.ite.tol,
            ite_max_iter: self.ite.max_iter,
            ite_order: self.ite.order,
        }
    }

    /// Parsed reconcilers, `base` excluded.
    pub fn parsed_reconcilers(&self) -> Result<Vec<Reconciler>> {
        let options = self.tag_options();
        self.reconcilers
            .iter()
            .filter(|t| t.as_str() != "base")
            .map(|t| Reconciler::from_tag(t, &options))
            .collect()
    }

    pub fn synth_config(&self) -> Option<SynthConfig> {
        self.synth.as_ref().map(|s| SynthConfig {
            shape: s.shape,
            days: s.days,
            seed: self.seed,
            invalid_rate: s.invalid_rate,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(Error::validation(format!(
                "train_fraction must lie in (0, 1), got {}",
                self.train_fraction
            )));
        }
        self.scheme()?;
        if self.reconcilers.is_empty() {
            return Err(Error::validation("list at least one reconciler, or `base`"));
        }
        let parsed = self.parsed_reconcilers()?;
        let mut labels: Vec<&str> = parsed.iter().map(|r| r.label()).collect();
        labels.sort_unstable();
        if labels.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::validation("reconciler listed twice"));
        }
        match (&self.panel, &self.synth) {
            (None, None) => return Err(Error::validation("set either `panel` or a `[synth]` section")),
            (Some(_), Some(_)) => return Err(Error::validation("`panel` and `[synth]` are mutually exclusive")),
            (Some(_), None) if self.hierarchy.is_none() => {
                return Err(Error::validation("a panel file needs a `hierarchy` file"))
            }
            _ => {}
        }
        if !(self.ite.tol > 0.0) || self.ite.max_iter == 0 {
            return Err(Error::validation("ite.tol must be > 0 and ite.max_iter >= 1"));
        }
        Ok(())
    }
}
