//! End-to-end experiment driver: ingest, forecast, reconcile, evaluate.
//!
//! Each binary stage output records a digest of its inputs. A rerun with
//! unchanged inputs reuses the existing file unless recomputation is forced.

pub mod artifact;
pub mod config;
pub mod synth;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::{build_archive, evaluate, EvaluationReport, ForecastArchive};
use crate::hierarchy::{build_summing_matrix, HierarchySpec, TemporalScheme};
use crate::ingest::{clean, describe_csv, describe_panel, load_panel, MultiLevelPanel, TimeSeriesPanel};
use artifact::{file_digest, peek_header, read_artifact, write_artifact, ArtifactKind, Digest32, InputHasher};
use config::ExperimentConfig;
use synth::{synth_hierarchy, synth_panel};

/// Bumped whenever stage outputs change for identical inputs.
const PIPELINE_REVISION: &[u8] = b"coherent-pipeline-1";

/// Cleaned bottom-level panel together with its hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PanelArtifact {
    pub hierarchy: HierarchySpec,
    pub panel: TimeSeriesPanel,
}

/// Forecast archive together with its hierarchy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchiveArtifact {
    pub hierarchy: HierarchySpec,
    pub archive: ForecastArchive,
}

impl PanelArtifact {
    /// Loads and cleans a turbine CSV.
    pub fn from_files(hierarchy: &Path, panel: &Path) -> Result<Self> {
        let spec = HierarchySpec::from_path(hierarchy)?;
        let raw = load_panel(panel, &spec)?;
        Ok(Self {
            panel: clean(&raw)?,
            hierarchy: spec,
        })
    }

    pub fn multi_level(&self, scheme: &TemporalScheme) -> Result<MultiLevelPanel> {
        MultiLevelPanel::build(&self.panel, &build_summing_matrix(&self.hierarchy), scheme)
    }
}

/// Paths of everything a run writes below the output directory.
#[derive(Debug, Clone, PartialEq)]
pub struct RunLayout {
    pub root: PathBuf,
}

impl RunLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn panel(&self) -> PathBuf {
        self.root.join("panel.bin")
    }

    pub fn describe(&self) -> PathBuf {
        self.root.join("describe.csv")
    }

    pub fn archive(&self) -> PathBuf {
        self.root.join("archive.bin")
    }

    pub fn reconciled(&self) -> PathBuf {
        self.root.join("reconciled.bin")
    }

    pub fn audit(&self) -> PathBuf {
        self.root.join("coherence_audit.csv")
    }

    pub fn report_dir(&self) -> PathBuf {
        self.root.join("report")
    }
}

/// What a run did with each cached stage.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct StageLog {
    pub computed: Vec<&'static str>,
    pub reused: Vec<&'static str>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvaluationReport,
    pub stages: StageLog,
    pub layout: RunLayout,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the four report files into `dir`.
pub fn write_report(report: &EvaluationReport, dir: &Path) -> Result<()> {
    write_text(&dir.join("avg_rel_rmse.csv"), &report.avg_rel_rmse_csv()?)?;
    write_text(&dir.join("rel_rmse.csv"), &report.rel_rmse_csv())?;
    write_text(&dir.join("ranks.csv"), &report.ranks_csv())?;
    write_text(&dir.join("significance.txt"), &report.significance_text())
}

/// Runs `compute` unless `path` already holds an artifact for `input_hash`.
fn cached_stage<T, F>(
    stage: &'static str,
    path: &Path,
    kind: ArtifactKind,
    input_hash: Digest32,
    force: bool,
    log: &mut StageLog,
    compute: F,
) -> Result<T>
where
    T: Serialize + serde::de::DeserializeOwned,
    F: FnOnce() -> Result<T>,
{
    if !force {
        if let Some(h) = peek_header(path) {
            if h.kind == kind && h.input_hash == input_hash {
                if let Ok((_, value)) = read_artifact(path, kind) {
                    log::info!("{stage}: inputs unchanged, reusing {}", path.display());
                    log.reused.push(stage);
                    return Ok(value);
                }
            }
        }
    }
    let value = compute().map_err(|e| e.in_stage(stage))?;
    write_artifact(path, kind, &input_hash, &value).map_err(|e| e.in_stage(stage))?;
    log.computed.push(stage);
    Ok(value)
}

fn ingest_hash(config: &ExperimentConfig) -> Result<Digest32> {
    let mut h = InputHasher::new().part(PIPELINE_REVISION).part(b"ingest");
    if let Some(p) = &config.hierarchy {
        h = h.part(&file_digest(p)?);
    }
    if let Some(p) = &config.panel {
        h = h.part(&file_digest(p)?);
    }
    if let Some(s) = config.synth_config() {
        h = h.part(&serde_json::to_vec(&s)?);
    }
    Ok(h.finish())
}

fn ingest(config: &ExperimentConfig) -> Result<PanelArtifact> {
    match (&config.panel, config.synth_config()) {
        (Some(panel), _) => {
            let hierarchy = config
                .hierarchy
                .as_deref()
                .ok_or_else(|| Error::validation("a panel file needs a hierarchy file"))?;
            PanelArtifact::from_files(hierarchy, panel)
        }
        (None, Some(s)) => {
            let spec = match &config.hierarchy {
                Some(p) => HierarchySpec::from_path(p)?,
                None => synth_hierarchy(s.shape),
            };
            let raw = synth_panel(&spec, &s)?;
            Ok(PanelArtifact {
                panel: clean(&raw)?,
                hierarchy: spec,
            })
        }
        (None, None) => Err(Error::validation("no panel source configured")),
    }
}

/// Runs every stage of `config`, reusing cached outputs unless `force`.
pub fn run_experiment(config: &ExperimentConfig, force: bool) -> Result<RunOutcome> {
    config.validate().map_err(|e| e.in_stage("config"))?;
    let layout = RunLayout::new(&config.output);
    fs::create_dir_all(&layout.root).map_err(|e| Error::io(&layout.root, e))?;
    let mut stages = StageLog::default();
    let scheme = config.scheme()?;

    let hash = ingest_hash(config).map_err(|e| e.in_stage("ingest"))?;
    let panel: PanelArtifact = cached_stage(
        "ingest",
        &layout.panel(),
        ArtifactKind::Panel,
        hash,
        force,
        &mut stages,
        || ingest(config),
    )?;
    let summary = describe_panel(&panel.panel).map_err(|e| e.in_stage("ingest"))?;
    write_text(&layout.describe(), &describe_csv(&summary, &panel.hierarchy))?;

    let hash = InputHasher::new()
        .part(PIPELINE_REVISION)
        .part(b"forecast")
        .part(&file_digest(&layout.panel())?)
        .part(&serde_json::to_vec(&(
            config.forecaster,
            config.refit_per_origin,
            config.train_fraction,
            &config.factors,
            config.base_step_minutes,
        ))?)
        .finish();
    let archive: ArchiveArtifact = cached_stage(
        "forecast",
        &layout.archive(),
        ArtifactKind::Archive,
        hash,
        force,
        &mut stages,
        || {
            let data = panel.multi_level(&scheme)?;
            let forecaster = config.forecaster.build(config.refit_per_origin);
            Ok(ArchiveArtifact {
                hierarchy: panel.hierarchy.clone(),
                archive: build_archive(&data, forecaster.as_ref(), config.train_fraction)?,
            })
        },
    )?;

    let reconcilers = config.parsed_reconcilers()?;
    let hash = InputHasher::new()
        .part(PIPELINE_REVISION)
        .part(b"reconcile")
        .part(&file_digest(&layout.archive())?)
        .part(&serde_json::to_vec(&reconcilers)?)
        .finish();
    let reconciled: ArchiveArtifact = cached_stage(
        "reconcile",
        &layout.reconciled(),
        ArtifactKind::Archive,
        hash,
        force,
        &mut stages,
        || {
            let mut out = archive.clone();
            out.archive.add_reconciled(&out.hierarchy, &reconcilers)?;
            Ok(out)
        },
    )?;
    write_text(&layout.audit(), &reconciled.archive.audit_csv())?;

    let report = evaluate(&reconciled.archive, &reconciled.hierarchy, config.alpha)
        .map_err(|e| e.in_stage("evaluate"))?;
    write_report(&report, &layout.report_dir()).map_err(|e| e.in_stage("evaluate"))?;
    Ok(RunOutcome {
        report,
        stages,
        layout,
    })
}
