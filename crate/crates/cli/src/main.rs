use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use coherent_core::evaluate::{build_archive, evaluate, Reconciler, TagOptions};
use coherent_core::features::build_design_matrix;
use coherent_core::hierarchy::{HierarchySpec, TemporalScheme};
use coherent_core::ingest::{describe_csv, describe_panel};
use coherent_core::pipeline::artifact::{file_digest, read_artifact, write_artifact, ArtifactKind, InputHasher};
use coherent_core::pipeline::config::{ExperimentConfig, ForecasterKind};
use coherent_core::pipeline::synth::{panel_to_csv, synth_hierarchy, synth_panel, SynthConfig, SynthShape};
use coherent_core::pipeline::{run_experiment, write_report, ArchiveArtifact, PanelArtifact};
use coherent_core::reconcile_ct::IteOrder;
use coherent_core::{Error, Result};

#[derive(Parser)]
#[command(name = "coherent", version, about = "Hierarchical and cross-temporal forecast reconciliation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum CsArg {
    Bu,
    Td,
    Mo,
    Ols,
    Mint,
}

#[derive(Clone, Copy, ValueEnum)]
enum CtArg {
    Bu,
    Thf,
    Tcs,
    Cst,
    Ite,
    Oct,
}

#[derive(Clone, Copy, ValueEnum)]
enum ForecasterArg {
    Naive,
    Lr,
}

#[derive(Clone, Copy, ValueEnum)]
enum ShapeArg {
    Fig1,
    DatasetB,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrderArg {
    TemporalFirst,
    CrossSectionalFirst,
}

#[derive(Subcommand)]
enum Command {
    /// Load, validate and clean a turbine CSV into a panel artifact.
    Ingest {
        #[arg(long)]
        hierarchy: PathBuf,
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also write per-node power statistics as CSV.
        #[arg(long)]
        describe: Option<PathBuf>,
    },
    /// Write the regression design matrix of one node at one granularity.
    Features {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long)]
        node: String,
        #[arg(long, default_value_t = 1)]
        factor: u32,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,6")]
        factors: Vec<u32>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Produce base and benchmark forecasts for every test origin.
    Forecast {
        #[arg(long)]
        panel: PathBuf,
        #[arg(long, value_enum)]
        forecaster: ForecasterArg,
        #[arg(long, default_value_t = 0.9)]
        train_fraction: f64,
        #[arg(long, value_delimiter = ',', default_value = "1,2,3,6")]
        factors: Vec<u32>,
        #[arg(long)]
        refit_per_origin: bool,
        #[arg(long)]
        out: PathBuf,
        /// Also write the archive in long CSV format.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Cross-sectional reconciliation at every temporal level.
    Reconcile {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, value_enum)]
        method: CsArg,
        /// Anchor level for middle-out.
        #[arg(long)]
        level: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Cross-temporal reconciliation.
    ReconcileCt {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, value_enum)]
        method: CtArg,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
        #[arg(long, default_value_t = 100)]
        max_iter: usize,
        #[arg(long, value_enum, default_value = "temporal-first")]
        order: OrderArg,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        audit: Option<PathBuf>,
    },
    /// Score an archive and write the report files.
    Evaluate {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic hierarchy and turbine CSV.
    Synth {
        #[arg(long, value_enum, default_value = "fig1")]
        shape: ShapeArg,
        #[arg(long, default_value_t = 90)]
        days: u32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.002)]
        invalid_rate: f64,
        /// Directory receiving hierarchy.json and panel.csv.
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a full experiment from a TOML config.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Recompute every stage even when cached outputs match.
        #[arg(long)]
        force: bool,
    },
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn scheme(factors: &[u32]) -> Result<TemporalScheme> {
    TemporalScheme::new(10, factors)
}

fn reconcile_archive(archive: &Path, reconciler: Reconciler, out: &Path, audit: Option<&Path>) -> Result<()> {
    let (_, mut art): (_, ArchiveArtifact) = read_artifact(archive, ArtifactKind::Archive)?;
    art.archive.add_reconciled(&art.hierarchy, &[reconciler])?;
    let hash = InputHasher::new()
        .part(&file_digest(archive)?)
        .part(reconciler.label().as_bytes())
        .finish();
    write_artifact(out, ArtifactKind::Archive, &hash, &art)?;
    let last = art.archive.reconciled.last().expect("just added");
    let worst = last.audits.iter().map(|a| a.max()).fold(0.0, f64::max);
    println!(
        "{}: {} origins reconciled, max relative incoherence {worst:.3e}",
        reconciler.label(),
        last.audits.len()
    );
    if let Some(path) = audit {
        write_file(path, &art.archive.audit_csv())?;
    }
    Ok(())
}

fn execute(command: Command) -> Result<()> {
    match command {
        Command::Ingest {
            hierarchy,
            panel,
            out,
            describe,
        } => {
            let art = PanelArtifact::from_files(&hierarchy, &panel)?;
            let hash = InputHasher::new()
                .part(&file_digest(&hierarchy)?)
                .part(&file_digest(&panel)?)
                .finish();
            write_artifact(&out, ArtifactKind::Panel, &hash, &art)?;
            println!(
                "{} nodes ({} bottom), {} rows",
                art.hierarchy.m(),
                art.hierarchy.bottom_count(),
                art.panel.len()
            );
            if let Some(path) = describe {
                write_file(&path, &describe_csv(&describe_panel(&art.panel)?, &art.hierarchy))?;
            }
        }
        Command::Features {
            panel,
            node,
            factor,
            factors,
            out,
        } => {
            let (_, art): (_, PanelArtifact) = read_artifact(&panel, ArtifactKind::Panel)?;
            let data = art.multi_level(&scheme(&factors)?)?;
            let level = data
                .level(factor)
                .ok_or_else(|| Error::validation(format!("factor {factor} not in {factors:?}")))?;
            let n = level
                .node_position(&node)
                .ok_or_else(|| Error::validation(format!("unknown node `{node}`")))?;
            let design = build_design_matrix(level.wind_column(n), level.power_column(n), level.timestamps())?;
            write_file(&out, &design.to_csv())?;
            println!("{} rows x {} features", design.rows(), design.x.ncols());
        }
        Command::Forecast {
            panel,
            forecaster,
            train_fraction,
            factors,
            refit_per_origin,
            out,
            csv,
        } => {
            let (_, art): (_, PanelArtifact) = read_artifact(&panel, ArtifactKind::Panel)?;
            let data = art.multi_level(&scheme(&factors)?)?;
            let kind = match forecaster {
                ForecasterArg::Naive => ForecasterKind::Naive,
                ForecasterArg::Lr => ForecasterKind::Lr,
            };
            let archive = build_archive(&data, kind.build(refit_per_origin).as_ref(), train_fraction)?;
            let hash = InputHasher::new()
                .part(&file_digest(&panel)?)
                .part(format!("{kind:?}|{train_fraction}|{factors:?}|{refit_per_origin}").as_bytes())
                .finish();
            println!(
                "{} origins, {} nodes, {} slots per origin",
                archive.origin_windows.len(),
                archive.node_ids.len(),
                archive.scheme.slots_per_window()
            );
            if let Some(path) = csv {
                write_file(&path, &archive.to_csv())?;
            }
            write_artifact(
                &out,
                ArtifactKind::Archive,
                &hash,
                &ArchiveArtifact {
                    hierarchy: art.hierarchy,
                    archive,
                },
            )?;
        }
        Command::Reconcile {
            archive,
            method,
            level,
            out,
            audit,
        } => {
            let tag = match method {
                CsArg::Bu => "bu",
                CsArg::Td => "td",
                CsArg::Mo => "mo",
                CsArg::Ols => "ols",
                CsArg::Mint => "mint",
            };
            let options = TagOptions {
                mo_level: level,
                ..TagOptions::default()
            };
            reconcile_archive(&archive, Reconciler::from_tag(tag, &options)?, &out, audit.as_deref())?;
        }
        Command::ReconcileCt {
            archive,
            method,
            tol,
            max_iter,
            order,
            out,
            audit,
        } => {
            let tag = match method {
                CtArg::Bu => "bu-ct",
                CtArg::Thf => "thf",
                CtArg::Tcs => "tcs",
                CtArg::Cst => "cst",
                CtArg::Ite => "ite",
                CtArg::Oct => "oct",
            };
            let options = TagOptions {
                mo_level: None,
                ite_tol: tol,
                ite_max_iter: max_iter,
                ite_order: match order {
                    OrderArg::TemporalFirst => IteOrder::TemporalFirst,
                    OrderArg::CrossSectionalFirst => IteOrder::CrossSectionalFirst,
                },
            };
            reconcile_archive(&archive, Reconciler::from_tag(tag, &options)?, &out, audit.as_deref())?;
        }
        Command::Evaluate { archive, alpha, out } => {
            let (_, art): (_, ArchiveArtifact) = read_artifact(&archive, ArtifactKind::Archive)?;
            let report = evaluate(&art.archive, &art.hierarchy, alpha)?;
            write_report(&report, &out)?;
            print!("{}", report.significance_text());
        }
        Command::Synth {
            shape,
            days,
            seed,
            invalid_rate,
            out,
        } => {
            let shape = match shape {
                ShapeArg::Fig1 => SynthShape::Fig1,
                ShapeArg::DatasetB => SynthShape::DatasetB,
            };
            let spec: HierarchySpec = synth_hierarchy(shape);
            let config = SynthConfig {
                invalid_rate,
                ..SynthConfig::new(shape, days, seed)
            };
            let panel = synth_panel(&spec, &config)?;
            write_file(&out.join("hierarchy.json"), &spec.to_json_string())?;
            write_file(&out.join("panel.csv"), &panel_to_csv(&panel))?;
            println!(
                "{} nodes ({} bottom), {} rows written to {}",
                spec.m(),
                spec.bottom_count(),
                panel.len(),
                out.display()
            );
        }
        Command::Run { config, force } => {
            let config = ExperimentConfig::from_path(&config)?;
            let outcome = run_experiment(&config, force)?;
            println!(
                "computed: {:?}; reused: {:?}; report in {}",
                outcome.stages.computed,
                outcome.stages.reused,
                outcome.layout.report_dir().display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
