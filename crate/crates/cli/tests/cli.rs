use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn coherent(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coherent"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = coherent(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Synthesizes and ingests a fig1 panel of `days` days, returning the panel artifact path.
fn ingested(dir: &Path, days: &str) -> std::path::PathBuf {
    ok(&["synth", "--days", days, "--seed", "3", "--out", p(dir)]);
    let panel = dir.join("panel.bin");
    let out = ok(&[
        "ingest",
        "--hierarchy",
        p(&dir.join("hierarchy.json")),
        "--panel",
        p(&dir.join("panel.csv")),
        "--out",
        p(&panel),
        "--describe",
        p(&dir.join("describe.csv")),
    ]);
    assert!(out.contains("7 nodes (4 bottom)"), "{out}");
    panel
}

#[test]
fn stage_commands_chain_into_a_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let panel = ingested(d, "3");
    assert!(fs::read_to_string(d.join("describe.csv")).unwrap().lines().count() == 5);

    let out = ok(&["features", "--panel", p(&panel), "--node", "A", "--factor", "6", "--out", p(&d.join("x.csv"))]);
    assert!(out.contains("x 58 features"), "{out}");

    let archive = d.join("archive.bin");
    let out = ok(&[
        "forecast", "--panel", p(&panel), "--forecaster", "naive", "--train-fraction", "0.9",
        "--out", p(&archive), "--csv", p(&d.join("archive.csv")),
    ]);
    assert!(out.contains("8 origins, 7 nodes, 12 slots per origin"), "{out}");
    assert_eq!(fs::read_to_string(d.join("archive.csv")).unwrap().lines().count(), 1 + 8 * 7 * 12);

    let bu = d.join("bu.bin");
    ok(&["reconcile", "--archive", p(&archive), "--method", "bu", "--out", p(&bu)]);
    let mo = d.join("mo.bin");
    ok(&["reconcile", "--archive", p(&bu), "--method", "mo", "--level", "1", "--out", p(&mo)]);
    let oct = d.join("oct.bin");
    let out = ok(&[
        "reconcile-ct", "--archive", p(&mo), "--method", "oct", "--out", p(&oct),
        "--audit", p(&d.join("audit.csv")),
    ]);
    assert!(out.starts_with("OCT: 8 origins reconciled"), "{out}");
    let ite = d.join("ite.bin");
    ok(&["reconcile-ct", "--archive", p(&oct), "--method", "ite", "--order", "cross-sectional-first", "--out", p(&ite)]);

    let report = d.join("report");
    let out = ok(&["evaluate", "--archive", p(&ite), "--out", p(&report)]);
    assert!(out.contains("Friedman"), "{out}");
    let table = fs::read_to_string(report.join("avg_rel_rmse.csv")).unwrap();
    for label in ["Naive-BU", "Naive-MO", "Naive-OCT", "Naive-ITE"] {
        assert!(table.contains(label), "{label} missing");
    }
    for file in ["rel_rmse.csv", "ranks.csv", "significance.txt"] {
        assert!(report.join(file).exists(), "{file}");
    }
}

#[test]
fn invalid_input_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let panel = ingested(d, "2");
    let archive = d.join("archive.bin");
    ok(&["forecast", "--panel", p(&panel), "--forecaster", "naive", "--out", p(&archive)]);

    let out = coherent(&["reconcile", "--archive", p(&archive), "--method", "mo", "--out", p(&d.join("x.bin"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("middle-out"));

    let out = coherent(&["evaluate", "--archive", p(&archive), "--alpha", "0.2", "--out", p(&d.join("r"))]);
    assert_eq!(out.status.code(), Some(2));

    // A panel artifact is not an archive.
    let out = coherent(&["evaluate", "--archive", p(&panel), "--out", p(&d.join("r"))]);
    assert_eq!(out.status.code(), Some(2));

    let out = coherent(&["forecast", "--panel", p(&panel), "--forecaster", "naive", "--factors", "1,4,6", "--out", p(&archive)]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn numerical_failure_exits_with_code_three() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let panel = ingested(d, "2");
    let out = coherent(&["forecast", "--panel", p(&panel), "--forecaster", "lr", "--out", p(&d.join("a.bin"))]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn run_reuses_stages_and_rejects_bad_configs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let config = d.join("exp.toml");
    fs::write(
        &config,
        "output = \"out\"\nforecaster = \"naive\"\nreconcilers = [\"bu\", \"oct\"]\n\n[synth]\nshape = \"fig1\"\ndays = 2\n",
    )
    .unwrap();
    let first = ok(&["run", "--config", p(&config)]);
    assert!(first.contains("computed: [\"ingest\", \"forecast\", \"reconcile\"]"), "{first}");
    let second = ok(&["run", "--config", p(&config)]);
    assert!(second.contains("computed: []"), "{second}");
    let forced = ok(&["run", "--config", p(&config), "--force"]);
    assert_eq!(forced, first);
    assert!(d.join("out/report/avg_rel_rmse.csv").exists());

    fs::write(&config, "output = \"out\"\nforecaster = \"naive\"\nreconcilers = [\"bogus\"]\n[synth]\nshape = \"fig1\"\ndays = 2\n").unwrap();
    assert_eq!(coherent(&["run", "--config", p(&config)]).status.code(), Some(2));
    assert_eq!(coherent(&["run", "--config", p(&d.join("missing.toml"))]).status.code(), Some(1));
}
