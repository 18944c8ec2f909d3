use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use matfactor::io::load_panel;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_matfactor"))
}

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data").join(name)
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_shape(path: &Path) -> (usize, usize) {
    let text = fs::read_to_string(path).unwrap();
    let lines: Vec<_> = text.lines().skip(1).collect();
    (lines.len(), lines[0].split(',').count() - 1)
}

#[test]
fn toy_panel_has_expected_shape() {
    let panel = load_panel(data("toy_panel.csv")).unwrap();
    assert_eq!(panel.series.rows(), 16);
    assert_eq!(panel.series.cols(), 10);
    assert_eq!(panel.series.len(), 181);
    let missing = 1.0 - matfactor::panel::observed_fraction(&panel.series);
    assert!(missing > 0.05 && missing < 0.2, "{missing}");
}

#[test]
fn ranks_prints_both_spectra() {
    let panel = data("toy_panel.csv");
    let tf = data("toy_transforms.csv");
    let out = run(&["ranks", path_str(&panel), "--transforms", path_str(&tf)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let text = String::from_utf8(out.stdout).unwrap();
    let rows = text.lines().filter(|l| l.starts_with("row,")).count();
    let cols = text.lines().filter(|l| l.starts_with("column,")).count();
    assert_eq!((rows, cols), (16, 10));
    let last = text.lines().last().unwrap();
    assert!(last.starts_with("selected k_hat="), "{last}");
    // the fixture is built from two row and two column factors
    assert_eq!(last, "selected k_hat=2 r_hat=2");
}

#[test]
fn estimate_with_forced_ranks_writes_loadings() {
    let dir = tempfile::tempdir().unwrap();
    let panel = data("toy_panel.csv");
    let tf = data("toy_transforms.csv");
    let out = run(&[
        "estimate",
        path_str(&panel),
        "--transforms",
        path_str(&tf),
        "--ranks",
        "2,2",
        "--varimax",
        "--out",
        path_str(dir.path()),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert_eq!(csv_shape(&dir.path().join("row_loadings.csv")), (16, 2));
    assert_eq!(csv_shape(&dir.path().join("col_loadings.csv")), (10, 2));
    assert_eq!(csv_shape(&dir.path().join("row_loadings_varimax.csv")), (16, 2));
    // 179 periods after the second differences, 2 x 2 factors each
    let factors = fs::read_to_string(dir.path().join("factors.csv")).unwrap();
    assert_eq!(factors.lines().count(), 1 + 179 * 4);
    let meta: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("metadata.json")).unwrap()).unwrap();
    assert_eq!(meta["periods"], 179);
    assert_eq!(meta["periods_dropped_by_transforms"], 2);
}

#[test]
fn repeated_runs_are_byte_identical() {
    let panel = data("toy_panel.csv");
    let tf = data("toy_transforms.csv");
    let outputs: Vec<_> = (0..2)
        .map(|_| {
            let dir = tempfile::tempdir().unwrap();
            let out = run(&["estimate", path_str(&panel), "--transforms", path_str(&tf), "--out", path_str(dir.path())]);
            assert!(out.status.success());
            ["row_loadings.csv", "col_loadings.csv", "factors.csv", "metadata.json"]
                .map(|f| fs::read(dir.path().join(f)).unwrap())
        })
        .collect();
    assert_eq!(outputs[0], outputs[1]);
}

#[test]
fn impute_fills_every_cell() {
    let dir = tempfile::tempdir().unwrap();
    let panel = data("toy_panel.csv");
    let out = run(&["impute", path_str(&panel), "--ranks", "2,2", "--out", path_str(dir.path())]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let imputed = load_panel(dir.path().join("imputed.csv")).unwrap();
    assert_eq!(imputed.series.observed_count(), 16 * 10 * 181);
    let original = load_panel(&panel).unwrap();
    for t in [0, 90, 180] {
        for i in 0..16 {
            for j in 0..10 {
                if let Some(v) = original.series.get(t, i, j) {
                    assert_eq!(imputed.series.get(t, i, j), Some(v));
                }
            }
        }
    }
}

#[test]
fn demean_before_log_transform_is_rejected() {
    let panel = data("toy_panel.csv");
    let tf = data("toy_transforms.csv");
    let out = run(&["ranks", path_str(&panel), "--transforms", path_str(&tf), "--demean-stage", "before-transform"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "NonPositiveForLog");
}

#[test]
fn simulate_smoke_run_writes_all_files() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("smoke.json");
    let out_dir = dir.path().join("out");
    let cfg = serde_json::json!({
        "simulation": {
            "setting": {"kind": "s1"},
            "a": 12, "b": 10, "t": 20,
            "pattern": {"kind": "I", "rate": 0.75},
            "reps": 10,
            "seed": 7
        },
        "output": {"dir": out_dir}
    });
    fs::write(&config, cfg.to_string()).unwrap();
    let out = run(&["simulate", "--config", path_str(&config)]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    for f in ["report.json", "tab0.csv", "tab2.csv", "boxplot.csv", "boxplot_summary.csv", "qq.csv", "normality.csv"] {
        assert!(out_dir.join(f).is_file(), "missing {f}");
    }
    // ten draws are too few for the normality tables
    let qq = run(&["qqdata", "--report", path_str(&out_dir.join("report.json")), "--out", path_str(dir.path())]);
    assert_eq!(qq.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&qq.stderr).unwrap();
    assert_eq!(err["error"], "TooFewReplications");
}

#[test]
fn missing_file_reports_json_error() {
    let out = run(&["ranks", "/nonexistent/panel.csv"]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "Io");
}

#[test]
fn duplicate_cell_reports_json_error() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("dup.csv");
    fs::write(&path, "t,row_id,col_id,value\n1,A,x,1.0\n1,A,x,2.0\n").unwrap();
    let out = run(&["ranks", path_str(&path)]);
    assert_eq!(out.status.code(), Some(1));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "DuplicateCell");
}

#[test]
fn bad_arguments_exit_with_usage() {
    let out = run(&["estimate", "x.csv", "--ranks", "two"]);
    assert_eq!(out.status.code(), Some(2));
    let err: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "Usage");
}

#[test]
fn simulate_without_config_is_a_usage_error() {
    let out = run(&["simulate"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["qqdata"]);
    assert_eq!(out.status.code(), Some(2));
}
