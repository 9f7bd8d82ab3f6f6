use std::path::Path;
use std::process::{Command, Output};

use tnn_maxwell::bench::{square_mode_forms, tabulated_basis};
use tnn_maxwell::domains::DomainSpec;
use tnn_maxwell::training::{Adam, AdamParams, Checkpoint, TrainConfig};

const HEADER: &str = "k,lambda_nn,lambda_ref,rel_err,div_seminorm,curl_seminorm,rho,spurious";

fn run(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tnn-maxwell"))
        .args(args)
        .current_dir(dir)
        .env("TNN_THREADS", "1")
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let path = dir.join(name);
    std::fs::write(&path, body).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL_SQUARE: &str = r#"{
  "domain": "square",
  "tracked": 2,
  "steps": 0,
  "seed": 5,
  "model": {"rank": 3, "hidden": [8], "panels": 4, "points": 6}
}"#;

#[test]
fn solve_without_training_writes_one_row_per_pair() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_SQUARE);
    let out = run(&["solve", "--config", &cfg, "--output", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let csv = std::fs::read_to_string(dir.path().join("run/eigs.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some(HEADER));
    let rows: Vec<Vec<String>> = lines.map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(rows.len(), 3);
    for r in &rows {
        assert_eq!(r.len(), 8);
        let lambda: f64 = r[1].parse().unwrap();
        assert!(lambda.is_finite() && lambda > 0.0);
    }
}

#[test]
fn report_round_trips_through_config_loader() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "cfg.json", SMALL_SQUARE);
    assert!(run(&["solve", "--config", &cfg, "--output", "a"], dir.path()).status.success());
    let report = dir.path().join("a/report.json").to_string_lossy().into_owned();
    let out = run(&["solve", "--config", &report, "--output", "b"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let a = std::fs::read(dir.path().join("a/eigs.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/eigs.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn repeated_runs_are_identical() {
    let dir = tempfile::tempdir().unwrap();
    let body = SMALL_SQUARE.replace("\"steps\": 0", "\"steps\": 5");
    let cfg = write_config(dir.path(), "cfg.json", &body);
    for name in ["a", "b"] {
        let out = run(&["solve", "--config", &cfg, "--output", name], dir.path());
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    }
    let a = std::fs::read(dir.path().join("a/eigs.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b/eigs.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn config_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let unknown = write_config(dir.path(), "u.json", r#"{"domain": "nowhere", "tracked": 1, "steps": 0}"#);
    assert_eq!(run(&["solve", "--config", &unknown], dir.path()).status.code(), Some(2));
    let bad = write_config(dir.path(), "b.json", r#"{"domain": "square", "tracked": 99, "steps": 0}"#);
    assert_eq!(run(&["solve", "--config", &bad], dir.path()).status.code(), Some(2));
    let garbage = write_config(dir.path(), "g.json", "not json");
    assert_eq!(run(&["solve", "--config", &garbage], dir.path()).status.code(), Some(2));
    let dim = write_config(dir.path(), "d.json", r#"{"domain": "square", "dim": 3, "tracked": 1, "steps": 0}"#);
    assert_eq!(run(&["solve", "--config", &dim], dir.path()).status.code(), Some(2));
    let missing = dir.path().join("none.json").to_string_lossy().into_owned();
    assert_eq!(run(&["solve", "--config", &missing], dir.path()).status.code(), Some(2));
}

#[test]
fn unknown_suite_exits_with_two() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(&["bench", "--suite", "moon"], dir.path()).status.code(), Some(2));
}

fn e11_checkpoint(path: &Path) {
    let domain = DomainSpec::builtin("square").unwrap();
    let field = tabulated_basis(&[square_mode_forms(1, 1)]).unwrap();
    let config = TrainConfig {
        tracked: 1,
        steps: 0,
        ..TrainConfig::default()
    };
    let checkpoint = Checkpoint {
        domain,
        config,
        step: 0,
        fields: vec![field],
        adam: Adam::new(0, AdamParams::default()),
        loss_history: Vec::new(),
        logs: Vec::new(),
    };
    checkpoint.save(path).unwrap();
}

fn read_field(path: &Path) -> Vec<Vec<f64>> {
    let text = std::fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("x1,x2,E1,E2,normE"));
    lines
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect()
}

#[test]
fn exported_e11_norm_is_symmetric() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck.json");
    e11_checkpoint(&ck);
    let ck = ck.to_string_lossy().into_owned();
    let out = run(
        &["export-field", "--checkpoint", &ck, "--index", "1", "--resolution", "64", "--output", "f.csv"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_field(&dir.path().join("f.csv"));
    assert_eq!(rows.len(), 64 * 64);
    let n = 64;
    for i in 0..n {
        for j in 0..n {
            let a = rows[i * n + j][4];
            let b = rows[j * n + i][4];
            assert!((a - b).abs() <= 1e-12 * (1.0 + a.abs()));
        }
    }
    assert!(rows.iter().all(|r| r[4].is_finite()));
}

#[test]
fn export_index_out_of_range_fails() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("ck.json");
    e11_checkpoint(&ck);
    let ck = ck.to_string_lossy().into_owned();
    let out = run(&["export-field", "--checkpoint", &ck, "--index", "2", "--resolution", "8"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["export-field", "--checkpoint", &ck, "--index", "0", "--resolution", "8"], dir.path());
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn lshape_export_skips_excluded_quadrant() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "cfg.json",
        r#"{"domain": "lshape2d", "tracked": 1, "steps": 0,
            "model": {"rank": 2, "hidden": [6], "panels": 4, "points": 4}}"#,
    );
    let out = run(&["solve", "--config", &cfg, "--output", "run"], dir.path());
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let ck = dir.path().join("run/checkpoint.json").to_string_lossy().into_owned();
    let out = run(
        &["export-field", "--checkpoint", &ck, "--index", "1", "--resolution", "16", "--raw"],
        dir.path(),
    );
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = read_field(&dir.path().join("field.csv"));
    assert_eq!(rows.len(), 16 * 16 * 3 / 4);
    assert!(rows.iter().all(|r| !(r[0] > 0.0 && r[1] < 0.0)));
}
