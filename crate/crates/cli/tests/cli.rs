use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tsci_cli::report::from_json;
use tsci_core::simlab::{generate, Scenario};
use tsci_core::Aggregation;

const GOLDEN: &str = "tests/golden/report_extended.txt";

fn write_csv(dir: &Path, scenario: Scenario, n: usize, seed: u64) -> PathBuf {
    let (ds, _) = generate(&scenario.spec(n, seed)).unwrap();
    let mut text = String::from("y,d,z1,x1,x2\n");
    for i in 0..ds.n() {
        text.push_str(&format!(
            "{},{},{},{},{}\n",
            ds.y[i],
            ds.d[i],
            ds.z[(i, 0)],
            ds.x[(i, 0)],
            ds.x[(i, 1)]
        ));
    }
    let path = dir.join("data.csv");
    std::fs::write(&path, text).unwrap();
    path
}

fn tsci(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_tsci"))
        .args(args)
        .output()
        .unwrap()
}

fn base<'a>(csv: &'a Path) -> Vec<&'a str> {
    vec![
        "--input",
        csv.to_str().unwrap(),
        "--y",
        "y",
        "--d",
        "d",
        "--z",
        "z1",
        "--x",
        "x1,x2",
    ]
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn help_exits_zero() {
    let o = tsci(&["--help"]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("--vio"));
}

#[test]
fn bad_split_prop_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), Scenario::A, 200, 1);
    let mut args = base(&csv);
    args.extend(["--split-prop", "1.5"]);
    let o = tsci(&args);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("split"));
}

#[test]
fn missing_column_is_a_validation_error() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), Scenario::A, 200, 1);
    let o = tsci(&[
        "--input",
        csv.to_str().unwrap(),
        "--y",
        "y",
        "--d",
        "educ",
        "--z",
        "z1",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("educ"));
}

#[test]
fn missing_input_file_is_reported() {
    let o = tsci(&[
        "--input",
        "/nonexistent/data.csv",
        "--y",
        "y",
        "--d",
        "d",
        "--z",
        "z1",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn json_output_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), Scenario::B, 600, 3);
    let out = dir.path().join("r.json");
    let mut args = base(&csv);
    args.extend([
        "--vio",
        "monomials:2",
        "--nsplits",
        "2",
        "--num-trees",
        "40",
        "--out",
        out.to_str().unwrap(),
    ]);
    let o = tsci(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = std::fs::read_to_string(&out).unwrap();
    let r = from_json(&text).unwrap();
    assert_eq!(r.nsplits, 2);
    assert_eq!(r.aggregation, Aggregation::Fwer);
    assert!(r.se.is_none());
    assert_eq!(tsci_cli::report::to_json(&r).unwrap(), text);
    assert!(stdout(&o).contains("Aggregation method: FWER"));
}

#[test]
fn polynomial_learner_skips_splitting() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), Scenario::B, 400, 4);
    let mut args = base(&csv);
    args.extend(["--learner", "poly", "--vio", "monomials:2"]);
    let o = tsci(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    assert!(text.contains("No sample splitting was performed."));
    assert!(text.contains("Sample size: 400"));
}

#[test]
fn user_weight_matrix_run() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), Scenario::A, 150, 5);
    let (ds, _) = generate(&Scenario::A.spec(150, 5)).unwrap();
    // design [1, z, z^2, x1, x2]
    let mut text = String::new();
    for i in 0..ds.n() {
        let z = ds.z[(i, 0)];
        text.push_str(&format!(
            "1,{z},{},{},{}\n",
            z * z,
            ds.x[(i, 0)],
            ds.x[(i, 1)]
        ));
    }
    let wm = dir.path().join("design.csv");
    std::fs::write(&wm, text).unwrap();
    let mut args = base(&csv);
    args.extend([
        "--weight-matrix",
        wm.to_str().unwrap(),
        "--vio",
        "monomials:1",
    ]);
    let o = tsci(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("No sample splitting was performed."));
}

#[test]
fn config_file_with_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), Scenario::B, 400, 6);
    let cfg = dir.path().join("run.toml");
    std::fs::write(
        &cfg,
        format!(
            "input = \"{}\"\ny = \"y\"\nd = \"d\"\nz = [\"z1\"]\nx = [\"x1\", \"x2\"]\nvio = \"monomials:2\"\nlearner = \"poly\"\nsel_method = \"conservative\"\n",
            csv.display()
        ),
    )
    .unwrap();
    let o = tsci(&[
        "--config",
        cfg.to_str().unwrap(),
        "--sel-method",
        "comparison",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("Selection method: comparison"));
}

#[test]
fn extended_report_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write_csv(dir.path(), Scenario::B, 400, 7);
    let mut args = base(&csv);
    args.extend([
        "--learner",
        "poly",
        "--vio",
        "monomials:2",
        "--seed",
        "7",
        "--extended",
    ]);
    let o = tsci(&args);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    if std::env::var_os("TSCI_UPDATE_GOLDEN").is_some() {
        std::fs::write(GOLDEN, &text).unwrap();
    }
    let golden = std::fs::read_to_string(GOLDEN).unwrap();
    assert_eq!(text, golden);
}

#[test]
fn simulator_small_run() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("sim.csv");
    let o = Command::new(env!("CARGO_BIN_EXE_tsci-sim"))
        .args([
            "--scenario",
            "A",
            "--n",
            "600",
            "--reps",
            "2",
            "--nsplits",
            "2",
            "--num-trees",
            "40",
        ])
        .args(["--out", out.to_str().unwrap()])
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let csv = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "rep,beta_hat,se,ci_lo,ci_hi,q_comp,covered");
    assert_eq!(lines.len(), 3);
}
