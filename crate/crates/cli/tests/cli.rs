use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

const WORLD: &str = r#"
seed = 11
persons = 30000
start = "2016Q1"
end = "2019Q3"

[baseline]
matrix = [
  [0.930, 0.010, 0.020, 0.010, 0.030],
  [0.020, 0.720, 0.110, 0.060, 0.090],
  [0.005, 0.020, 0.955, 0.005, 0.015],
  [0.030, 0.100, 0.050, 0.570, 0.250],
  [0.015, 0.025, 0.025, 0.040, 0.895],
]
"#;

fn lmflow(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmflow")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = lmflow(args);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Simulates the no-intervention world once per test directory.
fn world(dir: &Path) -> PathBuf {
    let cfg = dir.join("world.toml");
    fs::write(&cfg, WORLD).unwrap();
    let out = dir.join("world");
    ok(&["synth", "--config", s(&cfg), "--out", s(&out)]);
    out.join("panel.csv")
}

fn read_dir_sorted(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().into_string().unwrap(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn evaluate_args<'a>(panel: &'a str, out: &'a str, threads: &'a str) -> Vec<&'a str> {
    vec![
        "evaluate", "--input", panel, "--window", "2016Q1:2018Q3", "--tstar", "2018Q3", "--horizon", "4",
        "--population", "38000000", "--bootstrap", "100", "--seed", "42", "--out", out, "--threads", threads,
    ]
}

#[test]
fn evaluate_is_identical_across_thread_counts() {
    let dir = tempfile::tempdir().unwrap();
    let panel = world(dir.path());
    let a = dir.path().join("t1");
    let b = dir.path().join("t8");
    ok(&evaluate_args(s(&panel), s(&a), "1"));
    ok(&evaluate_args(s(&panel), s(&b), "8"));
    let files_a = read_dir_sorted(&a);
    assert_eq!(files_a, read_dir_sorted(&b));
    let names: Vec<&str> = files_a.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["effects.json", "table2a.csv", "table2b.csv", "table2c.csv", "series_TE-PE.csv"] {
        assert!(names.contains(&expected), "{names:?}");
    }
}

#[test]
fn stationary_world_shows_no_significant_counts() {
    let dir = tempfile::tempdir().unwrap();
    let panel = world(dir.path());
    let out = dir.path().join("eval");
    ok(&evaluate_args(s(&panel), s(&out), "1"));
    let report: Value = serde_json::from_slice(&fs::read(out.join("effects.json")).unwrap()).unwrap();
    let counts = report["count_diffs"].as_array().unwrap();
    assert_eq!(counts.len(), 5);
    assert!(counts.iter().all(|c| c["significant"] == false), "{counts:?}");
    let shares: f64 = report["share_diffs"].as_array().unwrap().iter().map(|d| d["estimate"].as_f64().unwrap()).sum();
    assert!(shares.abs() < 1e-8);
}

#[test]
fn missing_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let missing = dir.path().join("nope.csv");
    let res = lmflow(&evaluate_args(s(&missing), s(&out), "1"));
    assert_eq!(res.status.code(), Some(3));
    let err: Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(err["code"], "io");
    assert!(!out.exists());
}

#[test]
fn bad_flags_are_config_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never");
    let res = lmflow(&[
        "evaluate", "--input", "x.csv", "--window", "2016Q1:2018Q3", "--tstar", "2018Q2", "--population", "1",
        "--out", s(&out),
    ]);
    assert_eq!(res.status.code(), Some(2));
    let err: Value = serde_json::from_slice(&res.stderr).unwrap();
    assert_eq!(err["code"], "config");
    assert!(!out.exists());
}

#[test]
fn config_file_and_flag_override() {
    let dir = tempfile::tempdir().unwrap();
    let panel = world(dir.path());
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        format!(
            "input = {:?}\nwindow = \"2016Q1:2018Q3\"\npopulation = 1.0\nbootstrap = 0\nhorizon = 2\nout = {:?}\n",
            s(&panel),
            s(&dir.path().join("from_file"))
        ),
    )
    .unwrap();
    let flagged = dir.path().join("flagged");
    ok(&["evaluate", "--config", s(&cfg), "--horizon", "3", "--out", s(&flagged)]);
    let report: Value = serde_json::from_slice(&fs::read(flagged.join("effects.json")).unwrap()).unwrap();
    assert_eq!(report["meta"]["horizon"], 3);
    assert!(report["meta"]["bootstrap"].is_null());
    assert!(!dir.path().join("from_file").exists());
}

#[test]
fn zero_shift_reproduces_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let panel = world(dir.path());
    let eval = dir.path().join("eval");
    let shift = dir.path().join("shift");
    let common = [
        "--input", s(&panel), "--window", "2016Q1:2018Q3", "--population", "1", "--bootstrap", "0",
    ];
    ok(&[&["evaluate"], &common[..], &["--out", s(&eval)]].concat());
    ok(&[&["shift"], &common[..], &["--new-tstar", "2018Q3", "--out", s(&shift)]].concat());
    let base = fs::read(eval.join("effects.json")).unwrap();
    assert_eq!(base, fs::read(shift.join("original/effects.json")).unwrap());
    assert_eq!(base, fs::read(shift.join("shifted/effects.json")).unwrap());
    let too_far = lmflow(&[&["shift"], &common[..], &["--new-tstar", "2019Q1", "--out", s(&shift)]].concat());
    assert_eq!(too_far.status.code(), Some(2));
}

#[test]
fn placebo_on_stationary_world_passes() {
    let dir = tempfile::tempdir().unwrap();
    let panel = world(dir.path());
    let out = dir.path().join("placebo");
    ok(&[
        "placebo", "--input", s(&panel), "--window", "2016Q1:2017Q3", "--horizon", "3", "--true-tstar", "2018Q3",
        "--population", "38000000", "--bootstrap", "100", "--seed", "3", "--out", s(&out),
    ]);
    let report: Value = serde_json::from_slice(&fs::read(out.join("placebo.json")).unwrap()).unwrap();
    assert_eq!(report["pass"], true);
    let late = lmflow(&[
        "placebo", "--input", s(&panel), "--window", "2016Q1:2018Q1", "--horizon", "3", "--true-tstar", "2018Q3",
        "--population", "1", "--bootstrap", "0", "--out", s(&dir.path().join("late")),
    ]);
    assert_eq!(late.status.code(), Some(2));
}

#[test]
fn equilibrium_of_uniform_chain() {
    let dir = tempfile::tempdir().unwrap();
    let m = dir.path().join("m.csv");
    let third = 1.0 / 3.0;
    fs::write(&m, format!("from,T,P,U\nT,{third},{third},{third}\nP,{third},{third},{third}\nU,{third},{third},{third}\n")).unwrap();
    let out = dir.path().join("eq");
    let res = ok(&["equilibrium", "--input", s(&m), "--population", "300", "--out", s(&out)]);
    let stdout = String::from_utf8(res.stdout).unwrap();
    assert!(stdout.contains("closed-form unemployment share"));
    let report: Value = serde_json::from_slice(&fs::read(out.join("equilibrium.json")).unwrap()).unwrap();
    let pi_u = report["result"]["closed_form_pi_u"].as_f64().unwrap();
    assert!((pi_u - third).abs() < 1e-12);
    assert!((report["result"]["stocks"][2].as_f64().unwrap() - 100.0).abs() < 1e-9);

    let reducible = dir.path().join("r.csv");
    fs::write(&reducible, "from,T,P,U\nT,1,0,0\nP,0,1,0\nU,0,0,1\n").unwrap();
    let res = lmflow(&["equilibrium", "--input", s(&reducible)]);
    assert_eq!(res.status.code(), Some(7));
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("world.toml");
    fs::write(&cfg, WORLD).unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&["synth", "--config", s(&cfg), "--out", s(&a), "--persons", "2000", "--threads", "1"]);
    ok(&["synth", "--config", s(&cfg), "--out", s(&b), "--persons", "2000", "--threads", "4"]);
    assert_eq!(read_dir_sorted(&a), read_dir_sorted(&b));
    let truth: Value = serde_json::from_slice(&fs::read(a.join("truth.json")).unwrap()).unwrap();
    assert_eq!(truth["config"]["persons"], 2000);
    assert!(truth["effects"].is_null());
}
