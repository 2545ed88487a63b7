use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn alterwave(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_alterwave"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn value_line(o: &Output) -> f64 {
    let s = stdout(o);
    let line = s.lines().find(|l| l.starts_with("value")).expect("value line");
    line.split_whitespace().nth(1).unwrap().parse().unwrap()
}

const BAND: &str = r#"{
  "experiment": "band_sweep",
  "sweep": {
    "epsilons": [0.2, 0.15, 0.1],
    "regime": {"kind": "robin", "K": 10.0},
    "mesh": {"kind": "graded", "n": 16},
    "taus": [0.0, 0.25]
  },
  "output_dir": "out",
  "seed": 11
}"#;

#[test]
fn specfun_reference_points() {
    let dir = tempfile::tempdir().unwrap();
    let x = alterwave(&["specfun", "X", "1.5708", "0"], dir.path());
    assert!(x.status.success());
    assert!((value_line(&x) - 2f64.ln()).abs() < 1e-6);
    let t = alterwave(&["specfun", "theta", "0", "0"], dir.path());
    assert!(t.status.success());
    assert_eq!(value_line(&t), 0.0);
    let y = alterwave(&["specfun", "Y", "3", "0"], dir.path());
    assert!((value_line(&y) - 1.762747).abs() < 1e-6);
    assert!(stdout(&y).contains("branch"));
}

#[test]
fn specfun_accepts_negative_arguments_and_rejects_bad_points() {
    let dir = tempfile::tempdir().unwrap();
    let ok = alterwave(&["specfun", "X", "-0.7", "0.2"], dir.path());
    assert!(ok.status.success(), "{}", String::from_utf8_lossy(&ok.stderr));
    let bad = alterwave(&["specfun", "X", "0.3", "-0.2"], dir.path());
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("half-plane"));
}

#[test]
fn model_lambda_lists_increasing_roots() {
    let dir = tempfile::tempdir().unwrap();
    let o = alterwave(&["model", "lambda", "--b", "1", "--K", "5", "--n", "4"], dir.path());
    assert!(o.status.success());
    let vals: Vec<f64> = stdout(&o)
        .lines()
        .skip(1)
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert_eq!(vals.len(), 4);
    assert!(vals.windows(2).all(|w| w[0] < w[1]));
}

#[test]
fn geometry_validate_sets_exit_status() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("good.json");
    fs::write(&good, r#"{"epsilon":0.1,"eta":0.3,"regime":"dirichlet","delta":0.3,"seed":7}"#).unwrap();
    let o = alterwave(&["geometry", "validate", "good.json"], dir.path());
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).contains("valid"));

    let bad = dir.path().join("bad.json");
    fs::write(
        &bad,
        r#"{"epsilon":0.1,"eta":0.3,"regime":"dirichlet","half_lengths":[{"j":0,"minus":0.5,"plus":3.0}]}"#,
    )
    .unwrap();
    let o = alterwave(&["geometry", "validate", "bad.json"], dir.path());
    assert!(!o.status.success());
}

#[test]
fn run_is_byte_identical_across_reruns() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("band.json"), BAND).unwrap();
    let first = alterwave(&["run", "band.json"], dir.path());
    assert!(first.status.success(), "{}", String::from_utf8_lossy(&first.stderr));
    let a = fs::read(dir.path().join("out/band.csv")).unwrap();
    let rates: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("out/rates.json")).unwrap()).unwrap();
    assert_eq!(rates["seed"], 11);
    assert!(rates["timestamp"].is_string());
    let second = alterwave(&["run", "band.json"], dir.path());
    assert!(second.status.success());
    let b = fs::read(dir.path().join("out/band.csv")).unwrap();
    assert_eq!(a, b);
    assert!(String::from_utf8_lossy(&a).starts_with("epsilon,tau,observable"));
}

#[test]
fn malformed_config_names_the_key() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("a.json"), BAND.replace("\"taus\"", "\"tau_grid\"")).unwrap();
    let o = alterwave(&["run", "a.json"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("tau_grid"));

    fs::write(dir.path().join("b.json"), BAND.replace("[0.2, 0.15, 0.1]", "[0.1, -0.2]")).unwrap();
    let o = alterwave(&["run", "b.json"], dir.path());
    assert!(!o.status.success());
    assert!(String::from_utf8_lossy(&o.stderr).contains("sweep.epsilons"));
    assert!(!dir.path().join("out").exists());
}
