use std::fs;

use alterwave::config::RunConfig;
use alterwave::discretize::MeshPolicy;
use alterwave::experiments::*;
use proptest::prelude::*;

#[test]
fn config_files_load_and_name_bad_keys() {
    let dir = tempfile::tempdir().unwrap();
    let good = dir.path().join("run.json");
    fs::write(
        &good,
        r#"{"experiment": "dirichlet_resolvent",
            "sweep": {"epsilons": [0.2, 0.1], "regime": {"kind": "dirichlet", "eta": 0.3},
                      "mesh": {"kind": "graded", "n": 8}, "strip_length": 3.2},
            "output_dir": "out"}"#,
    )
    .unwrap();
    let cfg = RunConfig::from_path(&good).unwrap();
    assert_eq!(cfg.experiment, ExperimentKind::DirichletResolvent);
    assert_eq!(cfg.plan().unwrap().strip_length, 3.2);

    let bad = dir.path().join("bad.json");
    fs::write(&bad, fs::read_to_string(&good).unwrap().replace("\"n\": 8", "\"n\": 8, \"m\": 2")).unwrap();
    let msg = RunConfig::from_path(&bad).unwrap_err().to_string();
    assert!(msg.contains('m'), "{msg}");
}

#[test]
fn small_sweeps_write_the_documented_header() {
    let mut plan = SweepPlan::new(vec![0.2, 0.1], RegimeSpec::Dirichlet { eta: 0.3 }, MeshPolicy::Graded { n: 8 });
    plan.strip_length = std::f64::consts::PI;
    let recs = run_experiment(ExperimentKind::DirichletResolvent, &plan).unwrap();
    let mut buf = Vec::new();
    write_records_csv(&recs, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with(CSV_HEADER));
    assert_eq!(text.lines().count(), recs.len() + 1);
    assert!(recs.iter().all(|r| r.error >= 0.0));
    let summary = summarize(ExperimentKind::DirichletResolvent, &recs, 0, "t");
    assert!(summary.observables.iter().any(|o| o.name == "h1_dirichlet"));
}

proptest! {
    #[test]
    fn rate_fit_recovers_power_laws(slope in -1.0f64..4.0, scale in 1e-3f64..10.0) {
        let pts: Vec<(f64, f64)> = [0.2, 0.15, 0.1, 0.07, 0.05]
            .iter()
            .map(|&e: &f64| (e, scale * e.powf(slope)))
            .collect();
        let fit = rate_fit(&pts, None).unwrap();
        prop_assert!((fit.slope - slope).abs() < 1e-9);
        prop_assert!((fit.r2 - 1.0).abs() < 1e-9 || slope.abs() < 1e-6);
        prop_assert_eq!(fit.warning, slope.abs() < 0.1);
    }

    #[test]
    fn richardson_removes_linear_and_quadratic_terms(v in -5.0f64..5.0, a in -2.0f64..2.0, b in -2.0f64..2.0, h in 0.01f64..0.5) {
        let at = |s: f64| v + a * s + b * s * s;
        let x = richardson(&[at(h), at(h / 2.0), at(h / 4.0)]);
        prop_assert!((x - v).abs() < 1e-12 * (1.0 + v.abs() + a.abs() + b.abs()));
    }

    #[test]
    fn invalid_sweeps_are_rejected(e1 in 0.01f64..0.5, e2 in 0.01f64..0.5) {
        let plan = SweepPlan::new(vec![e1, e2], RegimeSpec::Robin { k: 10.0, mu0: 0.0 }, MeshPolicy::Graded { n: 8 });
        prop_assert_eq!(plan.validate().is_ok(), e1 > e2);
    }
}
