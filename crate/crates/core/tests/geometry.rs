use std::f64::consts::PI;

use alterwave::geometry::*;
use proptest::prelude::*;

#[test]
fn periodic_geometries_pass_validation() {
    for (eps, eta) in [(0.2, 0.3), (0.05, 0.01), (0.1, 0.7)] {
        let g = build_periodic_geometry(eps, eta, Regime::Dirichlet).unwrap();
        let r = validate_assumptions(&g, 64);
        assert!(r.passed(), "{eps} {eta}: {:?}", r.failures);
    }
}

#[test]
fn documents_report_the_offending_key() {
    let err = GeometryDocument::from_json_str(r#"{"epsilon":0.1,"eta":0.3,"regime":"robin"}"#)
        .unwrap()
        .build()
        .unwrap_err()
        .to_string();
    assert!(err.contains("`K`"), "{err}");
    let err = GeometryDocument::from_json_str(r#"{"epsilon":0.1,"eta":0.3,"regime":"dirichlet","etta":1}"#)
        .unwrap_err()
        .to_string();
    assert!(err.contains("etta"), "{err}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn periodic_classification_repeats_every_cell(eps in 0.02f64..0.3, eta in 0.01f64..1.5, t in -3.0f64..3.0, j in -5i64..5) {
        let g = build_periodic_geometry(eps, eta, Regime::Robin { k: 1.0 }).unwrap();
        let x = eps * t;
        let a = classify_bottom_boundary(&g, x);
        let b = classify_bottom_boundary(&g, x + eps * PI * j as f64);
        prop_assert_eq!(matches!(a, BoundaryClass::Robin), matches!(b, BoundaryClass::Robin));
    }

    #[test]
    fn warped_documents_round_trip(eps in 0.05f64..0.3, eta in 0.05f64..0.5, delta in -0.6f64..0.6, seed in 0u64..1000) {
        let g = build_warped_geometry(eps, eta, delta, seed, Regime::Dirichlet).unwrap();
        let text = GeometryDocument::from_geometry(&g).to_json_string().unwrap();
        let back = GeometryDocument::from_json_str(&text).unwrap().build().unwrap();
        for j in -20..=20 {
            let (a, b) = (g.segment_bounds(j), back.segment_bounds(j));
            prop_assert!((a.0 - b.0).abs() <= 1e-14 * a.0.abs().max(1.0));
            prop_assert!((a.1 - b.1).abs() <= 1e-14 * a.1.abs().max(1.0));
        }
    }

    #[test]
    fn segments_are_ordered_and_disjoint(eps in 0.05f64..0.3, eta in 0.05f64..0.5, delta in -0.6f64..0.6, seed in 0u64..1000) {
        let g = build_warped_geometry(eps, eta, delta, seed, Regime::Dirichlet).unwrap();
        let r = validate_assumptions(&g, 32);
        for j in -20..20 {
            let (l, r0) = g.segment_bounds(j);
            let (l1, _) = g.segment_bounds(j + 1);
            prop_assert!(l < r0);
            if r.passed() {
                prop_assert!(r0 < l1);
            }
        }
    }
}
