use std::f64::consts::{FRAC_PI_2, LN_2, PI};

use alterwave::specfun::*;
use proptest::prelude::*;

fn pt(x: f64, y: f64) -> PlanePoint {
    PlanePoint::new(x, y).unwrap()
}

fn ctl() -> SeriesControl {
    SeriesControl::new(1_000_000, 1e-14).unwrap()
}

#[test]
fn boundary_layer_has_unit_outward_flux_off_the_lattice() {
    let h = 1e-5;
    for x in [0.3, 0.9, 1.5, 2.4] {
        let d = (-3.0 * eval_x(pt(x, 0.0)).unwrap() + 4.0 * eval_x(pt(x, h)).unwrap()
            - eval_x(pt(x, 2.0 * h)).unwrap())
            / (2.0 * h);
        assert!((d + 1.0).abs() < 1e-6, "x = {x}: {d}");
    }
}

#[test]
fn inner_function_grows_logarithmically() {
    for r in [50.0, 200.0] {
        for ang in [0.3f64, 1.2, 2.5] {
            let v = eval_y(pt(r * ang.cos(), r * ang.sin())).unwrap();
            assert!((v - r.ln() - LN_2).abs() < 1.0 / (r * r), "r = {r}");
        }
    }
}

#[test]
fn dirichlet_limit_layer_decays_and_matches_the_plain_layer_far_away() {
    let eta = 0.4;
    let far = eval_x_eta(pt(0.7, 6.0), eta).unwrap();
    assert!(far.abs() < 1e-4);
    let gap = (far - eval_x(pt(0.7, 6.0)).unwrap()).abs();
    assert!(gap < 1e-4);
}

proptest! {
    #[test]
    fn boundary_layer_is_even_and_periodic(x in -3.0f64..3.0, y in 0.01f64..4.0) {
        let v = eval_x(pt(x, y)).unwrap();
        prop_assert!((v - eval_x(pt(-x, y)).unwrap()).abs() < 1e-12);
        prop_assert!((v - eval_x(pt(x + PI, y)).unwrap()).abs() < 1e-11);
    }

    #[test]
    fn closed_form_and_series_agree_within_the_tail(x in -FRAC_PI_2..FRAC_PI_2, y in 0.05f64..3.0) {
        let s = eval_x_series(pt(x, y), ctl()).unwrap();
        let d = (s.value - eval_x(pt(x, y)).unwrap()).abs();
        prop_assert!(d <= s.tail_bound + 1e-14);
    }

    #[test]
    fn accelerated_layer_agrees_with_raw_series(
        x in -FRAC_PI_2..FRAC_PI_2,
        y in 0.2f64..2.0,
        eps_b in -0.5f64..0.5,
        beta in 0.0f64..1.0,
    ) {
        let c = SeriesControl::new(200_000, 1e-13).unwrap();
        let raw = eval_z(pt(x, y), eps_b, beta, c).unwrap();
        let acc = eval_z_accelerated(pt(x, y), eps_b, beta, c).unwrap();
        prop_assert!((raw.value - acc.value).abs() <= raw.tail_bound + acc.tail_bound + 1e-12);
    }

    #[test]
    fn inner_function_vanishes_on_the_gap_and_is_even(s in -0.99f64..0.99, x in -4.0f64..4.0, y in 0.05f64..4.0) {
        prop_assert_eq!(eval_y(pt(s, 0.0)).unwrap(), 0.0);
        let a = eval_y(pt(x, y)).unwrap();
        prop_assert!((a - eval_y(pt(-x, y)).unwrap()).abs() < 1e-12);
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn dirichlet_limit_layer_takes_its_boundary_value(eta in 0.05f64..1.5, t in 0.0f64..0.999) {
        let v = eval_x_eta(pt(t * eta, 0.0), eta).unwrap();
        prop_assert!((v - eta.sin().ln()).abs() < 1e-12);
    }

    #[test]
    fn theta_tail_bound_is_small_and_odd_part_flips(t1 in -1.5f64..1.5, t2 in -3.0f64..3.0) {
        prop_assume!((4.0 - t2).sqrt() - t1.abs() > 0.1);
        let v = eval_theta(ThetaArguments { t1, t2 }, ctl()).unwrap();
        prop_assert!(v.value.is_finite());
        prop_assert!(v.tail_bound <= 1e-13);
    }
}
