//! The smooth cut-off `χ`: one on `t ≤ 1/4`, zero on `t ≥ 3/4`, C² in between.

pub fn chi(t: f64) -> f64 {
    if t <= 0.25 {
        1.0
    } else if t >= 0.75 {
        0.0
    } else {
        let u = (t - 0.25) * 2.0;
        1.0 - u * u * u * (10.0 - 15.0 * u + 6.0 * u * u)
    }
}

pub fn chi_derivative(t: f64) -> f64 {
    if t <= 0.25 || t >= 0.75 {
        0.0
    } else {
        let u = (t - 0.25) * 2.0;
        -60.0 * u * u * (1.0 - u) * (1.0 - u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plateaus_and_midpoint() {
        assert_eq!(chi(0.0), 1.0);
        assert_eq!(chi(0.25), 1.0);
        assert_eq!(chi(0.75), 0.0);
        assert_eq!(chi(5.0), 0.0);
        assert!((chi(0.5) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn derivative_matches_difference_quotient() {
        for &t in &[0.3, 0.41, 0.5, 0.66, 0.74] {
            let h = 1e-6;
            let fd = (chi(t + h) - chi(t - h)) / (2.0 * h);
            assert!((fd - chi_derivative(t)).abs() < 1e-6, "t = {t}");
        }
    }

    #[test]
    fn monotone_nonincreasing() {
        let mut prev = chi(0.0);
        for k in 1..=1000 {
            let v = chi(k as f64 / 1000.0);
            assert!(v <= prev);
            prev = v;
        }
    }
}
