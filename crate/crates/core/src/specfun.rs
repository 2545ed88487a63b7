//! Special functions of the half-plane problems: the periodic boundary layer
//! `X`, the single-gap inner function `Y` and its first-order companion, the
//! Dirichlet-limit layer `X_η`, the Helmholtz-type layer `Z` and the
//! coefficient series `θ`.
//!
//! Points closer than `1e-8` to a logarithmic or square-root singularity are
//! rejected with [`Error::Domain`]; callers switch to the asymptotic forms
//! explicitly.

use std::f64::consts::{FRAC_PI_2, LN_2, PI};

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Apéry's constant ζ(3).
pub const ZETA3: f64 = 1.202_056_903_159_594_2;

const SINGULAR_RADIUS: f64 = 1e-8;

/// Minimum partial-sum length for the accelerated `θ` evaluation; the
/// Euler–Maclaurin tails below are accurate to 1e-17 from here on.
const THETA_MIN_TERMS: usize = 50;

/// A point of the closed upper half-plane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlanePoint {
    x: f64,
    y: f64,
}

impl PlanePoint {
    pub fn new(x: f64, y: f64) -> Result<Self> {
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::Precondition(format!("non-finite point ({x}, {y})")));
        }
        if y < 0.0 {
            return Err(Error::Precondition(format!(
                "point ({x}, {y}) lies below the half-plane"
            )));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    fn z(&self) -> Complex64 {
        Complex64::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesControl {
    max_terms: usize,
    tail_target: f64,
}

impl SeriesControl {
    pub fn new(max_terms: usize, tail_target: f64) -> Result<Self> {
        if max_terms == 0 {
            return Err(Error::Precondition("series needs at least one term".into()));
        }
        if !(tail_target > 0.0) {
            return Err(Error::Precondition(format!(
                "tail target must be positive, got {tail_target}"
            )));
        }
        Ok(Self {
            max_terms,
            tail_target,
        })
    }

    pub fn max_terms(&self) -> usize {
        self.max_terms
    }

    pub fn tail_target(&self) -> f64 {
        self.tail_target
    }
}

impl Default for SeriesControl {
    fn default() -> Self {
        Self {
            max_terms: 1_000_000,
            tail_target: 1e-14,
        }
    }
}

/// A truncated series value with a rigorous bound on the neglected tail.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SeriesValue {
    pub value: f64,
    pub tail_bound: f64,
    pub terms: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThetaArguments {
    pub t1: f64,
    pub t2: f64,
}

/// Smallest `n` in `[lo, max]` with `bound(n) <= target`, or `max` if none.
/// `bound` must be nonincreasing.
fn terms_needed(lo: usize, max: usize, target: f64, bound: impl Fn(usize) -> f64) -> usize {
    if bound(lo) <= target || lo >= max {
        return lo.min(max);
    }
    let mut hi = lo;
    let mut step = 1usize;
    let mut last_bad = lo;
    loop {
        hi = hi.saturating_add(step).min(max);
        if bound(hi) <= target {
            break;
        }
        last_bad = hi;
        if hi == max {
            return max;
        }
        step = step.saturating_mul(2);
    }
    let (mut a, mut b) = (last_bad, hi);
    while b - a > 1 {
        let m = a + (b - a) / 2;
        if bound(m) <= target {
            b = m;
        } else {
            a = m;
        }
    }
    b
}

/// `c · Σ_{n>N} r^n / n ≤ c · r^{N+1} / ((N+1)(1−r))`.
fn geometric_tail(c: f64, r: f64, n: usize) -> f64 {
    let m = (n + 1) as f64;
    c * (m * r.ln()).exp() / (m * (1.0 - r))
}

/// Upper bound of `Σ_{n>N} r^n / n^p` for `p ≥ 2`, `0 ≤ r ≤ 1`.
fn power_tail(r: f64, p: i32, n: usize) -> f64 {
    let m = (n + 1) as f64;
    let plain = 1.0 / ((p - 1) as f64 * (n as f64).powi(p - 1));
    if r < 1.0 {
        let geo = (m * r.ln()).exp() / (m.powi(p) * (1.0 - r));
        plain.min(geo)
    } else {
        plain
    }
}

fn check_lattice(p: PlanePoint, what: &'static str) -> Result<()> {
    let j = (p.x / PI).round();
    let dx = p.x - PI * j;
    if dx.hypot(p.y) < SINGULAR_RADIUS {
        return Err(Error::Domain {
            what,
            x: p.x,
            y: p.y,
            sx: PI * j,
            sy: 0.0,
        });
    }
    Ok(())
}

fn check_corners(p: PlanePoint, what: &'static str) -> Result<()> {
    for sx in [-1.0, 1.0] {
        if (p.x - sx).hypot(p.y) < SINGULAR_RADIUS {
            return Err(Error::Domain {
                what,
                x: p.x,
                y: p.y,
                sx,
                sy: 0.0,
            });
        }
    }
    Ok(())
}

/// `X(ξ) = Re ln sin(ξ₁ + iξ₂) + ln 2 − ξ₂`, the periodic boundary layer.
///
/// Harmonic in the half-plane, `∂X/∂ξ₂ = −1` on the boundary away from `πℤ`,
/// logarithmic at the lattice points `(πj, 0)` and `O(e^{−2ξ₂})` at infinity.
pub fn eval_x(p: PlanePoint) -> Result<f64> {
    check_lattice(p, "boundary layer X")?;
    Ok(x_unchecked(p.x, p.y))
}

/// `½ ln |1 − e^{2i(ξ₁+iξ₂)}|²` evaluated without cancellation.
fn x_unchecked(x: f64, y: f64) -> f64 {
    let q = (-2.0 * y).exp();
    if q < 0.5 {
        0.5 * (q * (q - 2.0 * (2.0 * x).cos())).ln_1p()
    } else {
        let one_minus_q = -(-2.0 * y).exp_m1();
        let s = x.sin();
        0.5 * (one_minus_q * one_minus_q + 4.0 * q * s * s).ln()
    }
}

/// Fourier series `−Σ (1/n) e^{−2nξ₂} cos 2nξ₁` of `X`.
pub fn eval_x_series(p: PlanePoint, ctl: SeriesControl) -> Result<SeriesValue> {
    if p.y <= 0.0 {
        return Err(Error::Truncation {
            terms: ctl.max_terms,
            bound: f64::INFINITY,
            target: ctl.tail_target,
        });
    }
    let r = (-2.0 * p.y).exp();
    let n_terms = terms_needed(1, ctl.max_terms, ctl.tail_target, |n| {
        geometric_tail(1.0, r, n)
    });
    let mut sum = 0.0;
    for n in 1..=n_terms {
        let nf = n as f64;
        let e = (-(2.0 * nf) * p.y).exp();
        sum += -(e / nf) * (2.0 * nf * p.x).cos();
    }
    Ok(SeriesValue {
        value: sum,
        tail_bound: geometric_tail(1.0, r, n_terms),
        terms: n_terms,
    })
}

/// Matching form of `X` near the lattice point `(πj, 0)`:
/// `ln|ξ − (πj, 0)| + ln 2 − ξ₂`. Differs from `X` by `O(r²)`.
pub fn eval_x_asym(p: PlanePoint, j: i64) -> Result<f64> {
    let cx = PI * j as f64;
    let r = (p.x - cx).hypot(p.y);
    if r >= 0.5 {
        return Err(Error::Precondition(format!(
            "asymptotic form used at distance {r} ≥ 0.5 from ({cx}, 0)"
        )));
    }
    if r < SINGULAR_RADIUS {
        return Err(Error::Domain {
            what: "boundary layer asymptotics",
            x: p.x,
            y: p.y,
            sx: cx,
            sy: 0.0,
        });
    }
    Ok(r.ln() + LN_2 - p.y)
}

/// `w = z + √(z−1)·√(z+1)`; maps the closed upper half-plane minus the
/// segment onto the exterior of the unit disc, with `|w| = 1` on the segment.
fn joukowski_inverse(z: Complex64) -> (Complex64, Complex64) {
    let root = (z - 1.0).sqrt() * (z + 1.0).sqrt();
    (z + root, root)
}

fn nonneg_zero(v: f64) -> f64 {
    if v == 0.0 {
        0.0
    } else {
        v
    }
}

/// `Y(ς) = Re ln(z + √(z²−1))`, `z = ς₁ + iς₂`: harmonic, zero on the gap
/// `|ς₁| < 1`, Neumann outside it, `ln|ς| + ln 2 + O(|ς|⁻²)` at infinity.
pub fn eval_y(p: PlanePoint) -> Result<f64> {
    check_corners(p, "inner function Y")?;
    let (w, _) = joukowski_inverse(p.z());
    if p.y == 0.0 && p.x.abs() < 1.0 {
        return Ok(0.0);
    }
    Ok(w.norm().ln())
}

/// Explicit part of the first-order inner function:
/// `ς₁·Im ln w − Im √(z²−1) − (π/2)ς₁` with `w` as in [`eval_y`].
///
/// Solves `ΔY₁ = −2 ∂Y/∂ς₂` with homogeneous Neumann data outside the gap.
pub fn eval_y1_leading(p: PlanePoint) -> Result<f64> {
    check_corners(p, "inner function Y1")?;
    let (w, root) = joukowski_inverse(p.z());
    let arg = nonneg_zero(w.im).atan2(w.re);
    Ok(p.x * arg - nonneg_zero(root.im) - FRAC_PI_2 * p.x)
}

/// Dirichlet-limit layer
/// `X_η(ξ) = Re ln(sin ρ + √(sin²ρ − sin²η)) − ξ₂`, `ρ = ξ₁ + iξ₂`.
///
/// Equals `ln sin η` on `|ξ₁| < η`, has Neumann derivative `−1` on the rest of
/// the boundary period and satisfies `|X_η| ≤ |ln sin η|`.
pub fn eval_x_eta(p: PlanePoint, eta: f64) -> Result<f64> {
    if !(eta > 0.0 && eta < FRAC_PI_2) {
        return Err(Error::Parameter(format!("eta = {eta} outside (0, π/2)")));
    }
    let a = eta.sin();
    if p.y > 300.0 {
        return Ok(x_unchecked(p.x, p.y));
    }
    let w = Complex64::new(p.x.sin() * p.y.cosh(), p.x.cos() * p.y.sinh());
    if w.norm() > 2.0 {
        let ratio = Complex64::new(a, 0.0) / w;
        let tail = (Complex64::new(1.0, 0.0) - ratio * ratio).sqrt() + 1.0;
        return Ok(x_unchecked(p.x, p.y) - LN_2 + tail.norm().ln());
    }
    let root = (w - a).sqrt() * (w + a).sqrt();
    Ok((w + root).norm().ln() - p.y)
}

struct LayerCoefficients {
    sigma: f64,
    denom: f64,
}

fn layer_coefficients(eps_b: f64, beta: f64) -> Result<LayerCoefficients> {
    if !(beta.abs() < 2.0) || !eps_b.is_finite() {
        return Err(Error::Parameter(format!(
            "layer series needs |beta| < 2, got beta = {beta}, eps_b = {eps_b}"
        )));
    }
    let sigma = (4.0 - beta * beta).sqrt();
    let denom = if eps_b >= 0.0 {
        sigma
    } else {
        sigma - eps_b.abs()
    };
    if !(denom > 0.0) {
        return Err(Error::Parameter(format!(
            "layer series diverges: sqrt(4 - beta^2) + eps_b = {} ≤ 0",
            sigma + eps_b
        )));
    }
    Ok(LayerCoefficients { sigma, denom })
}

/// Helmholtz-type layer
/// `Z = −Σ 2 e^{−s_n ξ₂} cos 2nξ₁ / (s_n + εb)`, `s_n = √(4n² − β²)`.
///
/// Each term solves `−ΔZ − β²Z = 0`; on the boundary `(∂₂ − εb)Z = −1` away
/// from the lattice. The raw series needs `ξ₂ > 0`; see
/// [`eval_z_accelerated`] for boundary points.
pub fn eval_z(p: PlanePoint, eps_b: f64, beta: f64, ctl: SeriesControl) -> Result<SeriesValue> {
    let lc = layer_coefficients(eps_b, beta)?;
    if p.y <= 0.0 {
        return Err(Error::Truncation {
            terms: ctl.max_terms,
            bound: f64::INFINITY,
            target: ctl.tail_target,
        });
    }
    let r = (-lc.sigma * p.y).exp();
    let c = 2.0 / lc.denom;
    let n_terms = terms_needed(1, ctl.max_terms, ctl.tail_target, |n| {
        geometric_tail(c, r, n)
    });
    let b2 = beta * beta;
    let mut sum = 0.0;
    for n in 1..=n_terms {
        let nf = n as f64;
        let s = (4.0 * nf * nf - b2).sqrt();
        let e = (-s * p.y).exp();
        sum += -((2.0 * e) / (s + eps_b)) * (2.0 * nf * p.x).cos();
    }
    Ok(SeriesValue {
        value: sum,
        tail_bound: geometric_tail(c, r, n_terms),
        terms: n_terms,
    })
}

/// `Z` written as `X` plus the absolutely convergent difference series
/// `Σ [e^{−2nξ₂}/n − 2e^{−s_nξ₂}/(s_n+εb)] cos 2nξ₁`; valid on `ξ₂ ≥ 0` off
/// the lattice.
pub fn eval_z_accelerated(
    p: PlanePoint,
    eps_b: f64,
    beta: f64,
    ctl: SeriesControl,
) -> Result<SeriesValue> {
    let lc = layer_coefficients(eps_b, beta)?;
    check_lattice(p, "layer Z")?;
    let b2 = beta * beta;
    let r = (-lc.sigma * p.y).exp();
    let c2 = eps_b.abs() / lc.denom + 0.5 * b2 * p.y;
    let c3 = b2 / (2.0 * lc.denom);
    let bound = |n: usize| c2 * power_tail(r, 2, n) + c3 * power_tail(r, 3, n);
    let n_terms = terms_needed(1, ctl.max_terms, ctl.tail_target, bound);
    let mut sum = 0.0;
    for n in 1..=n_terms {
        let nf = n as f64;
        let s = (4.0 * nf * nf - b2).sqrt();
        let d = (-(2.0 * nf) * p.y).exp() / nf - 2.0 * (-s * p.y).exp() / (s + eps_b);
        sum += d * (2.0 * nf * p.x).cos();
    }
    Ok(SeriesValue {
        value: x_unchecked(p.x, p.y) + sum,
        tail_bound: bound(n_terms),
        terms: n_terms,
    })
}

/// `Σ_{n>N} n⁻²` by Euler–Maclaurin, accurate to 1e-17 for `N ≥ 50`.
fn zeta2_tail(n: usize) -> f64 {
    let x = n as f64;
    let x2 = x * x;
    1.0 / x - 0.5 / x2 + 1.0 / (6.0 * x2 * x) - 1.0 / (30.0 * x2 * x2 * x)
        + 1.0 / (42.0 * x2 * x2 * x2 * x)
}

/// `Σ_{n>N} n⁻³` by Euler–Maclaurin, accurate to 1e-17 for `N ≥ 50`.
fn zeta3_tail(n: usize) -> f64 {
    let x = n as f64;
    let x2 = x * x;
    0.5 / x2 - 0.5 / (x2 * x) + 0.25 / (x2 * x2) - 1.0 / (12.0 * x2 * x2 * x2)
        + 1.0 / (12.0 * x2 * x2 * x2 * x2)
}

/// The coefficient series
/// `θ(t₁,t₂) = 2t₁ Σ 1/(n(s_n+2n+t₁)) − (t₂+t₁²) Σ 1/(n(s_n+t₁)(s_n+2n+t₁))`,
/// `s_n = √(4n² − t₂)`.
///
/// The partial sum is completed by the exact `n⁻²`, `n⁻³` asymptotic tails;
/// the reported bound covers the remaining `O(n⁻⁴)` terms.
pub fn eval_theta(args: ThetaArguments, ctl: SeriesControl) -> Result<SeriesValue> {
    let ThetaArguments { t1, t2 } = args;
    if !(t2.abs() < 4.0 && t1.abs() < 2.0) {
        return Err(Error::Parameter(format!(
            "theta needs |t1| < 2 and |t2| < 4, got ({t1}, {t2})"
        )));
    }
    if !((4.0 - t2).sqrt() + t1 > 0.0) {
        return Err(Error::Parameter(format!(
            "theta denominator s_1 + t1 = {} is not positive",
            (4.0 - t2).sqrt() + t1
        )));
    }
    if ctl.max_terms < THETA_MIN_TERMS {
        return Err(Error::Precondition(format!(
            "theta needs at least {THETA_MIN_TERMS} terms, got {}",
            ctl.max_terms
        )));
    }
    if t1 == 0.0 && t2 == 0.0 {
        return Ok(SeriesValue {
            value: 0.0,
            tail_bound: 0.0,
            terms: 0,
        });
    }
    let a = (t1.abs() + t2.abs() / 3.0) / 4.0;
    let c = t2 + t1 * t1;
    let big_b = 0.5 * t1.abs() * (t2.abs() / 12.0 + 2.0 * a * a)
        + c.abs() * (12.0 * a + 8.0 * a * a) / 8.0;
    let bound = |n: usize| {
        let m = (n + 1) as f64;
        big_b * (1.0 / m.powi(4) + 1.0 / (3.0 * m.powi(3))) + 1e-17 * (t1.abs() + c.abs())
    };
    let n_terms = terms_needed(THETA_MIN_TERMS, ctl.max_terms, ctl.tail_target, bound);
    let mut first = 0.0;
    let mut second = 0.0;
    for n in (1..=n_terms).rev() {
        let nf = n as f64;
        let s = (4.0 * nf * nf - t2).sqrt();
        first += 1.0 / (nf * (s + 2.0 * nf + t1));
        second += 1.0 / (nf * (s + t1) * (s + 2.0 * nf + t1));
    }
    let partial = 2.0 * t1 * first - c * second;
    let tail = 0.5 * t1 * zeta2_tail(n_terms) - (2.0 * t1 * t1 + t2) / 8.0 * zeta3_tail(n_terms);
    Ok(SeriesValue {
        value: partial + tail,
        tail_bound: bound(n_terms),
        terms: n_terms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(x: f64, y: f64) -> PlanePoint {
        PlanePoint::new(x, y).unwrap()
    }

    #[test]
    fn x_reference_values() {
        assert!((eval_x(pt(FRAC_PI_2, 0.0)).unwrap() - LN_2).abs() < 1e-15);
        // Closed-form oracle: ½ ln(1 − 2q cos 2ξ₁ + q²), q = e^{−2ξ₂}.
        let q = (-1.4f64).exp();
        let oracle = 0.5 * (1.0 - 2.0 * q * 0.6f64.cos() + q * q).ln();
        let v = eval_x(pt(0.3, 0.7)).unwrap();
        assert!((v - oracle).abs() < 1e-14);
        assert!((v + 0.2125).abs() < 5e-4);
        let far = eval_x(pt(0.0, 5.0)).unwrap();
        assert!((far - (-(-10.0f64).exp()).ln_1p()).abs() < 1e-19);
        assert!((far + 4.54e-5).abs() < 1e-7);
    }

    #[test]
    fn x_rejects_lattice_points_with_location() {
        match eval_x(pt(PI, 0.0)) {
            Err(Error::Domain { sx, .. }) => assert!((sx - PI).abs() < 1e-15),
            other => panic!("unexpected {other:?}"),
        }
        assert!(eval_x(pt(-2.0 * PI + 1e-9, 0.0)).is_err());
    }

    #[test]
    fn x_series_matches_closed_form() {
        let ctl = SeriesControl::new(50, 1e-300).unwrap();
        let s = eval_x_series(pt(0.3, 0.7), ctl).unwrap();
        assert_eq!(s.terms, 50);
        assert!((s.value - eval_x(pt(0.3, 0.7)).unwrap()).abs() < 1e-12);
        let ctl = SeriesControl::new(100_000, 1e-10).unwrap();
        let s = eval_x_series(pt(FRAC_PI_2, 0.1), ctl).unwrap();
        assert!(s.tail_bound <= 1e-10);
        assert!((s.value - eval_x(pt(FRAC_PI_2, 0.1)).unwrap()).abs() < 1e-10);
    }

    #[test]
    fn series_control_rejects_zero_terms() {
        assert!(matches!(
            SeriesControl::new(0, 1e-10),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn x_series_on_boundary_is_truncation_error() {
        let ctl = SeriesControl::new(1000, 1e-10).unwrap();
        assert!(matches!(
            eval_x_series(pt(0.5, 0.0), ctl),
            Err(Error::Truncation { .. })
        ));
    }

    #[test]
    fn x_asymptotic_form() {
        let v = eval_x_asym(pt(0.01, 0.0), 0).unwrap();
        assert!((v - (0.01f64.ln() + LN_2)).abs() < 1e-15);
        let v = eval_x_asym(pt(0.0, 0.01), 0).unwrap();
        assert!((v + 3.922).abs() < 1e-3);
        let gap = |r: f64| (eval_x(pt(r, 0.0)).unwrap() - eval_x_asym(pt(r, 0.0), 0).unwrap()).abs();
        let ratio = gap(0.1) / gap(0.05);
        assert!((ratio - 4.0).abs() < 0.1, "ratio {ratio}");
        assert!(eval_x_asym(pt(0.6, 0.0), 0).is_err());
        assert!(eval_x_asym(pt(PI + 0.1, 0.1), 1).is_ok());
    }

    #[test]
    fn y_reference_values() {
        assert_eq!(eval_y(pt(0.5, 0.0)).unwrap(), 0.0);
        assert!((eval_y(pt(3.0, 0.0)).unwrap() - (3.0 + 8f64.sqrt()).ln()).abs() < 1e-14);
        assert!((eval_y(pt(0.0, 1.0)).unwrap() - (1.0 + 2f64.sqrt()).ln()).abs() < 1e-14);
        assert!((eval_y(pt(-3.0, 0.0)).unwrap() - (3.0 + 8f64.sqrt()).ln()).abs() < 1e-14);
        assert!(eval_y(pt(1.0, 0.0)).is_err());
        assert!(eval_y(pt(-1.0, 5e-9)).is_err());
    }

    #[test]
    fn y_continuous_into_the_gap() {
        let v = eval_y(pt(0.5, 1e-12)).unwrap();
        assert!(v.abs() < 1e-11);
        let v = eval_y(pt(0.999, 1e-7)).unwrap();
        assert!(v.abs() < 1e-4);
    }

    #[test]
    fn y1_reference_values() {
        assert!((eval_y1_leading(pt(2.0, 0.0)).unwrap() + PI).abs() < 1e-14);
        let r = 1e4;
        let v = eval_y1_leading(pt(0.0, r)).unwrap();
        assert!((v + (r * r + 1.0).sqrt()).abs() < 1e-8);
        // On the negative axis the argument is π: −ς₁·(π − π/2) − 0.
        let v = eval_y1_leading(pt(-3.0, 0.0)).unwrap();
        assert!((v - (-3.0 * PI + 1.5 * PI)).abs() < 1e-12);
    }

    #[test]
    fn y1_neumann_outside_gap() {
        for &x in &[-4.0, -1.5, 1.3, 2.0, 7.0] {
            let h = 1e-6;
            let d = (eval_y1_leading(pt(x, h)).unwrap() - eval_y1_leading(pt(x, 0.0)).unwrap()) / h;
            assert!(d.abs() < 1e-4, "x = {x}: {d}");
        }
    }

    #[test]
    fn x_eta_reference_values() {
        let v = eval_x_eta(pt(0.3, 0.0), 0.5).unwrap();
        assert!((v - 0.5f64.sin().ln()).abs() < 1e-14);
        let v = eval_x_eta(pt(FRAC_PI_2, 0.0), 0.5).unwrap();
        assert!((v - (1.0 + 0.5f64.cos()).ln()).abs() < 1e-14);
        assert!((v - 0.6300).abs() < 1e-4);
        assert!(eval_x_eta(pt(0.0, 1.0), FRAC_PI_2).is_err());
        assert!(eval_x_eta(pt(0.0, 1.0), 0.0).is_err());
    }

    #[test]
    fn x_eta_branch_switch_is_continuous() {
        // |sin ρ| crosses 2 near ξ₂ = asinh 2 at ξ₁ = 0.
        let y0 = 2f64.asinh();
        for &x in &[0.0, 0.4, 1.2, 2.5] {
            let lo = eval_x_eta(pt(x, y0 - 1e-9), 0.7).unwrap();
            let hi = eval_x_eta(pt(x, y0 + 1e-9), 0.7).unwrap();
            assert!((lo - hi).abs() < 1e-8, "x = {x}");
        }
        let a = eval_x_eta(pt(0.3, 299.0), 0.7).unwrap();
        let b = eval_x_eta(pt(0.3, 301.0), 0.7).unwrap();
        assert!(a.abs() < 1e-200 && b.abs() < 1e-200);
    }

    #[test]
    fn z_reduces_to_x_series_bitwise() {
        let ctl = SeriesControl::new(10_000, 1e-15).unwrap();
        for &(x, y) in &[(0.3, 0.7), (1.1, 0.05), (-2.0, 1.5)] {
            let z = eval_z(pt(x, y), 0.0, 0.0, ctl).unwrap();
            let s = eval_x_series(pt(x, y), ctl).unwrap();
            assert_eq!(z.value.to_bits(), s.value.to_bits());
            assert_eq!(z.terms, s.terms);
        }
    }

    #[test]
    fn z_accelerated_agrees_with_raw_series() {
        let ctl = SeriesControl::new(200_000, 1e-13).unwrap();
        for &(x, y) in &[(0.0, 1.0), (0.7, 0.2), (1.4, 0.05)] {
            let raw = eval_z(pt(x, y), 0.01, 0.1, ctl).unwrap();
            let acc = eval_z_accelerated(pt(x, y), 0.01, 0.1, ctl).unwrap();
            assert!(
                (raw.value - acc.value).abs() <= raw.tail_bound + acc.tail_bound + 1e-13,
                "({x}, {y})"
            );
        }
    }

    #[test]
    fn z_direct_sum_oracle() {
        // 200-term direct summation at (0, 1).
        let (eb, beta) = (0.01, 0.1f64);
        let mut direct = 0.0;
        for n in 1..=200 {
            let s = (4.0 * (n * n) as f64 - beta * beta).sqrt();
            direct += -2.0 * (-s).exp() / (s + eb);
        }
        let ctl = SeriesControl::new(1000, 1e-15).unwrap();
        let v = eval_z(pt(0.0, 1.0), eb, beta, ctl).unwrap();
        assert!((v.value - direct).abs() <= v.tail_bound + 1e-15);
    }

    #[test]
    fn z_parameter_errors() {
        let ctl = SeriesControl::default();
        assert!(matches!(
            eval_z(pt(0.0, 1.0), 0.0, 2.0, ctl),
            Err(Error::Parameter(_))
        ));
        assert!(matches!(
            eval_z(pt(0.0, 1.0), -2.5, 0.0, ctl),
            Err(Error::Parameter(_))
        ));
    }

    #[test]
    fn z_robin_trace() {
        // (∂₂ − εb)Z = −1 on the boundary away from the lattice.
        let ctl = SeriesControl::new(2_000_000, 1e-12).unwrap();
        let (eb, beta) = (0.2, 0.5);
        let x = 0.9;
        let h = 1e-4;
        let f = |y: f64| eval_z_accelerated(pt(x, y), eb, beta, ctl).unwrap().value;
        let d = (-3.0 * f(0.0) + 4.0 * f(h) - f(2.0 * h)) / (2.0 * h);
        assert!((d - eb * f(0.0) + 1.0).abs() < 1e-5, "{}", d - eb * f(0.0));
    }

    #[test]
    fn theta_origin_and_derivatives() {
        let ctl = SeriesControl::default();
        let th = |t1, t2| eval_theta(ThetaArguments { t1, t2 }, ctl).unwrap().value;
        assert_eq!(th(0.0, 0.0), 0.0);
        let h = 1e-5;
        let d1 = (th(h, 0.0) - th(-h, 0.0)) / (2.0 * h);
        let d2 = (th(0.0, h) - th(0.0, -h)) / (2.0 * h);
        assert!((d1 - PI * PI / 12.0).abs() < 1e-8);
        assert!((d2 + ZETA3 / 8.0).abs() < 1e-8);
    }

    #[test]
    fn theta_matches_long_direct_sum() {
        // Direct summation to 2·10⁶ terms plus a crude 1/N tail estimate.
        let (t1, t2) = (0.3, 1.2f64);
        let mut direct = 0.0;
        let n_max = 2_000_000;
        for n in (1..=n_max).rev() {
            let nf = n as f64;
            let s = (4.0 * nf * nf - t2).sqrt();
            direct += 2.0 * t1 / (nf * (s + 2.0 * nf + t1))
                - (t2 + t1 * t1) / (nf * (s + t1) * (s + 2.0 * nf + t1));
        }
        direct += 0.5 * t1 / n_max as f64;
        let v = eval_theta(ThetaArguments { t1, t2 }, SeriesControl::default()).unwrap();
        assert!((v.value - direct).abs() < 1e-11, "{} vs {}", v.value, direct);
        assert!(v.tail_bound <= 1e-14);
    }

    #[test]
    fn theta_domain_errors() {
        let ctl = SeriesControl::default();
        assert!(eval_theta(ThetaArguments { t1: 0.0, t2: 4.0 }, ctl).is_err());
        assert!(eval_theta(ThetaArguments { t1: 2.0, t2: 0.0 }, ctl).is_err());
        assert!(eval_theta(ThetaArguments { t1: -1.0, t2: 3.9 }, ctl).is_err());
        let short = SeriesControl::new(10, 1e-12).unwrap();
        assert!(eval_theta(ThetaArguments { t1: 0.1, t2: 0.0 }, short).is_err());
    }
}
