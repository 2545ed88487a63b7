//! The one-dimensional homogenized model `Q = −d²/dx₂²` on `(0, π)` with
//! `u(π) = 0` and `u'(0) = c·u(0)`, `c = b + K + μ`.
//!
//! Besides its spectrum and resolvent this module solves the corrected
//! bottom-of-spectrum equation
//!
//! ```text
//! (√Λ cos √Λπ + c sin √Λπ)(1 − εkθ(εb, ε²Λ)) + εk²θ(εb, ε²Λ) sin √Λπ = 0,   k = K + μ,
//! ```
//!
//! and fits its expansion in powers of `ε`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::specfun::{eval_theta, SeriesControl, ThetaArguments, ZETA3};

/// Robin data of the homogenized model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobinCoefficient {
    b: f64,
    k: f64,
    mu: f64,
}

impl RobinCoefficient {
    pub fn new(b: f64, k: f64, mu: f64) -> Result<Self> {
        if !(b.is_finite() && k.is_finite() && mu.is_finite()) {
            return Err(Error::Parameter(format!(
                "non-finite Robin data b = {b}, K = {k}, mu = {mu}"
            )));
        }
        if k < 0.0 || mu < 0.0 {
            return Err(Error::Parameter(format!(
                "K and mu must be nonnegative, got K = {k}, mu = {mu}"
            )));
        }
        Ok(Self { b, k, mu })
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn k(&self) -> f64 {
        self.k
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    /// `K + μ`, the strength of the homogenized Robin term.
    pub fn strength(&self) -> f64 {
        self.k + self.mu
    }

    /// `c = b + K + μ`.
    pub fn combined(&self) -> f64 {
        self.b + self.k + self.mu
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelEigenvalue {
    pub index: usize,
    pub value: f64,
    /// `|√Λ cos √Λπ + c sin √Λπ| / (1 + |c|)`, or the hyperbolic analogue
    /// divided by `cosh κπ` on the negative branch.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MuSchedule {
    pub mu: f64,
    /// `μ > 1`: the geometry is far from the asymptotic Robin regime.
    pub out_of_range: bool,
}

/// `μ = −1/(ε ln η) − K`.
pub fn mu_schedule(eps: f64, eta: f64, k: f64) -> Result<MuSchedule> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {eps}")));
    }
    if !(eta > 0.0 && eta < 1.0) {
        return Err(Error::Parameter(format!("eta = {eta} outside (0, 1)")));
    }
    if !(k >= 0.0) {
        return Err(Error::Parameter(format!("K must be nonnegative, got {k}")));
    }
    let total = -1.0 / (eps * eta.ln());
    let mu = total - k;
    if mu < -1e-12 * total.max(1.0) {
        return Err(Error::Regime(format!(
            "-1/(eps ln eta) = {total} is below K = {k}: eta too small for the Robin regime"
        )));
    }
    let mu = mu.max(0.0);
    Ok(MuSchedule {
        mu,
        out_of_range: mu > 1.0,
    })
}

/// Inverse of the schedule: `η = exp(−1/(ε(K + μ₀)))`.
pub fn eta_for(eps: f64, k: f64, mu0: f64) -> Result<f64> {
    if !(eps > 0.0) || !(k + mu0 > 0.0) || mu0 < 0.0 || k < 0.0 {
        return Err(Error::Parameter(format!(
            "schedule inversion needs eps > 0, K, mu0 ≥ 0 and K + mu0 > 0 (eps = {eps}, K = {k}, mu0 = {mu0})"
        )));
    }
    Ok((-1.0 / (eps * (k + mu0))).exp())
}

/// `cos(πs) + c·sin(πs)/s`; its positive zeros are the `√Λ_n`.
fn reduced(s: f64, c: f64) -> f64 {
    (PI * s).cos() + c * sin_over(s)
}

/// `sin(πs)/s`, continuous at zero.
fn sin_over(s: f64) -> f64 {
    if s.abs() < 1e-8 {
        PI * (1.0 - (PI * s).powi(2) / 6.0)
    } else {
        (PI * s).sin() / s
    }
}

fn reduced_derivative(s: f64, c: f64) -> f64 {
    let ps = PI * s;
    let dsin_over = if s.abs() < 1e-4 {
        -PI.powi(3) * s / 3.0
    } else {
        (ps * ps.cos() - ps.sin()) / (s * s)
    };
    -PI * ps.sin() + c * dsin_over
}

/// Bisection of a sign change of `f` on `[lo, hi]` to width `width`.
fn bisect(mut f: impl FnMut(f64) -> f64, mut lo: f64, mut hi: f64, width: f64) -> Option<f64> {
    let mut flo = f(lo);
    let fhi = f(hi);
    if flo == 0.0 {
        return Some(lo);
    }
    if fhi == 0.0 {
        return Some(hi);
    }
    if flo.signum() == fhi.signum() || !flo.is_finite() || !fhi.is_finite() {
        return None;
    }
    while hi - lo > width {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if fm == 0.0 {
            return Some(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Newton polish of a bracketed root, never leaving the bracket.
fn polish(
    f: impl Fn(f64) -> f64,
    df: impl Fn(f64) -> f64,
    mut x: f64,
    lo: f64,
    hi: f64,
) -> f64 {
    for _ in 0..8 {
        let d = df(x);
        if d == 0.0 || !d.is_finite() {
            break;
        }
        let next = x - f(x) / d;
        if !(next >= lo && next <= hi) {
            break;
        }
        if (next - x).abs() <= 1e-16 * x.abs().max(1.0) {
            x = next;
            break;
        }
        x = next;
    }
    x
}

/// The `n`-th eigenvalue of the model operator.
pub fn lambda_n(coeff: RobinCoefficient, n: usize, tol: f64) -> Result<ModelEigenvalue> {
    if n == 0 {
        return Err(Error::Precondition("eigenvalue index starts at 1".into()));
    }
    if !(tol > 0.0) {
        return Err(Error::Precondition(format!("tolerance must be positive, got {tol}")));
    }
    let c = coeff.combined();
    let nf = n as f64;
    let critical = 1.0 + c * PI;
    if n == 1 && critical < 0.0 {
        return negative_branch(c, tol);
    }
    let (lo, hi) = if c >= 0.0 {
        (nf - 0.5 - 1e-9, nf)
    } else {
        (nf - 1.0, nf - 0.5)
    };
    let f = |s: f64| reduced(s, c);
    let s0 = bisect(f, lo, hi, 1e-8).ok_or_else(|| {
        Error::Solver(format!(
            "no sign change for eigenvalue {n} on sqrt-bracket [{lo}, {hi}] with c = {c}: f = ({}, {})",
            f(lo),
            f(hi)
        ))
    })?;
    let s = polish(f, |s| reduced_derivative(s, c), s0, lo, hi);
    let residual = (s * (PI * s).cos() + c * (PI * s).sin()).abs() / (1.0 + c.abs());
    if residual > tol {
        return Err(Error::Solver(format!(
            "eigenvalue {n} residual {residual:e} exceeds tolerance {tol:e} (c = {c})"
        )));
    }
    Ok(ModelEigenvalue {
        index: n,
        value: s * s,
        residual,
    })
}

/// `Λ₁ = −κ²` with `κ + c tanh κπ = 0`, for `c < −1/π`.
fn negative_branch(c: f64, tol: f64) -> Result<ModelEigenvalue> {
    let g = |k: f64| 1.0 + c * tanh_over(k);
    let hi = c.abs().max(1.0);
    let k0 = bisect(g, 0.0, hi, 1e-8)
        .ok_or_else(|| Error::Solver(format!("hyperbolic branch not bracketed for c = {c}")))?;
    let h = |k: f64| k + c * (PI * k).tanh();
    let dh = |k: f64| 1.0 + c * PI / (PI * k).cosh().powi(2);
    let k = polish(h, dh, k0, 0.0, hi);
    let residual = h(k).abs() / (1.0 + c.abs());
    if residual > tol {
        return Err(Error::Solver(format!(
            "negative eigenvalue residual {residual:e} exceeds tolerance {tol:e} (c = {c})"
        )));
    }
    Ok(ModelEigenvalue {
        index: 1,
        value: -k * k,
        residual,
    })
}

fn tanh_over(k: f64) -> f64 {
    if k.abs() < 1e-8 {
        PI
    } else {
        (PI * k).tanh() / k
    }
}

/// The first `count` eigenvalues in ascending order.
pub fn model_spectrum(coeff: RobinCoefficient, count: usize, tol: f64) -> Result<Vec<ModelEigenvalue>> {
    (1..=count).map(|n| lambda_n(coeff, n, tol)).collect()
}

fn trapezoid_cumulative(x: &[f64], f: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for i in 1..x.len() {
        out[i] = out[i - 1] + 0.5 * (x[i] - x[i - 1]) * (f[i] + f[i - 1]);
    }
    out
}

/// `L²(0, π)` norm of samples by the trapezoid rule.
pub fn l2_norm(x: &[f64], f: &[f64]) -> f64 {
    let sq: Vec<f64> = f.iter().map(|v| v * v).collect();
    trapezoid_cumulative(x, &sq).last().copied().unwrap_or(0.0).sqrt()
}

/// `u = Q⁻¹F` on the nodes `0 = x₀ < … < x_m = π` via the Green kernel
/// `G(x,t) = v₁(min)·v₂(max)/(1 + cπ)`, `v₁ = 1 + ct`, `v₂ = π − t`.
pub fn q_apply_inverse(coeff: RobinCoefficient, nodes: &[f64], f: &[f64]) -> Result<Vec<f64>> {
    if nodes.len() != f.len() || nodes.len() < 2 {
        return Err(Error::Precondition(format!(
            "need matching node/value arrays of length ≥ 2, got {} and {}",
            nodes.len(),
            f.len()
        )));
    }
    let last = nodes[nodes.len() - 1];
    if nodes[0] != 0.0 || (last - PI).abs() > 1e-12 || nodes.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(
            "nodes must increase from 0 to pi".into(),
        ));
    }
    let c = coeff.combined();
    let wronskian = 1.0 + c * PI;
    if wronskian.abs() < 1e-12 {
        return Err(Error::Singular(format!(
            "1 + c·pi = {wronskian:e}: zero is an eigenvalue of the model operator"
        )));
    }
    let v1: Vec<f64> = nodes.iter().map(|&t| 1.0 + c * t).collect();
    let v2: Vec<f64> = nodes.iter().map(|&t| PI - t).collect();
    let left: Vec<f64> = v1.iter().zip(f).map(|(a, b)| a * b).collect();
    let right: Vec<f64> = v2.iter().zip(f).map(|(a, b)| a * b).collect();
    let i1 = trapezoid_cumulative(nodes, &left);
    let i2 = trapezoid_cumulative(nodes, &right);
    let total2 = i2[i2.len() - 1];
    Ok((0..nodes.len())
        .map(|i| (v2[i] * i1[i] + v1[i] * (total2 - i2[i])) / wronskian)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BottomRoot {
    pub epsilon: f64,
    pub mu: f64,
    pub value: f64,
    /// `Λ₁(μ)`, the leading-order value.
    pub leading: f64,
    /// `|Λ(ε, μ) − Λ₁(μ)|`.
    pub branch_gap: f64,
    pub residual: f64,
}

/// `(cos √Λπ, sin(√Λπ)/√Λ)` continued analytically to `Λ < 0`.
fn entire_pair(lam: f64) -> (f64, f64) {
    if lam >= 0.0 {
        let s = lam.sqrt();
        ((PI * s).cos(), sin_over(s))
    } else {
        let k = (-lam).sqrt();
        let sh = if k < 1e-8 { PI } else { (PI * k).sinh() / k };
        ((PI * k).cosh(), sh)
    }
}

struct BottomEquation {
    eps: f64,
    b: f64,
    c: f64,
    strength: f64,
    ctl: SeriesControl,
}

impl BottomEquation {
    /// The equation divided by `√Λ`, an entire function of `Λ`.
    fn eval(&self, lam: f64) -> Result<f64> {
        let theta = eval_theta(
            ThetaArguments {
                t1: self.eps * self.b,
                t2: self.eps * self.eps * lam,
            },
            self.ctl,
        )?
        .value;
        let damping = 1.0 - self.eps * self.strength * theta;
        if !(damping > 0.0) {
            return Err(Error::Parameter(format!(
                "eps (K+mu) theta = {} ≥ 1 at Lambda = {lam}: outside the asymptotic regime",
                self.eps * self.strength * theta
            )));
        }
        let (cs, sn) = entire_pair(lam);
        Ok((cs + self.c * sn) * damping + self.eps * self.strength.powi(2) * theta * sn)
    }
}

/// Root of the corrected bottom equation on the branch through `Λ₁(μ)`.
pub fn solve_bottom_root(eps: f64, coeff: RobinCoefficient, tol: f64) -> Result<BottomRoot> {
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {eps}")));
    }
    let leading = lambda_n(coeff, 1, 1e-13)?.value;
    let (lo, hi) = (leading - 1.0, leading + 1.0);
    if eps * eps * lo.abs().max(hi.abs()) >= 4.0 {
        return Err(Error::Parameter(format!(
            "eps^2 Lambda leaves the theta domain on [{lo}, {hi}] at eps = {eps}"
        )));
    }
    let eq = BottomEquation {
        eps,
        b: coeff.b(),
        c: coeff.combined(),
        strength: coeff.strength(),
        ctl: SeriesControl::default(),
    };
    let scale = 1.0 + eq.c.abs();
    let newton = || -> Result<Option<f64>> {
        let mut lam = leading;
        for _ in 0..60 {
            let g = eq.eval(lam)?;
            let h = 1e-6 * lam.abs().max(1.0);
            let dg = (eq.eval(lam + h)? - eq.eval(lam - h)?) / (2.0 * h);
            if dg == 0.0 || !dg.is_finite() {
                return Ok(None);
            }
            let next = lam - g / dg;
            if !(next > lo && next < hi) {
                return Ok(None);
            }
            let step = (next - lam).abs();
            lam = next;
            if step <= 1e-15 * lam.abs().max(1.0) {
                return Ok(Some(lam));
            }
        }
        Ok(Some(lam))
    };
    let mut lam = match newton()? {
        Some(l) => l,
        None => {
            let mut failure = None;
            let f = |l: f64| match eq.eval(l) {
                Ok(v) => v,
                Err(e) => {
                    failure.get_or_insert(e);
                    f64::NAN
                }
            };
            let root = bisect(f, lo, hi, 1e-14);
            match root {
                Some(r) => r,
                None => {
                    return Err(failure.unwrap_or_else(|| {
                        Error::Solver(format!(
                            "bottom root: Newton diverged and [{lo}, {hi}] does not bracket a root"
                        ))
                    }))
                }
            }
        }
    };
    if !lam.is_finite() {
        lam = leading;
    }
    let residual = eq.eval(lam)?.abs() / scale;
    if residual > tol {
        return Err(Error::Solver(format!(
            "bottom root residual {residual:e} exceeds {tol:e} at eps = {eps}"
        )));
    }
    Ok(BottomRoot {
        epsilon: eps,
        mu: coeff.mu(),
        value: lam,
        leading,
        branch_gap: (lam - leading).abs(),
        residual,
    })
}

/// The two closed-form coefficient candidates, transcribed literally with the
/// undefined constant `K₀` read as `K`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UpsilonCandidates {
    pub first: f64,
    pub second: f64,
}

pub fn upsilon_candidates(coeff: RobinCoefficient) -> Result<UpsilonCandidates> {
    let l1 = lambda_n(coeff, 1, 1e-13)?.value;
    let (b, mu, c) = (coeff.b(), coeff.mu(), coeff.combined());
    let k = coeff.strength();
    let denom = PI * c * c + l1 * PI + c;
    Ok(UpsilonCandidates {
        first: PI * PI * b / 6.0 * l1 * (l1 + mu).powi(2) / denom,
        second: -ZETA3 / 4.0 * l1 * k * k * (l1 + 2.0 * b * b) / denom,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpsilonFit {
    /// `coefficients[j-1]` multiplies `ε^j`.
    pub coefficients: Vec<f64>,
    /// Root-mean-square residual of the fit.
    pub residual: f64,
    pub roots: Vec<BottomRoot>,
    pub candidates: UpsilonCandidates,
}

/// Least-squares fit of `Λ(ε, μ) − Λ₁(μ) ≈ Σ_{j=1}^{degree} c_j ε^j`.
pub fn upsilon_fit(coeff: RobinCoefficient, eps_grid: &[f64], degree: usize) -> Result<UpsilonFit> {
    if degree == 0 || degree + 1 > eps_grid.len() {
        return Err(Error::Precondition(format!(
            "degree {degree} needs at least {} grid points, got {}",
            degree + 1,
            eps_grid.len()
        )));
    }
    let roots: Vec<BottomRoot> = eps_grid
        .par_iter()
        .map(|&e| solve_bottom_root(e, coeff, 1e-12))
        .collect::<Result<_>>()?;
    let columns: Vec<Vec<f64>> = (1..=degree)
        .map(|j| eps_grid.iter().map(|e| e.powi(j as i32)).collect())
        .collect();
    let rhs: Vec<f64> = roots.iter().map(|r| r.value - r.leading).collect();
    let coefficients = least_squares(&columns, &rhs)?;
    let sq: f64 = rhs
        .iter()
        .enumerate()
        .map(|(i, y)| {
            let fit: f64 = coefficients.iter().zip(&columns).map(|(c, col)| c * col[i]).sum();
            (y - fit).powi(2)
        })
        .sum();
    Ok(UpsilonFit {
        coefficients,
        residual: (sq / rhs.len() as f64).sqrt(),
        roots,
        candidates: upsilon_candidates(coeff)?,
    })
}

/// Least squares by modified Gram–Schmidt on column-normalized data.
fn least_squares(columns: &[Vec<f64>], rhs: &[f64]) -> Result<Vec<f64>> {
    let m = columns.len();
    let scales: Vec<f64> = columns
        .iter()
        .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
        .collect();
    if scales.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Singular("least-squares column vanishes".into()));
    }
    let mut q: Vec<Vec<f64>> = columns
        .iter()
        .zip(&scales)
        .map(|(c, s)| c.iter().map(|v| v / s).collect())
        .collect();
    let mut r = vec![vec![0.0; m]; m];
    for j in 0..m {
        for i in 0..j {
            let d: f64 = q[i].iter().zip(&q[j]).map(|(a, b)| a * b).sum();
            r[i][j] = d;
            let qi = q[i].clone();
            for (x, y) in q[j].iter_mut().zip(&qi) {
                *x -= d * y;
            }
        }
        let norm = q[j].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-14 {
            return Err(Error::Singular("least-squares basis is rank deficient".into()));
        }
        r[j][j] = norm;
        for x in q[j].iter_mut() {
            *x /= norm;
        }
    }
    let qty: Vec<f64> = q
        .iter()
        .map(|col| col.iter().zip(rhs).map(|(a, b)| a * b).sum())
        .collect();
    let mut x = vec![0.0; m];
    for i in (0..m).rev() {
        let s: f64 = ((i + 1)..m).map(|k| r[i][k] * x[k]).sum();
        x[i] = (qty[i] - s) / r[i][i];
    }
    Ok(x.iter().zip(&scales).map(|(v, s)| v / s).collect())
}

/// x₁-average and fluctuation of a periodic cell function.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanSplit {
    /// One value per row (x₂ level).
    pub mean: Vec<Complex64>,
    /// Same layout as the input.
    pub fluctuation: Vec<Complex64>,
}

/// Splits row-major samples (rows of length `weights.len()`) into the
/// weighted row average and the remainder. The discrete identity
/// `Σ w|f|² = (Σ w)|F|² + Σ w|f⊥|²` holds row by row.
pub fn project_mean(values: &[Complex64], weights: &[f64]) -> Result<MeanSplit> {
    let n1 = weights.len();
    if n1 == 0 || !values.len().is_multiple_of(n1) {
        return Err(Error::Precondition(format!(
            "{} samples do not form rows of length {n1}",
            values.len()
        )));
    }
    let width: f64 = weights.iter().sum();
    let mut mean = Vec::with_capacity(values.len() / n1);
    let mut fluctuation = Vec::with_capacity(values.len());
    for row in values.chunks(n1) {
        let avg = row
            .iter()
            .zip(weights)
            .fold(Complex64::new(0.0, 0.0), |acc, (v, w)| acc + v * *w)
            / width;
        mean.push(avg);
        fluctuation.extend(row.iter().map(|v| v - avg));
    }
    Ok(MeanSplit { mean, fluctuation })
}
