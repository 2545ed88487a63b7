//! Alternation geometries on the bottom boundary `x₂ = 0` and the boundary
//! corrector built on them.
//!
//! Segment `j` of the Dirichlet set is `ε(s_j − a_j⁻) < x₁ < ε(s_j + a_j⁺)`
//! in physical coordinates; centres and half-lengths are stored in stretched
//! units (`x₁ = εs`). The monotone map `ϑ` acts on physical `x₁` and sends
//! `εs_j` to `επj`.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cutoff::chi;
use crate::error::{Error, Result};
use crate::specfun::{eval_x, eval_y, PlanePoint};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Regime {
    /// Homogenized Robin limit with strength `K`.
    Robin { k: f64 },
    /// Homogenized Dirichlet limit.
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Diffeomorphism {
    Identity,
    /// `ϑ(x) = x + δ sin x`, `|δ| < 1`.
    SineWarp { delta: f64 },
}

impl Diffeomorphism {
    pub fn value(&self, x: f64) -> f64 {
        match *self {
            Self::Identity => x,
            Self::SineWarp { delta } => x + delta * x.sin(),
        }
    }

    pub fn d1(&self, x: f64) -> f64 {
        match *self {
            Self::Identity => 1.0,
            Self::SineWarp { delta } => 1.0 + delta * x.cos(),
        }
    }

    pub fn d2(&self, x: f64) -> f64 {
        match *self {
            Self::Identity => 0.0,
            Self::SineWarp { delta } => -delta * x.sin(),
        }
    }

    pub fn d3(&self, x: f64) -> f64 {
        match *self {
            Self::Identity => 0.0,
            Self::SineWarp { delta } => -delta * x.cos(),
        }
    }

    /// A constant `c₁` with `c₁⁻¹ ≤ ϑ' ≤ c₁` and `|ϑ''| + |ϑ'''| ≤ c₁`.
    pub fn bound_constant(&self) -> f64 {
        match *self {
            Self::Identity => 1.0,
            Self::SineWarp { delta } => {
                let d = delta.abs();
                (1.0 / (1.0 - d)).max(1.0 + d).max(d * 2f64.sqrt())
            }
        }
    }

    /// Solves `ϑ(x) = y` by safeguarded Newton iteration.
    pub fn inverse(&self, y: f64) -> Result<f64> {
        match *self {
            Self::Identity => Ok(y),
            Self::SineWarp { delta } => {
                let (mut lo, mut hi) = (y - delta.abs(), y + delta.abs());
                let mut x = y;
                for _ in 0..100 {
                    let f = self.value(x) - y;
                    if f.abs() <= 1e-15 * y.abs().max(1.0) {
                        return Ok(x);
                    }
                    if f > 0.0 {
                        hi = x;
                    } else {
                        lo = x;
                    }
                    let next = x - f / self.d1(x);
                    x = if next > lo && next < hi {
                        next
                    } else {
                        0.5 * (lo + hi)
                    };
                }
                if (self.value(x) - y).abs() <= 1e-12 * y.abs().max(1.0) {
                    Ok(x)
                } else {
                    Err(Error::Solver(format!("diffeomorphism inversion failed at y = {y}")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LengthBounds {
    /// `2c₂η ≤ a⁻ + a⁺ ≤ 2η`; used with the Robin regime.
    Averaged { c2: f64 },
    /// `η ≤ a^± ≤ c₃η ≤ π/4`; used with the Dirichlet regime.
    Uniform { c3: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GeometryKind {
    Periodic,
    Warped,
}

/// One Dirichlet segment in stretched units.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub index: i64,
    pub center: f64,
    pub minus: f64,
    pub plus: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlternationGeometry {
    epsilon: f64,
    eta: f64,
    regime: Regime,
    diffeo: Diffeomorphism,
    bounds: LengthBounds,
    kind: GeometryKind,
    seed: u64,
    points: BTreeMap<i64, f64>,
    half_lengths: BTreeMap<i64, (f64, f64)>,
}

fn check_common(eps: f64, eta: f64, regime: Regime) -> Result<()> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {eps}")));
    }
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::Parameter(format!("eta must be positive, got {eta}")));
    }
    if let Regime::Robin { k } = regime {
        if !(k >= 0.0 && k.is_finite()) {
            return Err(Error::Parameter(format!("K must be nonnegative, got {k}")));
        }
    }
    Ok(())
}

/// Period `π` alternation with identical segments of half-length `η`.
/// `η = π/2` is the degenerate case in which the whole bottom is Dirichlet.
pub fn build_periodic_geometry(eps: f64, eta: f64, regime: Regime) -> Result<AlternationGeometry> {
    check_common(eps, eta, regime)?;
    if eta > FRAC_PI_2 + 1e-12 {
        return Err(Error::Geometry(format!(
            "non-overlap condition violated: half-length {eta} exceeds pi/2, adjacent segments overlap"
        )));
    }
    let bounds = match regime {
        Regime::Robin { .. } => LengthBounds::Averaged { c2: 1.0 },
        Regime::Dirichlet => LengthBounds::Uniform { c3: 1.0 },
    };
    Ok(AlternationGeometry {
        epsilon: eps,
        eta: eta.min(FRAC_PI_2),
        regime,
        diffeo: Diffeomorphism::Identity,
        bounds,
        kind: GeometryKind::Periodic,
        seed: 0,
        points: BTreeMap::new(),
        half_lengths: BTreeMap::new(),
    })
}

/// Non-periodic alternation: `ϑ(x) = x + δ sin x`, centres `s_j = ϑ⁻¹(επj)/ε`
/// and half-lengths drawn per index from a seeded generator.
pub fn build_warped_geometry(
    eps: f64,
    eta: f64,
    delta: f64,
    seed: u64,
    regime: Regime,
) -> Result<AlternationGeometry> {
    let bounds = match regime {
        Regime::Robin { .. } => LengthBounds::Averaged { c2: 0.5 },
        Regime::Dirichlet => LengthBounds::Uniform { c3: 1.5 },
    };
    build_warped_with_bounds(eps, eta, delta, seed, regime, bounds)
}

pub fn build_warped_with_bounds(
    eps: f64,
    eta: f64,
    delta: f64,
    seed: u64,
    regime: Regime,
    bounds: LengthBounds,
) -> Result<AlternationGeometry> {
    check_common(eps, eta, regime)?;
    if !(delta.abs() < 1.0) {
        return Err(Error::Parameter(format!("warp amplitude |delta| = {} must be < 1", delta.abs())));
    }
    match bounds {
        LengthBounds::Averaged { c2 } if !(c2 > 0.0 && c2 <= 1.0) => {
            return Err(Error::Parameter(format!("c2 = {c2} outside (0, 1]")))
        }
        LengthBounds::Uniform { c3 } if !(c3 >= 1.0) => {
            return Err(Error::Parameter(format!("c3 = {c3} must be at least 1")))
        }
        _ => {}
    }
    let diffeo = if delta == 0.0 {
        Diffeomorphism::Identity
    } else {
        Diffeomorphism::SineWarp { delta }
    };
    let geom = AlternationGeometry {
        epsilon: eps,
        eta,
        regime,
        diffeo,
        bounds,
        kind: if delta == 0.0 {
            GeometryKind::Periodic
        } else {
            GeometryKind::Warped
        },
        seed,
        points: BTreeMap::new(),
        half_lengths: BTreeMap::new(),
    };
    let report = validate_assumptions(&geom, 64);
    if let Some(f) = report.failures.first() {
        return Err(Error::Geometry(f.to_string()));
    }
    Ok(geom)
}

fn index_rng(seed: u64, j: i64) -> ChaCha8Rng {
    let mixed = seed ^ (j as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(17);
    ChaCha8Rng::seed_from_u64(mixed)
}

impl AlternationGeometry {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn regime(&self) -> Regime {
        self.regime
    }

    pub fn diffeo(&self) -> Diffeomorphism {
        self.diffeo
    }

    pub fn bounds(&self) -> LengthBounds {
        self.bounds
    }

    pub fn kind(&self) -> GeometryKind {
        self.kind
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Periodic geometry whose segments fill the whole bottom.
    pub fn is_degenerate(&self) -> bool {
        self.kind == GeometryKind::Periodic
            && self.points.is_empty()
            && self.half_lengths.is_empty()
            && (self.eta - FRAC_PI_2).abs() <= 1e-12
    }

    /// Replaces the generated centre of segment `j` (stretched units).
    pub fn with_point(mut self, j: i64, s: f64) -> Self {
        self.points.insert(j, s);
        self
    }

    /// Replaces the generated half-lengths of segment `j`.
    pub fn with_half_lengths(mut self, j: i64, minus: f64, plus: f64) -> Self {
        self.half_lengths.insert(j, (minus, plus));
        self
    }

    pub fn overrides(&self) -> (&BTreeMap<i64, f64>, &BTreeMap<i64, (f64, f64)>) {
        (&self.points, &self.half_lengths)
    }

    /// Stretched centre `s_j`.
    pub fn point(&self, j: i64) -> f64 {
        if let Some(&s) = self.points.get(&j) {
            return s;
        }
        match self.kind {
            GeometryKind::Periodic => PI * j as f64,
            GeometryKind::Warped => {
                let y = self.epsilon * PI * j as f64;
                self.diffeo.inverse(y).unwrap_or(y) / self.epsilon
            }
        }
    }

    pub fn half_lengths(&self, j: i64) -> (f64, f64) {
        if let Some(&h) = self.half_lengths.get(&j) {
            return h;
        }
        match self.kind {
            GeometryKind::Periodic => (self.eta, self.eta),
            GeometryKind::Warped => {
                let (lo, hi) = match self.bounds {
                    LengthBounds::Averaged { c2 } => (c2 * self.eta, self.eta),
                    LengthBounds::Uniform { c3 } => (self.eta, c3 * self.eta),
                };
                let mut rng = index_rng(self.seed, j);
                let a = lo + (hi - lo) * rng.random::<f64>();
                let b = lo + (hi - lo) * rng.random::<f64>();
                (a, b)
            }
        }
    }

    pub fn segment(&self, j: i64) -> Segment {
        let (minus, plus) = self.half_lengths(j);
        Segment {
            index: j,
            center: self.point(j),
            minus,
            plus,
        }
    }

    /// Physical endpoints `(ε(s_j − a_j⁻), ε(s_j + a_j⁺))`.
    pub fn segment_bounds(&self, j: i64) -> (f64, f64) {
        let s = self.segment(j);
        (
            self.epsilon * (s.center - s.minus),
            self.epsilon * (s.center + s.plus),
        )
    }

    /// Index of the segment whose centre is nearest to `x₁`.
    pub fn nearest_index(&self, x1: f64) -> i64 {
        (self.diffeo.value(x1) / (self.epsilon * PI)).round() as i64
    }

    /// All segment endpoints in `[a, b]`, sorted.
    pub fn endpoints_in(&self, a: f64, b: f64) -> Vec<f64> {
        let j0 = self.nearest_index(a) - 2;
        let j1 = self.nearest_index(b) + 2;
        let mut out = Vec::new();
        for j in j0..=j1 {
            let (l, r) = self.segment_bounds(j);
            for p in [l, r] {
                if p >= a && p <= b {
                    out.push(p);
                }
            }
        }
        out.sort_by(f64::total_cmp);
        out.dedup_by(|x, y| (*x - *y).abs() <= 1e-12 * x.abs().max(1.0));
        out
    }
}

/// Which condition holds at the bottom point `(x₁, 0)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryClass {
    Dirichlet { index: i64 },
    Robin,
    Endpoint { index: i64 },
}

pub fn classify_bottom_boundary(geom: &AlternationGeometry, x1: f64) -> BoundaryClass {
    let tol = 1e-12 * x1.abs().max(geom.epsilon);
    let jc = geom.nearest_index(x1);
    let mut inside = None;
    for j in (jc - 1)..=(jc + 1) {
        let (l, r) = geom.segment_bounds(j);
        if (x1 - l).abs() <= tol || (x1 - r).abs() <= tol {
            return BoundaryClass::Endpoint { index: j };
        }
        if x1 > l && x1 < r {
            inside = Some(j);
        }
    }
    match inside {
        Some(index) => BoundaryClass::Dirichlet { index },
        None => BoundaryClass::Robin,
    }
}

/// Which assumption a validation failure refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assumption {
    /// Bounds on `ϑ'`, `ϑ''`, `ϑ'''`.
    Smoothness,
    /// `ϑ(εs_j) = επj`.
    PointPlacement,
    /// Averaged half-length bounds.
    AveragedLengths,
    /// Uniform half-length bounds.
    UniformLengths,
    /// Adjacent segments are disjoint.
    NonOverlap,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationFailure {
    pub assumption: Assumption,
    pub index: Option<i64>,
    pub detail: String,
}

impl std::fmt::Display for ValidationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let name = match self.assumption {
            Assumption::Smoothness => "smoothness bounds of the diffeomorphism",
            Assumption::PointPlacement => "point placement",
            Assumption::AveragedLengths => "averaged half-length bounds",
            Assumption::UniformLengths => "uniform half-length bounds",
            Assumption::NonOverlap => "non-overlap condition",
        };
        match self.index {
            Some(j) => write!(f, "{name} violated at j = {j}: {}", self.detail),
            None => write!(f, "{name} violated: {}", self.detail),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Smallest `c₁` consistent with the sampled derivatives.
    pub c1_measured: f64,
    /// The analytic constant of the diffeomorphism.
    pub c1_declared: f64,
    /// `min (a⁻ + a⁺)/(2η)` over the window.
    pub c2_measured: f64,
    /// `max a^±/η` over the window.
    pub c3_measured: f64,
    /// Smallest gap between adjacent segments, stretched units.
    pub overlap_margin: f64,
    /// Largest `|ϑ(εs_j) − επj|`.
    pub placement_error: f64,
    pub degenerate: bool,
    pub indices_checked: (i64, i64),
    pub failures: Vec<ValidationFailure>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn fails(&self, a: Assumption) -> bool {
        self.failures.iter().any(|f| f.assumption == a)
    }
}

/// Checks all geometric assumptions on the index window `|j| ≤ samples`
/// (plus every overridden index) and samples `ϑ` sixteen times per period.
pub fn validate_assumptions(geom: &AlternationGeometry, samples: usize) -> ValidationReport {
    let w = samples.max(1) as i64;
    let mut lo = -w;
    let mut hi = w;
    for &j in geom.points.keys().chain(geom.half_lengths.keys()) {
        lo = lo.min(j - 1);
        hi = hi.max(j + 1);
    }
    let eps = geom.epsilon;
    let mut failures = Vec::new();

    let c1_declared = geom.diffeo.bound_constant();
    let x_lo = eps * PI * (lo as f64 - 1.0);
    let x_hi = eps * PI * (hi as f64 + 1.0);
    let n_samples = (16 * (hi - lo + 2)) as usize;
    let mut c1_measured: f64 = 1.0;
    for i in 0..=n_samples {
        let x = x_lo + (x_hi - x_lo) * i as f64 / n_samples as f64;
        let d1 = geom.diffeo.d1(x);
        let higher = geom.diffeo.d2(x).abs() + geom.diffeo.d3(x).abs();
        c1_measured = c1_measured.max(d1).max(1.0 / d1).max(higher);
        if !(d1 > 0.0) {
            failures.push(ValidationFailure {
                assumption: Assumption::Smoothness,
                index: None,
                detail: format!("derivative {d1} ≤ 0 at x1 = {x}"),
            });
            break;
        }
    }
    if c1_measured > c1_declared * (1.0 + 1e-12) {
        failures.push(ValidationFailure {
            assumption: Assumption::Smoothness,
            index: None,
            detail: format!("measured c1 = {c1_measured} exceeds declared {c1_declared}"),
        });
    }

    let degenerate = geom.is_degenerate();
    let mut c2_measured = f64::INFINITY;
    let mut c3_measured: f64 = 0.0;
    let mut overlap_margin = f64::INFINITY;
    let mut placement_error: f64 = 0.0;
    let eta = geom.eta;
    for j in lo..=hi {
        let seg = geom.segment(j);
        let err = (geom.diffeo.value(eps * seg.center) - eps * PI * j as f64).abs();
        placement_error = placement_error.max(err);
        if err > 1e-10 {
            failures.push(ValidationFailure {
                assumption: Assumption::PointPlacement,
                index: Some(j),
                detail: format!("theta(eps s_j) misses eps*pi*j by {err:e}"),
            });
        }
        if !(seg.minus > 0.0 && seg.plus > 0.0) {
            failures.push(ValidationFailure {
                assumption: Assumption::NonOverlap,
                index: Some(j),
                detail: format!("half-lengths ({}, {}) must be positive", seg.minus, seg.plus),
            });
        }
        c2_measured = c2_measured.min((seg.minus + seg.plus) / (2.0 * eta));
        c3_measured = c3_measured.max(seg.minus.max(seg.plus) / eta);
        match geom.bounds {
            LengthBounds::Averaged { c2 } => {
                let sum = seg.minus + seg.plus;
                if sum < 2.0 * c2 * eta * (1.0 - 1e-12) || sum > 2.0 * eta * (1.0 + 1e-12) {
                    failures.push(ValidationFailure {
                        assumption: Assumption::AveragedLengths,
                        index: Some(j),
                        detail: format!("a- + a+ = {sum} outside [{}, {}]", 2.0 * c2 * eta, 2.0 * eta),
                    });
                }
            }
            LengthBounds::Uniform { c3 } => {
                let lo_ok = seg.minus >= eta * (1.0 - 1e-12) && seg.plus >= eta * (1.0 - 1e-12);
                let hi_ok = seg.minus.max(seg.plus) <= c3 * eta * (1.0 + 1e-12);
                if !lo_ok || !hi_ok || c3 * eta > PI / 4.0 + 1e-12 {
                    failures.push(ValidationFailure {
                        assumption: Assumption::UniformLengths,
                        index: Some(j),
                        detail: format!(
                            "need eta ≤ a± ≤ c3 eta ≤ pi/4 with eta = {eta}, c3 = {c3}, a = ({}, {})",
                            seg.minus, seg.plus
                        ),
                    });
                }
            }
        }
        if j > lo {
            let prev = geom.segment(j - 1);
            let margin = (seg.center - seg.minus) - (prev.center + prev.plus);
            overlap_margin = overlap_margin.min(margin);
            if !degenerate && !(margin > 0.0) {
                failures.push(ValidationFailure {
                    assumption: Assumption::NonOverlap,
                    index: Some(j),
                    detail: format!("segments {} and {j} overlap by {}", j - 1, -margin),
                });
            }
        }
    }
    ValidationReport {
        c1_measured,
        c1_declared,
        c2_measured,
        c3_measured,
        overlap_margin,
        placement_error,
        degenerate,
        indices_checked: (lo, hi),
        failures,
    }
}

/// The boundary corrector `W` and its ingredients for a Robin-regime geometry.
///
/// `W` equals `−1` on the Dirichlet segments covered by the inner cut-off,
/// satisfies `∂W/∂x₂ = −(K+μ)(1+εφ)ϑ'` on the Robin part and is bounded.
#[derive(Debug, Clone)]
pub struct CorrectorField<'a> {
    geom: &'a AlternationGeometry,
    strength: f64,
    inner_scale: f64,
}

pub fn corrector_ingredients(geom: &AlternationGeometry, mu: f64) -> Result<CorrectorField<'_>> {
    let k = match geom.regime {
        Regime::Robin { k } => k,
        Regime::Dirichlet => {
            return Err(Error::Regime("the corrector needs the Robin regime".into()))
        }
    };
    if geom.is_degenerate() {
        return Err(Error::Regime(
            "degenerate geometry has no alternation to correct".into(),
        ));
    }
    let strength = k + mu;
    let eps = geom.epsilon;
    let matching = eps * strength * geom.eta.ln() + 1.0;
    if matching.abs() > 1e-8 {
        return Err(Error::Parameter(format!(
            "mu = {mu} is inconsistent with eta = {}: eps (K+mu) ln eta + 1 = {matching:e}",
            geom.eta
        )));
    }
    let field = CorrectorField {
        geom,
        strength,
        inner_scale: geom.eta.powf(-0.25),
    };
    for j in -64..=64 {
        field.check_amplitude(j)?;
    }
    Ok(field)
}

impl<'a> CorrectorField<'a> {
    pub fn strength(&self) -> f64 {
        self.strength
    }

    fn check_amplitude(&self, j: i64) -> Result<()> {
        let lg = self.d(j).ln();
        if !(1.0 - self.geom.epsilon * self.strength * lg > 0.0) {
            return Err(Error::Parameter(format!(
                "1 - eps (K+mu) ln d_j ≤ 0 at j = {j}: outside the asymptotic regime"
            )));
        }
        Ok(())
    }

    /// `d_j = [ϑ(εs_j + εa⁺) − ϑ(εs_j − εa⁻)]/(2εη)`.
    pub fn d(&self, j: i64) -> f64 {
        let (a, b) = self.alpha(j);
        a + b
    }

    /// `(α_j⁻, α_j⁺)`, both positive; their sum is `d_j`.
    pub fn alpha(&self, j: i64) -> (f64, f64) {
        let g = self.geom;
        let eps = g.epsilon;
        let s = g.segment(j);
        let centre = g.diffeo.value(eps * s.center);
        let scale = 2.0 * eps * g.eta;
        (
            (centre - g.diffeo.value(eps * (s.center - s.minus))) / scale,
            (g.diffeo.value(eps * (s.center + s.plus)) - centre) / scale,
        )
    }

    /// Blend of the `d_j`: equals `d_j` near `ϑ = επj` and `d_{j+1}` near
    /// `ϑ = επ(j+1)`.
    pub fn g(&self, theta: f64) -> f64 {
        let period = self.geom.epsilon * PI;
        let u = theta / period;
        let j = u.floor();
        let t = u - j;
        let (dj, dn) = (self.d(j as i64), self.d(j as i64 + 1));
        dn - chi(t) * (dn - dj)
    }

    /// `φ = (K+μ) ln g / (1 − ε(K+μ) ln g)` at `ϑ(x₁)`.
    pub fn phi(&self, x1: f64) -> Result<f64> {
        let lg = self.g(self.geom.diffeo.value(x1)).ln();
        let den = 1.0 - self.geom.epsilon * self.strength * lg;
        if !(den > 0.0) {
            return Err(Error::Parameter(format!(
                "1 - eps (K+mu) ln g = {den} ≤ 0 at x1 = {x1}"
            )));
        }
        Ok(self.strength * lg / den)
    }

    /// `W(x₁, x₂)`.
    pub fn value(&self, x1: f64, x2: f64) -> Result<f64> {
        let g = self.geom;
        let eps = g.epsilon;
        let eta = g.eta;
        if x2 == 0.0 {
            if let BoundaryClass::Endpoint { .. } = classify_bottom_boundary(g, x1) {
                return Err(Error::Endpoint { x1 });
            }
        }
        let th = g.diffeo.value(x1);
        let th1 = g.diffeo.d1(x1);
        let xi1 = th / eps;
        let xi2 = th1 * x2 / eps;
        let amp = self.strength * (1.0 + eps * self.phi(x1)?);
        let outer = -amp * th1 * x2;
        let jc = (xi1 / PI).round() as i64;
        let mut product = 1.0;
        let mut inner = 0.0;
        for j in (jc - 1)..=(jc + 1) {
            let r = (xi1 - PI * j as f64).hypot(xi2);
            let weight = chi(r * self.inner_scale);
            if weight == 0.0 {
                continue;
            }
            product *= 1.0 - weight;
            let (am, ap) = self.alpha(j);
            let d = am + ap;
            let s1 = (xi1 - PI * j as f64) / eta;
            let s2 = xi2 / eta;
            let p = PlanePoint::new((s1 + am - ap) / d, s2 / d)?;
            let y = eval_y(p).map_err(|e| match e {
                Error::Domain { .. } => Error::Endpoint { x1 },
                other => other,
            })?;
            inner += weight * (-1.0 + eps * amp * y);
        }
        let layer = if product == 0.0 {
            0.0
        } else {
            eps * amp * (eval_x(PlanePoint::new(xi1, xi2)?)? + xi2) * product
        };
        Ok(outer + layer + inner)
    }

    /// `∇W` by central differences (one-sided at the bottom).
    pub fn gradient(&self, x1: f64, x2: f64) -> Result<[f64; 2]> {
        let h = 1e-6 * self.geom.epsilon;
        let gx = (self.value(x1 + h, x2)? - self.value(x1 - h, x2)?) / (2.0 * h);
        let gy = if x2 >= h {
            (self.value(x1, x2 + h)? - self.value(x1, x2 - h)?) / (2.0 * h)
        } else {
            (-3.0 * self.value(x1, x2)? + 4.0 * self.value(x1, x2 + h)? - self.value(x1, x2 + 2.0 * h)?)
                / (2.0 * h)
        };
        Ok([gx, gy])
    }
}

pub fn eval_corrector(field: &CorrectorField<'_>, x1: f64, x2: f64) -> Result<(f64, [f64; 2])> {
    Ok((field.value(x1, x2)?, field.gradient(x1, x2)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RegimeTag {
    Robin,
    Dirichlet,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointEntry {
    pub j: i64,
    pub s: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HalfLengthEntry {
    pub j: i64,
    pub minus: f64,
    pub plus: f64,
}

/// Serialized form of a geometry. Missing `delta` (or zero) gives the
/// periodic layout; explicit `points`/`half_lengths` replace generated ones.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryDocument {
    pub epsilon: f64,
    pub eta: f64,
    pub regime: RegimeTag,
    #[serde(rename = "K", default, skip_serializing_if = "Option::is_none")]
    pub k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub points: Option<Vec<PointEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_lengths: Option<Vec<HalfLengthEntry>>,
}

impl GeometryDocument {
    pub fn from_json_str(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(format!("geometry document: {e}")))
    }

    pub fn to_json_string(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    fn regime(&self) -> Result<Regime> {
        match (self.regime, self.k) {
            (RegimeTag::Robin, Some(k)) => Ok(Regime::Robin { k }),
            (RegimeTag::Robin, None) => Err(Error::Config("robin regime needs key `K`".into())),
            (RegimeTag::Dirichlet, None) => Ok(Regime::Dirichlet),
            (RegimeTag::Dirichlet, Some(_)) => {
                Err(Error::Config("key `K` is meaningless for the dirichlet regime".into()))
            }
        }
    }

    /// Builds the geometry without validating it; see [`validate_assumptions`].
    pub fn build(&self) -> Result<AlternationGeometry> {
        let regime = self.regime()?;
        check_common(self.epsilon, self.eta, regime)?;
        let delta = self.delta.unwrap_or(0.0);
        if !(delta.abs() < 1.0) {
            return Err(Error::Config(format!("`delta` = {delta} must satisfy |delta| < 1")));
        }
        let bounds = match (self.c2, self.c3, regime) {
            (Some(_), Some(_), _) => {
                return Err(Error::Config("give at most one of `c2` and `c3`".into()))
            }
            (Some(c2), None, _) => LengthBounds::Averaged { c2 },
            (None, Some(c3), _) => LengthBounds::Uniform { c3 },
            (None, None, Regime::Robin { .. }) => LengthBounds::Averaged {
                c2: if delta == 0.0 { 1.0 } else { 0.5 },
            },
            (None, None, Regime::Dirichlet) => LengthBounds::Uniform {
                c3: if delta == 0.0 { 1.0 } else { 1.5 },
            },
        };
        let mut geom = AlternationGeometry {
            epsilon: self.epsilon,
            eta: self.eta,
            regime,
            diffeo: if delta == 0.0 {
                Diffeomorphism::Identity
            } else {
                Diffeomorphism::SineWarp { delta }
            },
            bounds,
            kind: if delta == 0.0 {
                GeometryKind::Periodic
            } else {
                GeometryKind::Warped
            },
            seed: self.seed.unwrap_or(0),
            points: BTreeMap::new(),
            half_lengths: BTreeMap::new(),
        };
        for p in self.points.iter().flatten() {
            if !p.s.is_finite() {
                return Err(Error::Config(format!("point for j = {} is not finite", p.j)));
            }
            geom.points.insert(p.j, p.s);
        }
        for h in self.half_lengths.iter().flatten() {
            if !(h.minus.is_finite() && h.plus.is_finite()) {
                return Err(Error::Config(format!("half-lengths for j = {} are not finite", h.j)));
            }
            geom.half_lengths.insert(h.j, (h.minus, h.plus));
        }
        Ok(geom)
    }

    pub fn from_geometry(geom: &AlternationGeometry) -> Self {
        let (k, tag) = match geom.regime {
            Regime::Robin { k } => (Some(k), RegimeTag::Robin),
            Regime::Dirichlet => (None, RegimeTag::Dirichlet),
        };
        let (c2, c3) = match geom.bounds {
            LengthBounds::Averaged { c2 } => (Some(c2), None),
            LengthBounds::Uniform { c3 } => (None, Some(c3)),
        };
        let delta = match geom.diffeo {
            Diffeomorphism::Identity => None,
            Diffeomorphism::SineWarp { delta } => Some(delta),
        };
        let points: Vec<PointEntry> = geom.points.iter().map(|(&j, &s)| PointEntry { j, s }).collect();
        let halves: Vec<HalfLengthEntry> = geom
            .half_lengths
            .iter()
            .map(|(&j, &(minus, plus))| HalfLengthEntry { j, minus, plus })
            .collect();
        Self {
            epsilon: geom.epsilon,
            eta: geom.eta,
            regime: tag,
            k,
            delta,
            seed: (geom.kind == GeometryKind::Warped).then_some(geom.seed),
            c2,
            c3,
            points: (!points.is_empty()).then_some(points),
            half_lengths: (!halves.is_empty()).then_some(halves),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model1d::{eta_for, mu_schedule};

    #[test]
    fn periodic_layout() {
        let g = build_periodic_geometry(0.1, 0.3, Regime::Robin { k: 10.0 }).unwrap();
        for j in -3..=3 {
            assert_eq!(g.point(j), PI * j as f64);
            assert_eq!(g.half_lengths(j), (0.3, 0.3));
        }
        let r = validate_assumptions(&g, 20);
        assert!(r.passed(), "{:?}", r.failures);
        assert_eq!(r.c2_measured, 1.0);
        assert_eq!(r.c3_measured, 1.0);
        assert!(!r.degenerate);
    }

    #[test]
    fn degenerate_and_overlapping_periodic() {
        let g = build_periodic_geometry(0.1, FRAC_PI_2, Regime::Dirichlet).unwrap();
        assert!(g.is_degenerate());
        let r = validate_assumptions(&g, 10);
        assert!(r.degenerate);
        assert!(!r.fails(Assumption::NonOverlap));
        let x = 0.1 * 0.7;
        assert!(matches!(classify_bottom_boundary(&g, x), BoundaryClass::Dirichlet { .. }));
        assert!(matches!(
            build_periodic_geometry(0.1, FRAC_PI_2 + 0.01, Regime::Dirichlet),
            Err(Error::Geometry(_))
        ));
    }

    #[test]
    fn classification_examples() {
        let g = build_periodic_geometry(0.1, 0.3, Regime::Robin { k: 10.0 }).unwrap();
        assert_eq!(classify_bottom_boundary(&g, 0.0), BoundaryClass::Dirichlet { index: 0 });
        assert_eq!(classify_bottom_boundary(&g, 0.1 * FRAC_PI_2), BoundaryClass::Robin);
        assert_eq!(classify_bottom_boundary(&g, 0.1 * 0.3), BoundaryClass::Endpoint { index: 0 });
        assert_eq!(
            classify_bottom_boundary(&g, 0.1 * (2.0 * PI - 0.3)),
            BoundaryClass::Endpoint { index: 2 }
        );
        assert_eq!(
            classify_bottom_boundary(&g, 0.1 * (-PI + 0.1)),
            BoundaryClass::Dirichlet { index: -1 }
        );
    }

    #[test]
    fn warped_geometry_is_valid_and_deterministic() {
        let g = build_warped_geometry(0.1, 0.3, 0.3, 7, Regime::Robin { k: 10.0 }).unwrap();
        let h = build_warped_geometry(0.1, 0.3, 0.3, 7, Regime::Robin { k: 10.0 }).unwrap();
        for j in -20..=20 {
            assert_eq!(g.segment(j), h.segment(j));
        }
        let r = validate_assumptions(&g, 100);
        assert!(r.passed(), "{:?}", r.failures);
        assert!((r.c1_declared - 1.0 / 0.7).abs() < 1e-12);
        assert!(r.c1_measured <= r.c1_declared + 1e-12);
        assert!(r.c1_measured > 1.4);
        assert!(r.placement_error < 1e-12);
        let other = build_warped_geometry(0.1, 0.3, 0.3, 8, Regime::Robin { k: 10.0 }).unwrap();
        assert_ne!(g.segment(3), other.segment(3));
    }

    #[test]
    fn zero_warp_is_periodic() {
        let g = build_warped_geometry(0.1, 0.3, 0.0, 1, Regime::Robin { k: 10.0 }).unwrap();
        for j in -5..=5 {
            assert_eq!(g.point(j), PI * j as f64);
        }
    }

    #[test]
    fn hand_built_overlap_is_reported() {
        let g = build_periodic_geometry(0.1, 0.3, Regime::Robin { k: 10.0 })
            .unwrap()
            .with_half_lengths(2, 0.3, 3.0);
        let r = validate_assumptions(&g, 5);
        assert!(r.fails(Assumption::NonOverlap));
        let f = r.failures.iter().find(|f| f.assumption == Assumption::NonOverlap).unwrap();
        assert_eq!(f.index, Some(3));
        assert!(f.to_string().contains("non-overlap"));
    }

    #[test]
    fn periodic_ingredients() {
        let eps = 0.1;
        let eta = eta_for(eps, 10.0, 0.0).unwrap();
        let g = build_periodic_geometry(eps, eta, Regime::Robin { k: 10.0 }).unwrap();
        let mu = mu_schedule(eps, eta, 10.0).unwrap().mu;
        let f = corrector_ingredients(&g, mu).unwrap();
        for j in -3..=3 {
            assert!((f.d(j) - 1.0).abs() < 1e-14);
            let (a, b) = f.alpha(j);
            assert!((a - 0.5).abs() < 1e-14 && (b - 0.5).abs() < 1e-14);
        }
        assert!(f.phi(0.37).unwrap().abs() < 1e-13);
        assert!(corrector_ingredients(&g, mu + 0.5).is_err());
    }

    #[test]
    fn blend_midpoint() {
        let eps = 0.1;
        let g = build_warped_geometry(eps, 0.3, 0.3, 3, Regime::Robin { k: 1.0 / (eps * -(0.3f64.ln())) })
            .unwrap();
        let f = corrector_ingredients(&g, 0.0).unwrap();
        let j = 4;
        let mid = f.g(eps * PI * (j as f64 + 0.5));
        assert!((mid - 0.5 * (f.d(j) + f.d(j + 1))).abs() < 1e-12);
        assert!((f.g(eps * PI * j as f64 + 1e-6) - f.d(j)).abs() < 1e-12);
        for j in -10..=10 {
            assert!(f.d(j) > 0.7 * 0.5 && f.d(j) < 1.3 + 0.05);
        }
    }

    #[test]
    fn corrector_on_segment_centre_and_far_field() {
        let eps = 0.05;
        let eta = eta_for(eps, 10.0, 0.0).unwrap();
        let g = build_periodic_geometry(eps, eta, Regime::Robin { k: 10.0 }).unwrap();
        let f = corrector_ingredients(&g, 0.0).unwrap();
        assert!((f.value(0.0, 0.0).unwrap() + 1.0).abs() < 1e-14);
        assert!((f.value(eps * PI * 3.0, 0.0).unwrap() + 1.0).abs() < 1e-14);
        // Outer and layer parts cancel up to the exponentially small X.
        assert!(f.value(0.3, 1.0).unwrap().abs() < 1e-12);
        assert!(matches!(f.value(eps * eta, 0.0), Err(Error::Endpoint { .. })));
    }

    #[test]
    fn document_round_trip() {
        let g = build_warped_geometry(0.1, 0.3, 0.3, 11, Regime::Robin { k: 10.0 })
            .unwrap()
            .with_point(0, 0.01);
        let doc = GeometryDocument::from_geometry(&g);
        let text = doc.to_json_string().unwrap();
        let back = GeometryDocument::from_json_str(&text).unwrap().build().unwrap();
        assert_eq!(back, g);
        assert!(GeometryDocument::from_json_str(r#"{"epsilon":0.1,"eta":0.3,"regime":"dirichlet","bogus":1}"#).is_err());
    }

    fn periodic_field_setup(eps: f64) -> AlternationGeometry {
        let eta = eta_for(eps, 10.0, 0.0).unwrap();
        build_periodic_geometry(eps, eta, Regime::Robin { k: 10.0 }).unwrap()
    }

    #[test]
    fn corrector_is_period_translation_invariant() {
        let g = periodic_field_setup(0.1);
        let f = corrector_ingredients(&g, 0.0).unwrap();
        let shift = 0.1 * PI;
        for &(x1, x2) in &[(0.013, 0.002), (0.05, 0.0), (0.2, 0.03), (-0.11, 0.4)] {
            let a = f.value(x1, x2).unwrap();
            let b = f.value(x1 + 3.0 * shift, x2).unwrap();
            assert!((a - b).abs() < 1e-11, "{a} vs {b}");
        }
    }

    #[test]
    fn corrector_boundary_traces() {
        let eps = 0.05;
        for g in [
            periodic_field_setup(eps),
            build_warped_geometry(eps, eta_for(eps, 10.0, 0.0).unwrap(), 0.3, 5, Regime::Robin { k: 10.0 })
                .unwrap(),
        ] {
            let mu = 0.0;
            let f = corrector_ingredients(&g, mu).unwrap();
            for j in -3..=3 {
                let (l, r) = g.segment_bounds(j);
                for t in [0.3, 0.5, 0.7] {
                    let x = l + t * (r - l);
                    assert!((f.value(x, 0.0).unwrap() + 1.0).abs() < 1e-12);
                }
                let next_l = g.segment_bounds(j + 1).0;
                for t in [0.2, 0.5, 0.8] {
                    let x = r + t * (next_l - r);
                    assert_eq!(classify_bottom_boundary(&g, x), BoundaryClass::Robin);
                    let target = -f.strength() * (1.0 + eps * f.phi(x).unwrap()) * g.diffeo().d1(x);
                    let slope = f.gradient(x, 0.0).unwrap()[1];
                    assert!((slope - target).abs() < 1e-4 * target.abs(), "{slope} vs {target}");
                }
            }
        }
    }

    #[test]
    fn corrector_stays_bounded() {
        let g = periodic_field_setup(0.1);
        let f = corrector_ingredients(&g, 0.0).unwrap();
        let mut sup: f64 = 0.0;
        for i in 0..200 {
            for k in 0..40 {
                let x1 = -0.3 + 0.6 * (i as f64 + 0.37) / 200.0;
                let x2 = 0.5 * k as f64 / 40.0;
                sup = sup.max(f.value(x1, x2).unwrap().abs());
            }
        }
        assert!(sup < 3.0, "sup |W| = {sup}");
    }
}
