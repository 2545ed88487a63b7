//! ε-sweeps comparing the perturbed operator with its homogenized limits.
//!
//! Every runner returns records sorted by `(ε descending, τ, observable,
//! probe)`; sweep points run in parallel and are independent.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::discretize::{
    assemble_cell, assemble_strip, build_cell_mesh_with, build_strip_mesh, eigensolve_lowest_seeded,
    norms, quasimode_rayleigh, AssembledOperator, Mesh, MeshPolicy, NormKind, OperatorKind,
    PhysicsConfig, Potential,
};
use crate::error::{Error, Result};
use crate::geometry::{
    build_periodic_geometry, build_warped_geometry, classify_bottom_boundary, corrector_ingredients,
    AlternationGeometry, BoundaryClass, Regime,
};
use crate::model1d::{
    eta_for, model_spectrum, mu_schedule, project_mean, q_apply_inverse, solve_bottom_root,
    RobinCoefficient,
};

type C = Complex64;

const EIGEN_TOL: f64 = 1e-11;

/// Which boundary regime the sweep exercises.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RegimeSpec {
    /// `η = exp(−1/(ε(K+μ₀)))`.
    Robin {
        #[serde(rename = "K")]
        k: f64,
        #[serde(default)]
        mu0: f64,
    },
    /// Fixed `η`.
    Dirichlet { eta: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum GeometryTemplate {
    #[default]
    Periodic,
    Warped {
        delta: f64,
        #[serde(default)]
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepPlan {
    /// Strictly descending.
    pub epsilons: Vec<f64>,
    pub regime: RegimeSpec,
    #[serde(default)]
    pub geometry: GeometryTemplate,
    #[serde(default)]
    pub physics: PhysicsConfig,
    /// Coarsest mesh; strips use it per cell.
    pub mesh: MeshPolicy,
    /// Mesh levels `h, h/2, h/4, …` combined by Richardson extrapolation
    /// for cell eigenvalues and quasimode quotients.
    #[serde(default = "default_levels")]
    pub levels: usize,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    #[serde(default)]
    pub taus: Vec<f64>,
    #[serde(default = "default_bands")]
    pub bands: usize,
    /// Target physical half-length `L` of strips; probes live in `|x₁| ≤ L/2`.
    #[serde(default = "default_strip_length")]
    pub strip_length: f64,
    /// Repeat the largest-ε strip point with `2L`.
    #[serde(default = "default_true")]
    pub check_truncation: bool,
    #[serde(default)]
    pub seed: u64,
}

fn default_levels() -> usize {
    1
}

fn default_kappa() -> f64 {
    0.5
}

fn default_bands() -> usize {
    3
}

fn default_strip_length() -> f64 {
    2.0 * PI
}

fn default_true() -> bool {
    true
}

impl SweepPlan {
    pub fn new(epsilons: Vec<f64>, regime: RegimeSpec, mesh: MeshPolicy) -> Self {
        Self {
            epsilons,
            regime,
            geometry: GeometryTemplate::Periodic,
            physics: PhysicsConfig::default(),
            mesh,
            levels: default_levels(),
            kappa: default_kappa(),
            taus: Vec::new(),
            bands: default_bands(),
            strip_length: default_strip_length(),
            check_truncation: true,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilons.is_empty() {
            return Err(Error::Config("epsilons: empty sweep".into()));
        }
        if self.epsilons.iter().any(|&e| !(e > 0.0 && e < 1.0)) {
            return Err(Error::Config("epsilons: values must lie in (0, 1)".into()));
        }
        if self.epsilons.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::Config("epsilons: must be strictly descending".into()));
        }
        if !(self.kappa > 0.0 && self.kappa < 1.0) {
            return Err(Error::Config(format!("kappa: {} outside (0, 1)", self.kappa)));
        }
        if let Some(t) = self.taus.iter().find(|t| !(t.abs() <= 1.0 - self.kappa)) {
            return Err(Error::Config(format!(
                "taus: |{t}| exceeds 1 - kappa = {}",
                1.0 - self.kappa
            )));
        }
        if self.levels == 0 || self.levels > 3 {
            return Err(Error::Config(format!("levels: {} outside 1..=3", self.levels)));
        }
        if self.bands == 0 {
            return Err(Error::Config("bands: must be positive".into()));
        }
        if !(self.strip_length > 0.0 && self.strip_length.is_finite()) {
            return Err(Error::Config("strip_length: must be positive".into()));
        }
        match self.regime {
            RegimeSpec::Robin { k, mu0 } => {
                if !(k >= 0.0 && mu0 >= 0.0 && k + mu0 > 0.0) {
                    return Err(Error::Config(format!(
                        "regime: need K, mu0 ≥ 0 with K + mu0 > 0 (K = {k}, mu0 = {mu0})"
                    )));
                }
            }
            RegimeSpec::Dirichlet { eta } => {
                if !(eta > 0.0 && eta <= FRAC_PI_2) {
                    return Err(Error::Config(format!("regime: eta = {eta} outside (0, pi/2]")));
                }
            }
        }
        self.physics
            .check()
            .map_err(|e| Error::Config(format!("physics: {e}")))?;
        let (a, b) = self.mesh.nominal();
        if a < 8 || b < 8 {
            return Err(Error::Config("mesh: counts must be at least 8".into()));
        }
        Ok(())
    }

    fn eta_at(&self, eps: f64) -> Result<f64> {
        match self.regime {
            RegimeSpec::Robin { k, mu0 } => eta_for(eps, k, mu0),
            RegimeSpec::Dirichlet { eta } => Ok(eta),
        }
    }

    /// `μ(ε)` of the Robin schedule; zero in the Dirichlet regime.
    fn mu_at(&self, eps: f64, eta: f64) -> Result<f64> {
        match self.regime {
            RegimeSpec::Robin { k, .. } => Ok(mu_schedule(eps, eta, k)?.mu),
            RegimeSpec::Dirichlet { .. } => Ok(0.0),
        }
    }

    fn geometry_at(&self, eps: f64) -> Result<AlternationGeometry> {
        let eta = self.eta_at(eps)?;
        let regime = match self.regime {
            RegimeSpec::Robin { k, .. } => Regime::Robin { k },
            RegimeSpec::Dirichlet { .. } => Regime::Dirichlet,
        };
        match self.geometry {
            GeometryTemplate::Periodic => build_periodic_geometry(eps, eta, regime),
            GeometryTemplate::Warped { delta, seed } => {
                build_warped_geometry(eps, eta, delta, seed, regime)
            }
        }
    }

    fn strip_cells(&self, eps: f64, factor: f64) -> usize {
        ((factor * self.strip_length / (eps * PI)).ceil() as usize).max(8)
    }
}

/// One measured quantity at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub epsilon: f64,
    pub tau: Option<f64>,
    pub observable: String,
    /// Probe name, `max` for the probe maximum, `None` for eigenvalue data.
    pub probe: Option<String>,
    pub value: f64,
    pub reference: f64,
    /// Nonnegative.
    pub error: f64,
    pub theory_bound: f64,
    pub eta: f64,
    pub mu: f64,
    pub mesh_n1: usize,
    pub mesh_n2: usize,
    pub seed: u64,
}

struct Point {
    eps: f64,
    eta: f64,
    mu: f64,
    n1: usize,
    n2: usize,
    seed: u64,
}

impl Point {
    fn record(
        &self,
        observable: &str,
        tau: Option<f64>,
        probe: Option<&str>,
        value: f64,
        reference: f64,
        error: f64,
        theory_bound: f64,
    ) -> ConvergenceRecord {
        ConvergenceRecord {
            epsilon: self.eps,
            tau,
            observable: observable.to_string(),
            probe: probe.map(str::to_string),
            value,
            reference,
            error,
            theory_bound,
            eta: self.eta,
            mu: self.mu,
            mesh_n1: self.n1,
            mesh_n2: self.n2,
            seed: self.seed,
        }
    }
}

/// Least-squares fit of `ln error` against `ln ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
    pub points: usize,
    /// `|slope| < 0.1`: the errors are flat, typically a discretization floor.
    pub warning: bool,
}

/// Fits the last `last` points (all when `None`).
pub fn rate_fit(points: &[(f64, f64)], last: Option<usize>) -> Result<RateFit> {
    let used = &points[points.len() - last.unwrap_or(points.len()).min(points.len())..];
    if used.len() < 2 {
        return Err(Error::Precondition(format!(
            "rate fit needs at least 2 points, got {}",
            used.len()
        )));
    }
    if used.iter().any(|&(e, err)| !(e > 0.0 && err > 0.0)) {
        return Err(Error::Precondition("rate fit needs positive epsilon and error".into()));
    }
    let xs: Vec<f64> = used.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = used.iter().map(|p| p.1.ln()).collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("rate fit needs distinct epsilons".into()));
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let ss_tot: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let r2 = if ss_tot == 0.0 { 1.0 } else { 1.0 - ss_res / ss_tot };
    Ok(RateFit {
        slope,
        intercept,
        r2,
        points: used.len(),
        warning: slope.abs() < 0.1,
    })
}

/// Extrapolates values on meshes `h, h/2, h/4` assuming `a·h + b·h²` errors.
pub fn richardson(values: &[f64]) -> f64 {
    match values {
        [v] => *v,
        [a, b] => 2.0 * b - a,
        [a, b, c] => (8.0 * c - 6.0 * b + a) / 3.0,
        _ => values.last().copied().unwrap_or(f64::NAN),
    }
}

fn levels_of(plan: &SweepPlan) -> Vec<MeshPolicy> {
    (0..plan.levels).map(|l| plan.mesh.refined(1 << l)).collect()
}

fn cell_point(plan: &SweepPlan, eps: f64) -> Result<(AlternationGeometry, f64)> {
    if plan.geometry != GeometryTemplate::Periodic {
        return Err(Error::Regime("cell sweeps need the periodic geometry".into()));
    }
    if !matches!(plan.regime, RegimeSpec::Robin { .. }) {
        return Err(Error::Regime("cell sweeps need the Robin regime".into()));
    }
    if !plan.physics.magnetic.is_zero() || plan.physics.potential != Potential::Zero {
        return Err(Error::Regime("cell sweeps need A = 0 and V = 0".into()));
    }
    let geom = plan.geometry_at(eps)?;
    let mu = plan.mu_at(eps, geom.eta())?;
    Ok((geom, mu))
}

struct CellEigen {
    /// Extrapolated shifted eigenvalues.
    values: Vec<f64>,
    n1: usize,
    n2: usize,
}

fn cell_eigen(
    geom: &AlternationGeometry,
    physics: &PhysicsConfig,
    tau: f64,
    policies: &[MeshPolicy],
    count: usize,
    seed: u64,
) -> Result<CellEigen> {
    let mut per_level: Vec<Vec<f64>> = Vec::new();
    let mut dims = (0, 0);
    for &policy in policies {
        let mesh = build_cell_mesh_with(geom, policy)?;
        let op = assemble_cell(&mesh, tau, physics)?;
        let res = eigensolve_lowest_seeded(&op, count, EIGEN_TOL, seed)?;
        per_level.push(res.values);
        dims = (mesh.n1(), mesh.n2());
    }
    let values = (0..count)
        .map(|k| richardson(&per_level.iter().map(|v| v[k]).collect::<Vec<_>>()))
        .collect();
    Ok(CellEigen {
        values,
        n1: dims.0,
        n2: dims.1,
    })
}

fn band_envelope(eps: f64, strength: f64, kappa: f64, n: usize) -> f64 {
    (n as f64).powi(4) * eps.sqrt() * strength * (kappa.powf(-0.5) + (eps * strength).ln().abs())
}

fn sort_records(records: &mut [ConvergenceRecord]) {
    records.sort_by(|a, b| {
        b.epsilon
            .total_cmp(&a.epsilon)
            .then(a.tau.unwrap_or(0.0).total_cmp(&b.tau.unwrap_or(0.0)))
            .then(a.observable.cmp(&b.observable))
            .then(a.probe.cmp(&b.probe))
    });
}

fn collect_points(
    plan: &SweepPlan,
    run: impl Fn(f64) -> Result<Vec<ConvergenceRecord>> + Sync,
) -> Result<Vec<ConvergenceRecord>> {
    plan.validate()?;
    let parts: Vec<Result<Vec<ConvergenceRecord>>> =
        plan.epsilons.par_iter().map(|&e| run(e)).collect();
    let mut out = Vec::new();
    for p in parts {
        out.extend(p?);
    }
    sort_records(&mut out);
    Ok(out)
}

/// Band functions against the model spectrum, the bottom ordering, the
/// first-band span and the cell resolvent against `Q_μ⁻¹ ⊕ 0`.
///
/// Observables: `band_n` (extrapolated shifted `λ_n(0,ε)` against `Λ_n(μ)`),
/// `ordering` (`λ₁(0,ε) − λ₁(τ,ε)` clipped at zero, unshifted, base mesh),
/// `band1_span` (max minus min of unshifted `λ₁` over the τ grid) and
/// `cell_resolvent` (relative `L²` distance).
pub fn run_band_sweep(plan: &SweepPlan) -> Result<Vec<ConvergenceRecord>> {
    collect_points(plan, |eps| band_point(plan, eps))
}

fn band_point(plan: &SweepPlan, eps: f64) -> Result<Vec<ConvergenceRecord>> {
    let (geom, mu) = cell_point(plan, eps)?;
    let k = match plan.regime {
        RegimeSpec::Robin { k, .. } => k,
        RegimeSpec::Dirichlet { .. } => unreachable!("checked by cell_point"),
    };
    let b = plan.physics.b;
    let coeff = RobinCoefficient::new(b, k, mu)?;
    let model: Vec<f64> = model_spectrum(coeff, plan.bands, 1e-13)?
        .into_iter()
        .map(|m| m.value)
        .collect();
    let policies = levels_of(plan);
    let bottom = cell_eigen(&geom, &plan.physics, 0.0, &policies, plan.bands, plan.seed)?;
    let mut point = Point {
        eps,
        eta: geom.eta(),
        mu,
        n1: bottom.n1,
        n2: bottom.n2,
        seed: plan.seed,
    };
    let strength = k + mu;
    let mut out = Vec::new();
    for n in 0..plan.bands {
        let v = bottom.values[n];
        out.push(point.record(
            &format!("band_{}", n + 1),
            Some(0.0),
            None,
            v,
            model[n],
            (v - model[n]).abs(),
            band_envelope(eps, strength, plan.kappa, n + 1),
        ));
    }
    let mut taus = plan.taus.clone();
    if !taus.contains(&0.0) {
        taus.push(0.0);
    }
    taus.sort_by(f64::total_cmp);
    let base = plan.mesh;
    let mesh = build_cell_mesh_with(&geom, base)?;
    point.n1 = mesh.n1();
    point.n2 = mesh.n2();
    let per_tau: Vec<(f64, f64, f64)> = taus
        .par_iter()
        .map(|&tau| -> Result<(f64, f64, f64)> {
            let op = assemble_cell(&mesh, tau, &plan.physics)?;
            let lam = eigensolve_lowest_seeded(&op, 1, EIGEN_TOL, plan.seed)?.values[0];
            let res = cell_resolvent_error(&mesh, &op, coeff)?;
            Ok((tau, lam + tau * tau / (eps * eps), res))
        })
        .collect::<Result<_>>()?;
    let floor = per_tau
        .iter()
        .find(|t| t.0 == 0.0)
        .map(|t| t.1)
        .expect("tau grid contains zero");
    let envelope = band_envelope(eps, strength, plan.kappa, 1);
    for &(tau, lam, res) in &per_tau {
        out.push(point.record("ordering", Some(tau), None, lam, floor, (floor - lam).max(0.0), 1e-8));
        out.push(point.record("cell_resolvent", Some(tau), None, res, 0.0, res, envelope));
    }
    let hi = per_tau.iter().map(|t| t.1).fold(f64::NEG_INFINITY, f64::max);
    let lo = per_tau.iter().map(|t| t.1).fold(f64::INFINITY, f64::min);
    let tmax = taus.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    let leading = tmax * tmax / (eps * eps);
    out.push(point.record(
        "band1_span",
        None,
        None,
        hi - lo,
        leading,
        (hi - lo - leading).abs(),
        leading,
    ));
    Ok(out)
}

/// `‖A⁻¹Mf − (Q_μ⁻¹F ⊕ 0)‖/‖f‖` for `f = g(x₂)(1 + cos 2ξ₁/2)`.
fn cell_resolvent_error(mesh: &Mesh, op: &AssembledOperator, coeff: RobinCoefficient) -> Result<f64> {
    let eps = mesh.epsilon();
    let f = mesh.sample(|x1, x2| {
        let g = (0.5 * x2).cos() + (-2.0 * x2).exp();
        C::new(g * (1.0 + 0.5 * (2.0 * x1 / eps).cos()), 0.0)
    });
    let u = op.resolvent_at(C::new(0.0, 0.0))?.solve(&f)?;
    let split = project_mean(&f, mesh.xi_weights())?;
    let mean: Vec<f64> = split.mean.iter().map(|c| c.re).collect();
    let q = q_apply_inverse(coeff, mesh.x2(), &mean)?;
    let n1 = mesh.n1();
    let diff: Vec<C> = (0..mesh.len()).map(|p| u[p] - q[p / n1]).collect();
    Ok(norms(&diff, mesh, NormKind::L2)? / norms(&f, mesh, NormKind::L2)?)
}

/// Bottom of the spectrum against the root `Λ(ε,μ)` and its leading term,
/// plus the quasimode mismatch `|R(Ψ̊) − Λ|`.
pub fn run_bottom_asymptotics(plan: &SweepPlan) -> Result<Vec<ConvergenceRecord>> {
    collect_points(plan, |eps| bottom_point(plan, eps))
}

fn bottom_point(plan: &SweepPlan, eps: f64) -> Result<Vec<ConvergenceRecord>> {
    let (geom, mu) = cell_point(plan, eps)?;
    let k = match plan.regime {
        RegimeSpec::Robin { k, .. } => k,
        RegimeSpec::Dirichlet { .. } => unreachable!("checked by cell_point"),
    };
    let coeff = RobinCoefficient::new(plan.physics.b, k, mu)?;
    let root = solve_bottom_root(eps, coeff, 1e-13)?;
    let policies = levels_of(plan);
    let lam = cell_eigen(&geom, &plan.physics, 0.0, &policies, 1, plan.seed)?;
    let mut quotients = Vec::new();
    for &policy in &policies {
        let mesh = build_cell_mesh_with(&geom, policy)?;
        quotients.push(quasimode_rayleigh(&mesh, &geom, &plan.physics, mu, root.value)?.rayleigh);
    }
    let rq = richardson(&quotients);
    let point = Point {
        eps,
        eta: geom.eta(),
        mu,
        n1: lam.n1,
        n2: lam.n2,
        seed: plan.seed,
    };
    let strength = k + mu;
    let eta = geom.eta();
    let envelope = eta.sqrt() * strength + (eps * eta * strength).sqrt();
    let l1 = lam.values[0];
    Ok(vec![
        point.record("bottom_vs_root", Some(0.0), None, l1, root.value, (l1 - root.value).abs(), envelope),
        point.record("bottom_vs_leading", Some(0.0), None, l1, root.leading, (l1 - root.leading).abs(), envelope),
        point.record("quasimode_mismatch", Some(0.0), None, rq, root.value, (rq - root.value).abs(), envelope),
    ])
}

/// Deterministic probe right-hand sides, supported in `|x₁| ≤ ℓ`.
pub const PROBES: [&str; 5] = ["mode", "bump", "oscillatory", "boundary", "random"];

fn probe_values(name: &str, ell: f64, seed: u64) -> impl Fn(f64, f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
    let coef: Vec<(f64, f64)> = (0..16)
        .map(|_| (rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 * PI))
        .collect();
    let kind = PROBES.iter().position(|p| *p == name).unwrap_or(0);
    move |x1: f64, x2: f64| {
        if x1.abs() >= ell {
            return 0.0;
        }
        let envelope = (FRAC_PI_2 * x1 / ell).cos().powi(2);
        envelope
            * match kind {
                0 => (0.5 * x2).cos(),
                1 => (-(x1 * x1 + (x2 - FRAC_PI_2).powi(2)) / 0.5).exp(),
                2 => (4.0 * x1).cos() * (3.0 * x2).sin(),
                3 => (-4.0 * x2).exp(),
                _ => coef
                    .iter()
                    .enumerate()
                    .map(|(i, (c, ph))| {
                        let (kx, ky) = ((i % 4) as f64, (i / 4 + 1) as f64);
                        c * (kx * PI * x1 / ell + ph).cos() * (ky * x2).sin()
                    })
                    .sum::<f64>(),
            }
    }
}

/// Probe grid functions normalized to unit discrete `L²` norm.
fn probes(mesh: &Mesh, ell: f64, seed: u64) -> Result<Vec<(&'static str, Vec<C>)>> {
    PROBES
        .iter()
        .map(|&name| {
            let f = probe_values(name, ell, seed);
            let v = mesh.sample(|x1, x2| C::new(f(x1, x2), 0.0));
            let n = norms(&v, mesh, NormKind::L2)?;
            if !(n > 0.0) {
                return Err(Error::Precondition(format!("probe {name} vanishes on the mesh")));
            }
            Ok((name, v.into_iter().map(|x| x / n).collect()))
        })
        .collect()
}

fn difference_norm(a: &[C], b: &[C], mesh: &Mesh, kind: NormKind) -> Result<f64> {
    let d: Vec<C> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    norms(&d, mesh, kind)
}

/// Adds a `max` row per observable.
fn with_probe_max(mut recs: Vec<ConvergenceRecord>) -> Vec<ConvergenceRecord> {
    let mut best: BTreeMap<String, ConvergenceRecord> = BTreeMap::new();
    for r in &recs {
        let entry = best.entry(r.observable.clone()).or_insert_with(|| r.clone());
        if r.error > entry.error {
            *entry = r.clone();
        }
    }
    for (_, mut r) in best {
        r.probe = Some("max".into());
        recs.push(r);
    }
    recs
}

fn robin_bound(eps: f64, strength: f64) -> f64 {
    eps * strength * (strength * eps).ln().abs()
}

/// Perturbed against Robin-homogenized strip resolvents `(H + i)⁻¹`.
///
/// Observables: `l2_mu` (against `H_R^(μ)`), `l2_zero` and `h1_zero`
/// (against `H_R^(0)`), `h1_corrected` (against `(1+W)(H_R^(μ)+i)⁻¹`) and,
/// at the largest ε, `truncation` (change of the `l2_mu` probe maximum when
/// the strip is doubled).
pub fn run_robin_resolvent(plan: &SweepPlan) -> Result<Vec<ConvergenceRecord>> {
    if !matches!(plan.regime, RegimeSpec::Robin { .. }) {
        return Err(Error::Regime("the Robin resolvent sweep needs the Robin regime".into()));
    }
    let largest = plan.epsilons.first().copied();
    collect_points(plan, |eps| {
        let mut recs = robin_point(plan, eps, 1.0)?;
        if plan.check_truncation && Some(eps) == largest {
            let doubled = robin_point(plan, eps, 2.0)?;
            recs.push(truncation_record(&recs, &doubled, "l2_mu"));
        }
        Ok(recs)
    })
}

fn truncation_record(
    base: &[ConvergenceRecord],
    doubled: &[ConvergenceRecord],
    observable: &str,
) -> ConvergenceRecord {
    let pick = |rs: &[ConvergenceRecord]| {
        rs.iter()
            .find(|r| r.observable == observable && r.probe.as_deref() == Some("max"))
            .cloned()
            .expect("probe maximum present")
    };
    let a = pick(base);
    let b = pick(doubled);
    let mut r = a.clone();
    r.observable = "truncation".into();
    r.probe = Some("max".into());
    r.value = b.error;
    r.reference = a.error;
    r.error = (b.error - a.error).abs();
    r.theory_bound = a.error;
    r
}

fn robin_point(plan: &SweepPlan, eps: f64, length_factor: f64) -> Result<Vec<ConvergenceRecord>> {
    let geom = plan.geometry_at(eps)?;
    let k = match plan.regime {
        RegimeSpec::Robin { k, .. } => k,
        RegimeSpec::Dirichlet { .. } => unreachable!("checked by the caller"),
    };
    let mu = plan.mu_at(eps, geom.eta())?;
    let cells = plan.strip_cells(eps, length_factor);
    let mesh = build_strip_mesh(&geom, cells, plan.mesh)?;
    let perturbed = assemble_strip(&mesh, &plan.physics, &geom, OperatorKind::Perturbed)?;
    let hom_mu = assemble_strip(&mesh, &plan.physics, &geom, OperatorKind::RobinHomogenized { mu })?;
    let hom_0 = assemble_strip(&mesh, &plan.physics, &geom, OperatorKind::RobinHomogenized { mu: 0.0 })?;
    let field = corrector_ingredients(&geom, mu)?;
    let w: Vec<f64> = (0..mesh.len())
        .map(|p| {
            let (x1, x2) = mesh.point(p);
            if x2 == 0.0 {
                if let BoundaryClass::Endpoint { .. } | BoundaryClass::Dirichlet { .. } =
                    classify_bottom_boundary(&geom, x1)
                {
                    return Ok(-1.0);
                }
            }
            field.value(x1, x2)
        })
        .collect::<Result<_>>()?;
    let rp = perturbed.resolvent()?;
    let rm = hom_mu.resolvent()?;
    let r0 = hom_0.resolvent()?;
    let point = Point {
        eps,
        eta: geom.eta(),
        mu,
        n1: mesh.n1(),
        n2: mesh.n2(),
        seed: plan.seed,
    };
    let strength = k + mu;
    let bound = robin_bound(eps, strength);
    let mut recs = Vec::new();
    for (name, f) in probes(&mesh, 0.5 * plan.strip_length, plan.seed)? {
        let up = rp.solve(&f)?;
        let um = rm.solve(&f)?;
        let u0 = r0.solve(&f)?;
        let corrected: Vec<C> = um.iter().zip(&w).map(|(u, w)| u * (1.0 + w)).collect();
        let e_mu = difference_norm(&up, &um, &mesh, NormKind::L2)?;
        let e_0 = difference_norm(&up, &u0, &mesh, NormKind::L2)?;
        let h_0 = difference_norm(&up, &u0, &mesh, NormKind::H1)?;
        let h_c = difference_norm(&up, &corrected, &mesh, NormKind::H1)?;
        recs.push(point.record("l2_mu", None, Some(name), e_mu, 0.0, e_mu, bound));
        recs.push(point.record("l2_zero", None, Some(name), e_0, 0.0, e_0, bound + mu));
        recs.push(point.record("h1_zero", None, Some(name), h_0, 0.0, h_0, strength.sqrt()));
        recs.push(point.record("h1_corrected", None, Some(name), h_c, 0.0, h_c, bound));
    }
    Ok(with_probe_max(recs))
}

/// Perturbed against Dirichlet-homogenized strip resolvents in `H¹`.
///
/// Observables: `h1_dirichlet` and, at the largest ε, `truncation`.
pub fn run_dirichlet_resolvent(plan: &SweepPlan) -> Result<Vec<ConvergenceRecord>> {
    if !matches!(plan.regime, RegimeSpec::Dirichlet { .. }) {
        return Err(Error::Regime("the Dirichlet resolvent sweep needs the Dirichlet regime".into()));
    }
    let largest = plan.epsilons.first().copied();
    collect_points(plan, |eps| {
        let mut recs = dirichlet_point(plan, eps, 1.0)?;
        if plan.check_truncation && Some(eps) == largest {
            let doubled = dirichlet_point(plan, eps, 2.0)?;
            recs.push(truncation_record(&recs, &doubled, "h1_dirichlet"));
        }
        Ok(recs)
    })
}

fn dirichlet_point(plan: &SweepPlan, eps: f64, length_factor: f64) -> Result<Vec<ConvergenceRecord>> {
    let geom = plan.geometry_at(eps)?;
    let eta = geom.eta();
    let cells = plan.strip_cells(eps, length_factor);
    let mesh = build_strip_mesh(&geom, cells, plan.mesh)?;
    let perturbed = assemble_strip(&mesh, &plan.physics, &geom, OperatorKind::Perturbed)?;
    let hom = assemble_strip(&mesh, &plan.physics, &geom, OperatorKind::DirichletHomogenized)?;
    let rp = perturbed.resolvent()?;
    let rd = hom.resolvent()?;
    let point = Point {
        eps,
        eta,
        mu: 0.0,
        n1: mesh.n1(),
        n2: mesh.n2(),
        seed: plan.seed,
    };
    let bound = eps.powf(0.25) * (eta.sin().ln().abs() + eta.cos()).powf(0.25);
    let mut recs = Vec::new();
    for (name, f) in probes(&mesh, 0.5 * plan.strip_length, plan.seed)? {
        let up = rp.solve(&f)?;
        let ud = rd.solve(&f)?;
        let e = difference_norm(&up, &ud, &mesh, NormKind::H1)?;
        recs.push(point.record("h1_dirichlet", None, Some(name), e, 0.0, e, bound));
    }
    Ok(with_probe_max(recs))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    RobinResolvent,
    DirichletResolvent,
    BandSweep,
    BottomAsymptotics,
}

impl ExperimentKind {
    pub fn csv_name(&self) -> &'static str {
        match self {
            Self::RobinResolvent => "robin_resolvent.csv",
            Self::DirichletResolvent => "dirichlet_resolvent.csv",
            Self::BandSweep => "band.csv",
            Self::BottomAsymptotics => "bottom.csv",
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Self::RobinResolvent => "robin_resolvent",
            Self::DirichletResolvent => "dirichlet_resolvent",
            Self::BandSweep => "band_sweep",
            Self::BottomAsymptotics => "bottom_asymptotics",
        }
    }
}

pub fn run_experiment(kind: ExperimentKind, plan: &SweepPlan) -> Result<Vec<ConvergenceRecord>> {
    match kind {
        ExperimentKind::RobinResolvent => run_robin_resolvent(plan),
        ExperimentKind::DirichletResolvent => run_dirichlet_resolvent(plan),
        ExperimentKind::BandSweep => run_band_sweep(plan),
        ExperimentKind::BottomAsymptotics => run_bottom_asymptotics(plan),
    }
}

pub const CSV_HEADER: &str =
    "epsilon,tau,observable,probe,value,reference,error,theory_bound,eta,mu,mesh_n1,mesh_n2,seed";

fn fmt_num(x: f64) -> String {
    format!("{x:.12e}")
}

pub fn write_records_csv(records: &[ConvergenceRecord], mut out: impl Write) -> Result<()> {
    writeln!(out, "{CSV_HEADER}")?;
    for r in records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{},{}",
            fmt_num(r.epsilon),
            r.tau.map(fmt_num).unwrap_or_default(),
            r.observable,
            r.probe.as_deref().unwrap_or(""),
            fmt_num(r.value),
            fmt_num(r.reference),
            fmt_num(r.error),
            fmt_num(r.theory_bound),
            fmt_num(r.eta),
            fmt_num(r.mu),
            r.mesh_n1,
            r.mesh_n2,
            r.seed
        )?;
    }
    Ok(())
}

/// The `(ε, error)` series of one observable: probe maxima for strip runs,
/// `τ = 0` rows for cell runs.
pub fn series(records: &[ConvergenceRecord], observable: &str) -> Vec<(f64, f64)> {
    records
        .iter()
        .filter(|r| r.observable == observable)
        .filter(|r| r.probe.is_none() || r.probe.as_deref() == Some("max"))
        .filter(|r| r.tau.is_none_or(|t| t == 0.0))
        .map(|r| (r.epsilon, r.error))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSummary {
    pub name: String,
    pub rate_fit: Option<RateFit>,
    pub records: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub experiment: String,
    pub observables: Vec<ObservableSummary>,
    pub seed: u64,
    pub timestamp: String,
    /// Strip errors are maxima over a fixed probe family, not operator norms.
    pub note: String,
}

pub fn summarize(
    kind: ExperimentKind,
    records: &[ConvergenceRecord],
    seed: u64,
    timestamp: &str,
) -> RunSummary {
    let mut names: Vec<&str> = records.iter().map(|r| r.observable.as_str()).collect();
    names.sort_unstable();
    names.dedup();
    let observables = names
        .into_iter()
        .map(|name| {
            let s = series(records, name);
            ObservableSummary {
                name: name.to_string(),
                rate_fit: if s.len() >= 3 { rate_fit(&s, None).ok() } else { None },
                records: records.iter().filter(|r| r.observable == name).count(),
            }
        })
        .collect();
    RunSummary {
        experiment: kind.label().to_string(),
        observables,
        seed,
        timestamp: timestamp.to_string(),
        note: "strip errors are maxima over five deterministic probes (mode, bump, oscillatory, boundary, random); operator norms are not computed".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_square_law_has_slope_two() {
        let pts: Vec<(f64, f64)> = [0.2, 0.1, 0.05].iter().map(|&e| (e, e * e)).collect();
        let fit = rate_fit(&pts, None).unwrap();
        assert!((fit.slope - 2.0).abs() < 1e-12);
        assert!((fit.r2 - 1.0).abs() < 1e-12);
        assert!(!fit.warning);
        let two = rate_fit(&[(0.2, 0.04), (0.1, 0.01)], None).unwrap();
        assert!((two.slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn flat_errors_raise_the_warning() {
        let pts = [(0.2, 1e-6), (0.1, 1e-6), (0.05, 1e-6)];
        let fit = rate_fit(&pts, None).unwrap();
        assert!(fit.slope.abs() < 1e-12 && fit.warning);
        assert!(rate_fit(&[(0.2, 0.0), (0.1, 1.0)], None).is_err());
        let tail = rate_fit(&[(0.4, 1.0), (0.2, 0.04), (0.1, 0.01)], Some(2)).unwrap();
        assert!((tail.slope - 2.0).abs() < 1e-12);
    }

    #[test]
    fn richardson_removes_first_and_second_order_terms() {
        let f = |h: f64| 1.5 + 0.3 * h - 0.7 * h * h;
        let v = richardson(&[f(0.1), f(0.05), f(0.025)]);
        assert!((v - 1.5).abs() < 1e-13);
    }

    #[test]
    fn plan_validation_names_the_offending_field() {
        let mut plan = SweepPlan::new(
            vec![0.1, 0.2],
            RegimeSpec::Robin { k: 10.0, mu0: 0.0 },
            MeshPolicy::Graded { n: 16 },
        );
        let msg = plan.validate().unwrap_err().to_string();
        assert!(msg.contains("epsilons"), "{msg}");
        plan.epsilons = vec![0.2, 0.1];
        plan.taus = vec![0.6];
        assert!(plan.validate().unwrap_err().to_string().contains("taus"));
        plan.taus = vec![0.5];
        plan.validate().unwrap();
    }

    #[test]
    fn probes_are_normalized_and_supported_in_the_middle() {
        let geom = build_periodic_geometry(0.2, 0.3, Regime::Dirichlet).unwrap();
        let mesh = build_strip_mesh(&geom, 10, MeshPolicy::Uniform { n1: 8, n2: 16 }).unwrap();
        let ell = 0.5 * mesh.half_length().unwrap();
        for (name, f) in probes(&mesh, ell, 3).unwrap() {
            assert!((norms(&f, &mesh, NormKind::L2).unwrap() - 1.0).abs() < 1e-12, "{name}");
            for (p, v) in f.iter().enumerate() {
                if mesh.point(p).0.abs() >= ell {
                    assert_eq!(*v, C::new(0.0, 0.0));
                }
            }
        }
    }

    #[test]
    fn csv_is_fixed_precision() {
        let rec = ConvergenceRecord {
            epsilon: 0.1,
            tau: None,
            observable: "l2_mu".into(),
            probe: Some("max".into()),
            value: 1.0 / 3.0,
            reference: 0.0,
            error: 1.0 / 3.0,
            theory_bound: 0.0,
            eta: 0.3,
            mu: 0.0,
            mesh_n1: 10,
            mesh_n2: 12,
            seed: 7,
        };
        let mut buf = Vec::new();
        write_records_csv(&[rec], &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let row = text.lines().nth(1).unwrap();
        assert_eq!(
            row,
            "1.000000000000e-1,,l2_mu,max,3.333333333333e-1,0.000000000000e0,3.333333333333e-1,0.000000000000e0,3.000000000000e-1,0.000000000000e0,10,12,7"
        );
    }
}
