//! Tensor meshes, Hermitian form assembly and the sparse solves built on it.
//!
//! Cell and strip meshes both use the stretched coordinate `ξ₁ = x₁/ε` and
//! physical `x₂ ∈ [0, π]`. Nodes are numbered row-major (`ξ₁` fastest).
//! Grid functions are stored on every node and vanish at eliminated
//! Dirichlet nodes, so operators with different Dirichlet sets on the same
//! mesh can be compared directly.

use std::f64::consts::{FRAC_PI_2, PI};
use std::io::Write;

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, Side};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cutoff::chi;
use crate::error::{Error, Result};
use crate::geometry::{classify_bottom_boundary, AlternationGeometry, BoundaryClass, Regime};
use crate::specfun::{eval_y, eval_y1_leading, eval_z_accelerated, PlanePoint, SeriesControl};

type C = Complex64;

const GRADE_FLOOR: f64 = 0.07;
const GRADE_LENGTH: f64 = 0.5;
const LAYER_OFFSET: f64 = 4.0;

/// How node positions are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MeshPolicy {
    /// `n1` intervals per period `π` in `ξ₁`, `n2` intervals across `x₂`.
    Uniform { n1: usize, n2: usize },
    /// Endpoint-aligned nodes with nominal spacing `π/n`, refined towards
    /// alternation endpoints and into the `ε`-thin bottom layer.
    Graded { n: usize },
}

impl MeshPolicy {
    pub fn nominal(&self) -> (usize, usize) {
        match *self {
            Self::Uniform { n1, n2 } => (n1, n2),
            Self::Graded { n } => (n, n),
        }
    }

    /// The same policy with every count multiplied by `factor`.
    pub fn refined(&self, factor: usize) -> Self {
        match *self {
            Self::Uniform { n1, n2 } => Self::Uniform {
                n1: n1 * factor,
                n2: n2 * factor,
            },
            Self::Graded { n } => Self::Graded { n: n * factor },
        }
    }

    fn check(&self) -> Result<()> {
        let (a, b) = self.nominal();
        if a < 8 || b < 8 {
            return Err(Error::Precondition(format!(
                "mesh counts must be at least 8, got ({a}, {b})"
            )));
        }
        Ok(())
    }
}

/// Role of a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeClass {
    Interior,
    Top,
    /// Bottom node on the Robin part.
    Robin,
    /// Bottom node strictly inside a Dirichlet segment.
    Dirichlet,
    /// Bottom node on a segment endpoint; treated as Dirichlet.
    Endpoint,
    /// Strip node on `x₁ = ±L`.
    Truncation,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MeshShape {
    /// One period `ξ₁ ∈ [−π/2, π/2)` with periodic identification.
    Cell,
    /// `|x₁| ≤ L = cells·επ` with Dirichlet ends.
    Strip { cells: usize },
}

#[derive(Debug, Clone)]
pub struct Mesh {
    epsilon: f64,
    shape: MeshShape,
    policy: MeshPolicy,
    xi: Vec<f64>,
    x2: Vec<f64>,
    wxi: Vec<f64>,
    wx2: Vec<f64>,
    bottom: Vec<NodeClass>,
    endpoint_spacing: f64,
    eta: f64,
}

fn c_profile(d: f64, lc: f64) -> f64 {
    GRADE_FLOOR + (1.0 - GRADE_FLOOR) * (d / lc).tanh().powi(2)
}

fn sigmoid(t: f64) -> f64 {
    1.0 / (1.0 + (-t).exp())
}

/// Nodes on `[a, b]` (both included) with local spacing `h·φ(x)`.
fn graded_nodes(a: f64, b: f64, h: f64, phi: impl Fn(f64) -> f64) -> Vec<f64> {
    const FINE: usize = 4000;
    let dx = (b - a) / FINE as f64;
    let mut cum = Vec::with_capacity(FINE + 1);
    cum.push(0.0);
    let mut prev = 1.0 / phi(a);
    for i in 1..=FINE {
        let cur = 1.0 / phi(a + dx * i as f64);
        let last = *cum.last().unwrap();
        cum.push(last + 0.5 * (prev + cur) * dx);
        prev = cur;
    }
    let total = cum[FINE];
    let n = ((total / h).round() as usize).max(2);
    let mut out = Vec::with_capacity(n + 1);
    out.push(a);
    let mut seg = 0;
    for k in 1..n {
        let target = total * k as f64 / n as f64;
        while cum[seg + 1] < target {
            seg += 1;
        }
        let t = (target - cum[seg]) / (cum[seg + 1] - cum[seg]);
        out.push(a + dx * (seg as f64 + t));
    }
    out.push(b);
    out
}

fn uniform_nodes(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

/// Graded `x₂` nodes resolving the `ε`-layer; `lc` is `None` without corners.
fn layer_nodes(eps: f64, n: usize, lc: Option<f64>) -> Vec<f64> {
    let h = PI / n as f64;
    let sb = eps.min(1.0);
    graded_nodes(0.0, PI, h, |y| {
        let base = sb + (1.0 - sb) * sigmoid((y - LAYER_OFFSET * eps) / eps);
        base * lc.map_or(1.0, |l| c_profile(y / eps, l))
    })
}

fn dual_widths(nodes: &[f64], period: Option<f64>) -> Vec<f64> {
    let n = nodes.len();
    (0..n)
        .map(|i| {
            let left = if i > 0 {
                nodes[i] - nodes[i - 1]
            } else {
                period.map_or(0.0, |p| nodes[0] + p - nodes[n - 1])
            };
            let right = if i + 1 < n {
                nodes[i + 1] - nodes[i]
            } else {
                period.map_or(0.0, |p| nodes[0] + p - nodes[n - 1])
            };
            0.5 * (left + right)
        })
        .collect()
}

fn bottom_class(c: BoundaryClass) -> NodeClass {
    match c {
        BoundaryClass::Dirichlet { .. } => NodeClass::Dirichlet,
        BoundaryClass::Robin => NodeClass::Robin,
        BoundaryClass::Endpoint { .. } => NodeClass::Endpoint,
    }
}

/// Largest spacing among intervals touching an alternation endpoint.
fn spacing_at_endpoints(xi: &[f64], bottom: &[NodeClass], period: Option<f64>) -> f64 {
    let n = xi.len();
    let mut worst: f64 = 0.0;
    for i in 0..n {
        let next = if i + 1 < n {
            Some((i + 1, xi[i + 1] - xi[i]))
        } else {
            period.map(|p| (0, xi[0] + p - xi[i]))
        };
        if let Some((j, h)) = next {
            let a = bottom[i];
            let b = bottom[j];
            let switch = a == NodeClass::Endpoint
                || b == NodeClass::Endpoint
                || (a == NodeClass::Robin && b == NodeClass::Dirichlet)
                || (a == NodeClass::Dirichlet && b == NodeClass::Robin);
            if switch {
                worst = worst.max(h);
            }
        }
    }
    worst
}

/// Cell mesh on a uniform `N₁ × N₂` grid (`ξ₁ = −π/2 + iπ/N₁`).
pub fn build_cell_mesh(geom: &AlternationGeometry, n1: usize, n2: usize) -> Result<Mesh> {
    build_cell_mesh_with(geom, MeshPolicy::Uniform { n1, n2 })
}

pub fn build_cell_mesh_with(geom: &AlternationGeometry, policy: MeshPolicy) -> Result<Mesh> {
    policy.check()?;
    if geom.kind() != crate::geometry::GeometryKind::Periodic
        || !geom.overrides().0.is_empty()
        || !geom.overrides().1.is_empty()
    {
        return Err(Error::Precondition(
            "cell meshes need the periodic geometry".into(),
        ));
    }
    let eps = geom.epsilon();
    let eta = geom.eta();
    let degenerate = geom.is_degenerate();
    let (xi, x2) = match policy {
        MeshPolicy::Uniform { n1, n2 } => {
            let mut xi = uniform_nodes(-FRAC_PI_2, FRAC_PI_2, n1);
            xi.pop();
            (xi, uniform_nodes(0.0, PI, n2))
        }
        MeshPolicy::Graded { n } => {
            let h = PI / n as f64;
            if degenerate {
                let mut xi = uniform_nodes(-FRAC_PI_2, FRAC_PI_2, n);
                xi.pop();
                (xi, layer_nodes(eps, n, None))
            } else {
                let lc = GRADE_LENGTH * eta;
                let dist = |x: f64| {
                    let d1 = (x - eta).abs().min((x + eta).abs());
                    d1.min((x + PI - eta).abs()).min((x - PI + eta).abs())
                };
                let phi = |x: f64| c_profile(dist(x), lc);
                let mut a = graded_nodes(-eta, eta, h, phi);
                let b = graded_nodes(eta, PI - eta, h, phi);
                a.pop();
                a.extend_from_slice(&b[..b.len() - 1]);
                let mut xi: Vec<f64> = a
                    .into_iter()
                    .map(|x| if x >= FRAC_PI_2 { x - PI } else { x })
                    .collect();
                xi.sort_by(f64::total_cmp);
                (xi, layer_nodes(eps, n, Some(lc)))
            }
        }
    };
    let bottom: Vec<NodeClass> = xi
        .iter()
        .map(|&s| {
            if degenerate {
                NodeClass::Dirichlet
            } else {
                bottom_class(classify_bottom_boundary(geom, eps * s))
            }
        })
        .collect();
    let endpoint_spacing = spacing_at_endpoints(&xi, &bottom, Some(PI));
    Ok(Mesh {
        epsilon: eps,
        shape: MeshShape::Cell,
        policy,
        wxi: dual_widths(&xi, Some(PI)),
        wx2: dual_widths(&x2, None),
        xi,
        x2,
        bottom,
        endpoint_spacing,
        eta: if degenerate { FRAC_PI_2 } else { eta },
    })
}

/// Cell mesh whose whole bottom carries one condition; used as the
/// `η → 0` (Robin) and `η = π/2` (Dirichlet) surrogates.
pub fn build_plain_cell_mesh(eps: f64, policy: MeshPolicy, bottom: NodeClass) -> Result<Mesh> {
    policy.check()?;
    if !(eps > 0.0) {
        return Err(Error::Parameter(format!("epsilon must be positive, got {eps}")));
    }
    if !matches!(bottom, NodeClass::Robin | NodeClass::Dirichlet) {
        return Err(Error::Precondition("bottom must be Robin or Dirichlet".into()));
    }
    let (n1, n2) = policy.nominal();
    let mut xi = uniform_nodes(-FRAC_PI_2, FRAC_PI_2, n1);
    xi.pop();
    let x2 = match policy {
        MeshPolicy::Uniform { .. } => uniform_nodes(0.0, PI, n2),
        MeshPolicy::Graded { n } => layer_nodes(eps, n, None),
    };
    Ok(Mesh {
        epsilon: eps,
        shape: MeshShape::Cell,
        policy,
        wxi: dual_widths(&xi, Some(PI)),
        wx2: dual_widths(&x2, None),
        bottom: vec![bottom; xi.len()],
        xi,
        x2,
        endpoint_spacing: 0.0,
        eta: if bottom == NodeClass::Dirichlet { FRAC_PI_2 } else { 0.0 },
    })
}

/// Strip mesh on `|x₁| ≤ L = cells·επ` with Dirichlet truncation.
pub fn build_strip_mesh(geom: &AlternationGeometry, cells: usize, policy: MeshPolicy) -> Result<Mesh> {
    policy.check()?;
    if cells < 8 {
        return Err(Error::Precondition(format!(
            "strip needs at least 8 cells on each side, got {cells}"
        )));
    }
    let eps = geom.epsilon();
    let eta = geom.eta();
    let half = PI * cells as f64;
    let degenerate = geom.is_degenerate();
    let (xi, x2) = match policy {
        MeshPolicy::Uniform { n1, n2 } => (
            uniform_nodes(-half, half, n1 * 2 * cells),
            uniform_nodes(0.0, PI, n2),
        ),
        MeshPolicy::Graded { n } => {
            let h = PI / n as f64;
            if degenerate {
                (uniform_nodes(-half, half, n * 2 * cells), layer_nodes(eps, n, None))
            } else {
                let ends: Vec<f64> = geom
                    .endpoints_in(-eps * half, eps * half)
                    .into_iter()
                    .map(|x| x / eps)
                    .collect();
                let mut breaks = vec![-half];
                breaks.extend(ends.iter().copied().filter(|&x| x > -half + 1e-9 && x < half - 1e-9));
                breaks.push(half);
                let lc = GRADE_LENGTH * eta;
                let dist = |x: f64| {
                    let k = ends.partition_point(|&e| e < x);
                    let mut d = f64::INFINITY;
                    if k > 0 {
                        d = d.min(x - ends[k - 1]);
                    }
                    if k < ends.len() {
                        d = d.min(ends[k] - x);
                    }
                    d
                };
                let mut xi = vec![-half];
                for w in breaks.windows(2) {
                    let seg = graded_nodes(w[0], w[1], h, |x| c_profile(dist(x), lc));
                    xi.extend_from_slice(&seg[1..]);
                }
                (xi, layer_nodes(eps, n, Some(lc)))
            }
        }
    };
    let last = xi.len() - 1;
    let bottom: Vec<NodeClass> = xi
        .iter()
        .enumerate()
        .map(|(i, &s)| {
            if i == 0 || i == last {
                NodeClass::Truncation
            } else if degenerate {
                NodeClass::Dirichlet
            } else {
                bottom_class(classify_bottom_boundary(geom, eps * s))
            }
        })
        .collect();
    let endpoint_spacing = spacing_at_endpoints(&xi, &bottom, None);
    Ok(Mesh {
        epsilon: eps,
        shape: MeshShape::Strip { cells },
        policy,
        wxi: dual_widths(&xi, None),
        wx2: dual_widths(&x2, None),
        xi,
        x2,
        bottom,
        endpoint_spacing,
        eta: if degenerate { FRAC_PI_2 } else { eta },
    })
}

impl Mesh {
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn shape(&self) -> MeshShape {
        self.shape
    }

    pub fn policy(&self) -> MeshPolicy {
        self.policy
    }

    pub fn n1(&self) -> usize {
        self.xi.len()
    }

    pub fn n2(&self) -> usize {
        self.x2.len()
    }

    pub fn len(&self) -> usize {
        self.xi.len() * self.x2.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn xi(&self) -> &[f64] {
        &self.xi
    }

    pub fn x2(&self) -> &[f64] {
        &self.x2
    }

    pub fn bottom(&self) -> &[NodeClass] {
        &self.bottom
    }

    /// Trapezoid weights in `ξ₁` (sum `π` per cell).
    pub fn xi_weights(&self) -> &[f64] {
        &self.wxi
    }

    pub fn x2_weights(&self) -> &[f64] {
        &self.wx2
    }

    pub fn half_length(&self) -> Option<f64> {
        match self.shape {
            MeshShape::Strip { cells } => Some(self.epsilon * PI * cells as f64),
            MeshShape::Cell => None,
        }
    }

    /// Largest spacing next to an alternation endpoint (0 without endpoints).
    pub fn endpoint_spacing(&self) -> f64 {
        self.endpoint_spacing
    }

    /// Whether the spacing next to every endpoint is at most `η/8`.
    pub fn refinement_met(&self) -> bool {
        self.endpoint_spacing <= self.eta / 8.0
    }

    pub fn index(&self, i: usize, k: usize) -> usize {
        k * self.xi.len() + i
    }

    /// Physical coordinates of node `p`.
    pub fn point(&self, p: usize) -> (f64, f64) {
        let n1 = self.xi.len();
        (self.epsilon * self.xi[p % n1], self.x2[p / n1])
    }

    pub fn class(&self, p: usize) -> NodeClass {
        let n1 = self.xi.len();
        let (i, k) = (p % n1, p / n1);
        if matches!(self.shape, MeshShape::Strip { .. }) && (i == 0 || i == n1 - 1) {
            NodeClass::Truncation
        } else if k + 1 == self.x2.len() {
            NodeClass::Top
        } else if k == 0 {
            self.bottom[i]
        } else {
            NodeClass::Interior
        }
    }

    /// Lumped mass `ε ωξ ωx` of node `p`.
    pub fn mass(&self, p: usize) -> f64 {
        let n1 = self.xi.len();
        self.epsilon * self.wxi[p % n1] * self.wx2[p / n1]
    }

    fn period(&self) -> Option<f64> {
        match self.shape {
            MeshShape::Cell => Some(PI),
            MeshShape::Strip { .. } => None,
        }
    }

    /// `ξ₁` edges as `(i, j, length, midpoint)`, including the periodic wrap.
    fn xi_edges(&self) -> Vec<(usize, usize, f64, f64)> {
        let n = self.xi.len();
        let mut out: Vec<_> = (0..n - 1)
            .map(|i| {
                let h = self.xi[i + 1] - self.xi[i];
                (i, i + 1, h, self.xi[i] + 0.5 * h)
            })
            .collect();
        if let Some(p) = self.period() {
            let h = self.xi[0] + p - self.xi[n - 1];
            out.push((n - 1, 0, h, self.xi[n - 1] + 0.5 * h));
        }
        out
    }

    /// Evaluates `f(x₁, x₂)` at every node.
    pub fn sample(&self, f: impl Fn(f64, f64) -> C) -> Vec<C> {
        (0..self.len())
            .map(|p| {
                let (x1, x2) = self.point(p);
                f(x1, x2)
            })
            .collect()
    }
}

/// Magnetic vector potential `A(x)`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MagneticPotential {
    #[default]
    Zero,
    Constant { a1: f64, a2: f64 },
    /// `A = ∇φ`, `φ = amplitude·sin(2x₁/ε)·cos x₂`; a pure gauge.
    Gauge { amplitude: f64 },
    /// `A = (−B x₂, 0)`.
    UniformField { strength: f64 },
}

impl MagneticPotential {
    pub fn eval(&self, x1: f64, x2: f64, eps: f64) -> (f64, f64) {
        match *self {
            Self::Zero => (0.0, 0.0),
            Self::Constant { a1, a2 } => (a1, a2),
            Self::Gauge { amplitude } => {
                let t = 2.0 * x1 / eps;
                (
                    amplitude * 2.0 / eps * t.cos() * x2.cos(),
                    -amplitude * t.sin() * x2.sin(),
                )
            }
            Self::UniformField { strength } => (-strength * x2, 0.0),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    #[default]
    Zero,
    Constant { value: f64 },
    /// `V = amplitude·cos(2x₁/ε)·sin² x₂`.
    Wave { amplitude: f64 },
}

impl Potential {
    pub fn eval(&self, x1: f64, x2: f64, eps: f64) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { value } => value,
            Self::Wave { amplitude } => amplitude * (2.0 * x1 / eps).cos() * x2.sin().powi(2),
        }
    }

    fn lower_bound(&self) -> f64 {
        match *self {
            Self::Zero => 0.0,
            Self::Constant { value } => value.min(0.0),
            Self::Wave { amplitude } => -amplitude.abs(),
        }
    }
}

/// Keeps every coefficient evaluation finite for `ε ≥ 1e-100` and `|x| ≤ 1e100`.
const MAX_COEFFICIENT: f64 = 1e100;

/// Coefficients of `(i∇ + A)² + V` and the Robin coefficient `b`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhysicsConfig {
    #[serde(default)]
    pub b: f64,
    #[serde(default)]
    pub magnetic: MagneticPotential,
    #[serde(default)]
    pub potential: Potential,
}

impl PhysicsConfig {
    pub fn robin(b: f64) -> Self {
        Self {
            b,
            ..Self::default()
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let p: Self = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("physics document: {e}")))?;
        p.check()?;
        Ok(p)
    }

    pub fn check(&self) -> Result<()> {
        let ok = |v: f64| v.abs() <= MAX_COEFFICIENT;
        let bounded = ok(self.b)
            && match self.magnetic {
                MagneticPotential::Zero => true,
                MagneticPotential::Constant { a1, a2 } => ok(a1) && ok(a2),
                MagneticPotential::Gauge { amplitude } => ok(amplitude),
                MagneticPotential::UniformField { strength } => ok(strength),
            }
            && match self.potential {
                Potential::Zero => true,
                Potential::Constant { value } => ok(value),
                Potential::Wave { amplitude } => ok(amplitude),
            };
        if bounded {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "physics coefficients must be finite and at most {MAX_COEFFICIENT:e} in magnitude"
            )))
        }
    }
}

/// Bottom condition of a strip operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum OperatorKind {
    /// Dirichlet on `γ_ε`, Robin `b` on `Γ_ε`.
    Perturbed,
    /// Robin `b + (K+μ)ϑ'(x₁)` on the whole bottom.
    RobinHomogenized { mu: f64 },
    /// Dirichlet on the whole bottom.
    DirichletHomogenized,
}

/// Compressed sparse rows with sorted, merged columns.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRows {
    pub dim: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<C>,
}

impl SparseRows {
    fn from_triplets(dim: usize, mut t: Vec<(usize, usize, C)>) -> Self {
        t.sort_by_key(|e| (e.0, e.1));
        let mut row_ptr = vec![0; dim + 1];
        let mut cols: Vec<usize> = Vec::with_capacity(t.len());
        let mut vals: Vec<C> = Vec::with_capacity(t.len());
        let mut last: Option<(usize, usize)> = None;
        for (r, c, v) in t {
            if last == Some((r, c)) {
                *vals.last_mut().unwrap() += v;
            } else {
                cols.push(c);
                vals.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..dim {
            row_ptr[r + 1] += row_ptr[r];
        }
        Self {
            dim,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn get(&self, r: usize, c: usize) -> C {
        let row = &self.cols[self.row_ptr[r]..self.row_ptr[r + 1]];
        match row.binary_search(&c) {
            Ok(k) => self.vals[self.row_ptr[r] + k],
            Err(_) => C::new(0.0, 0.0),
        }
    }

    pub fn apply(&self, x: &[C]) -> Vec<C> {
        (0..self.dim)
            .map(|r| {
                (self.row_ptr[r]..self.row_ptr[r + 1])
                    .map(|k| self.vals[k] * x[self.cols[k]])
                    .sum()
            })
            .collect()
    }

    /// `max |a_rc − conj(a_cr)|` over stored entries.
    pub fn hermitian_defect(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.cols[k];
                worst = worst.max((self.vals[k] - self.get(c, r).conj()).norm());
            }
        }
        worst
    }

    fn triplets_with_diag(&self, diag: impl Fn(usize) -> C) -> Vec<Triplet<usize, usize, C>> {
        let mut t = Vec::with_capacity(self.vals.len() + self.dim);
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                t.push(Triplet::new(r, self.cols[k], self.vals[k]));
            }
            t.push(Triplet::new(r, r, diag(r)));
        }
        t
    }
}

/// Discrete form matrix `A`, lumped mass and the map between nodes and
/// unknowns. `A` is Hermitian entry by entry.
#[derive(Debug, Clone)]
pub struct AssembledOperator {
    pub matrix: SparseRows,
    /// Lumped mass per unknown.
    pub mass: Vec<f64>,
    pub tau: f64,
    pub epsilon: f64,
    /// Whether `τ²/ε²` was subtracted inside the form.
    pub shifted: bool,
    node_of_dof: Vec<usize>,
    dof_of_node: Vec<usize>,
    n_nodes: usize,
    real: bool,
    lower_bound_hint: f64,
}

const NONE: usize = usize::MAX;

#[derive(Clone, Copy)]
enum BottomRule {
    Dirichlet,
    Robin(f64),
}

fn assemble_form(
    mesh: &Mesh,
    tau: f64,
    shifted: bool,
    physics: &PhysicsConfig,
    bottom_rule: impl Fn(usize) -> BottomRule,
) -> Result<AssembledOperator> {
    physics.check()?;
    let eps = mesh.epsilon;
    let n1 = mesh.n1();
    let n2 = mesh.n2();
    let nn = mesh.len();
    let is_strip = matches!(mesh.shape, MeshShape::Strip { .. });
    let mut dof_of_node = vec![NONE; nn];
    let mut node_of_dof = Vec::new();
    let mut robin = vec![None; n1];
    for i in 0..n1 {
        if let BottomRule::Robin(c) = bottom_rule(i) {
            robin[i] = Some(c);
        }
    }
    for k in 0..n2 {
        for i in 0..n1 {
            let eliminated = k + 1 == n2
                || (is_strip && (i == 0 || i == n1 - 1))
                || (k == 0 && robin[i].is_none());
            if !eliminated {
                dof_of_node[mesh.index(i, k)] = node_of_dof.len();
                node_of_dof.push(mesh.index(i, k));
            }
        }
    }
    let dim = node_of_dof.len();
    if dim == 0 {
        return Err(Error::Mesh("no unknowns left after elimination".into()));
    }
    let mut t: Vec<(usize, usize, C)> = Vec::with_capacity(10 * dim);
    let mut edge = |p: usize, r: usize, w: f64, h: f64, q: f64, diag_q2: f64| {
        let dp = dof_of_node[p];
        let dr = dof_of_node[r];
        let d = C::new(w * (1.0 / (h * h) + diag_q2 / 4.0), 0.0);
        let off = C::new(w * (-1.0 / (h * h) + q * q / 4.0), -w * q / h);
        if dp != NONE {
            t.push((dp, dp, d));
        }
        if dr != NONE {
            t.push((dr, dr, d));
        }
        if dp != NONE && dr != NONE {
            t.push((dp, dr, off));
            t.push((dr, dp, off.conj()));
        }
    };
    let xi_edges = mesh.xi_edges();
    let mut real = tau == 0.0 && physics.magnetic.is_zero();
    for k in 0..n2 {
        let y = mesh.x2[k];
        for &(i, j, h, mid) in &xi_edges {
            let a1 = physics.magnetic.eval(eps * mid, y, eps).0;
            let q = tau - eps * a1;
            let w = mesh.wx2[k] * h / eps;
            let dq = if shifted { q * q - 2.0 * tau * tau } else { q * q };
            edge(mesh.index(i, k), mesh.index(j, k), w, h, q, dq);
        }
    }
    for k in 0..n2 - 1 {
        let h = mesh.x2[k + 1] - mesh.x2[k];
        let ymid = mesh.x2[k] + 0.5 * h;
        for i in 0..n1 {
            let a2 = physics.magnetic.eval(eps * mesh.xi[i], ymid, eps).1;
            let q = -a2;
            if q != 0.0 {
                real = false;
            }
            let w = eps * mesh.wxi[i] * h;
            edge(mesh.index(i, k), mesh.index(i, k + 1), w, h, q, q * q);
        }
    }
    let mut robin_min: f64 = 0.0;
    for i in 0..n1 {
        if let Some(c) = robin[i] {
            let p = mesh.index(i, 0);
            if dof_of_node[p] != NONE && c != 0.0 {
                t.push((dof_of_node[p], dof_of_node[p], C::new(c * eps * mesh.wxi[i], 0.0)));
            }
            robin_min = robin_min.min(c);
        }
    }
    if !matches!(physics.potential, Potential::Zero) {
        for (d, &p) in node_of_dof.iter().enumerate() {
            let (x1, x2) = mesh.point(p);
            let v = physics.potential.eval(x1, x2, eps);
            t.push((d, d, C::new(v * mesh.mass(p), 0.0)));
        }
    }
    let mass: Vec<f64> = node_of_dof.iter().map(|&p| mesh.mass(p)).collect();
    let matrix = SparseRows::from_triplets(dim, t);
    if matrix.vals.iter().any(|v| v.im != 0.0) {
        real = false;
    }
    let base = if shifted { 0.0 } else { tau * tau / (eps * eps) };
    let lower_bound_hint =
        base - 0.5 - (1.0 + robin_min.abs()).powi(2) + physics.potential.lower_bound();
    Ok(AssembledOperator {
        matrix,
        mass,
        tau,
        epsilon: eps,
        shifted,
        node_of_dof,
        dof_of_node,
        n_nodes: nn,
        real,
        lower_bound_hint,
    })
}

fn check_resolved(mesh: &Mesh) -> Result<()> {
    if mesh.endpoint_spacing > 0.5 * mesh.eta {
        return Err(Error::Mesh(format!(
            "alternation unresolved: spacing {} next to an endpoint exceeds eta/2 = {}",
            mesh.endpoint_spacing,
            0.5 * mesh.eta
        )));
    }
    Ok(())
}

/// Cell operator `ε⁻²[(i∂_{ξ₁} − τ + εA₁)² − τ²] + (i∂₂ + A₂)² + V` with the
/// mesh's bottom classification: the shift `τ²/ε²` is removed inside every
/// edge term.
pub fn assemble_cell(mesh: &Mesh, tau: f64, physics: &PhysicsConfig) -> Result<AssembledOperator> {
    assemble_cell_with(mesh, tau, physics, true)
}

/// As [`assemble_cell`]; `shifted = false` keeps the `τ²/ε²` term.
pub fn assemble_cell_with(
    mesh: &Mesh,
    tau: f64,
    physics: &PhysicsConfig,
    shifted: bool,
) -> Result<AssembledOperator> {
    if mesh.shape != MeshShape::Cell {
        return Err(Error::Precondition("cell assembly needs a cell mesh".into()));
    }
    if !(tau.abs() <= 1.0) {
        return Err(Error::Parameter(format!("quasimomentum |tau| = {} exceeds 1", tau.abs())));
    }
    check_resolved(mesh)?;
    let b = physics.b;
    assemble_form(mesh, tau, shifted, physics, |i| match mesh.bottom[i] {
        NodeClass::Robin => BottomRule::Robin(b),
        _ => BottomRule::Dirichlet,
    })
}

/// Strip operator `(i∇ + A)² + V` with the requested bottom condition.
pub fn assemble_strip(
    mesh: &Mesh,
    physics: &PhysicsConfig,
    geom: &AlternationGeometry,
    kind: OperatorKind,
) -> Result<AssembledOperator> {
    if !matches!(mesh.shape, MeshShape::Strip { .. }) {
        return Err(Error::Precondition("strip assembly needs a strip mesh".into()));
    }
    if (mesh.epsilon - geom.epsilon()).abs() > 1e-15 * geom.epsilon() {
        return Err(Error::Precondition("mesh and geometry disagree on epsilon".into()));
    }
    let b = physics.b;
    let eps = mesh.epsilon;
    match kind {
        OperatorKind::Perturbed => {
            check_resolved(mesh)?;
            assemble_form(mesh, 0.0, false, physics, |i| match mesh.bottom[i] {
                NodeClass::Robin => BottomRule::Robin(b),
                _ => BottomRule::Dirichlet,
            })
        }
        OperatorKind::RobinHomogenized { mu } => {
            let k = match geom.regime() {
                Regime::Robin { k } => k,
                Regime::Dirichlet => {
                    return Err(Error::Regime(
                        "Robin homogenization needs the Robin regime".into(),
                    ))
                }
            };
            let diffeo = geom.diffeo();
            assemble_form(mesh, 0.0, false, physics, |i| match mesh.bottom[i] {
                NodeClass::Truncation => BottomRule::Dirichlet,
                _ => BottomRule::Robin(b + (k + mu) * diffeo.d1(eps * mesh.xi[i])),
            })
        }
        OperatorKind::DirichletHomogenized => {
            assemble_form(mesh, 0.0, false, physics, |_| BottomRule::Dirichlet)
        }
    }
}

impl AssembledOperator {
    pub fn dim(&self) -> usize {
        self.mass.len()
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    pub fn is_real(&self) -> bool {
        self.real
    }

    pub fn node_of_dof(&self) -> &[usize] {
        &self.node_of_dof
    }

    /// Whether node `p` carries an unknown.
    pub fn is_free(&self, p: usize) -> bool {
        self.dof_of_node[p] != NONE
    }

    pub fn restrict(&self, full: &[C]) -> Vec<C> {
        self.node_of_dof.iter().map(|&p| full[p]).collect()
    }

    pub fn extend(&self, dofs: &[C]) -> Vec<C> {
        let mut full = vec![C::new(0.0, 0.0); self.n_nodes];
        for (d, &p) in self.node_of_dof.iter().enumerate() {
            full[p] = dofs[d];
        }
        full
    }

    /// `ū·A·u` and `ū·M·u` of a grid function.
    pub fn form_and_mass(&self, full: &[C]) -> (f64, f64) {
        let u = self.restrict(full);
        let au = self.matrix.apply(&u);
        let a: C = u.iter().zip(&au).map(|(x, y)| x.conj() * y).sum();
        let m: f64 = u.iter().zip(&self.mass).map(|(x, w)| w * x.norm_sqr()).sum();
        (a.re, m)
    }

    fn faer_matrix(&self, diag: impl Fn(usize) -> C) -> Result<SparseColMat<usize, C>> {
        let t = self.matrix.triplets_with_diag(diag);
        SparseColMat::try_new_from_triplets(self.dim(), self.dim(), &t)
            .map_err(|e| Error::Solver(format!("sparse matrix construction failed: {e:?}")))
    }

    fn faer_matrix_real(&self, shift: f64) -> Result<SparseColMat<usize, f64>> {
        let mut t = Vec::with_capacity(self.matrix.vals.len() + self.dim());
        for r in 0..self.dim() {
            for k in self.matrix.row_ptr[r]..self.matrix.row_ptr[r + 1] {
                t.push(Triplet::new(r, self.matrix.cols[k], self.matrix.vals[k].re));
            }
            t.push(Triplet::new(r, r, -shift * self.mass[r]));
        }
        SparseColMat::try_new_from_triplets(self.dim(), self.dim(), &t)
            .map_err(|e| Error::Solver(format!("sparse matrix construction failed: {e:?}")))
    }

    /// Factorization of `A + iM` for repeated resolvent solves.
    pub fn resolvent(&self) -> Result<ResolventSolver<'_>> {
        self.resolvent_at(C::new(0.0, -1.0))
    }

    /// Factorization of `A − zM`.
    pub fn resolvent_at(&self, z: C) -> Result<ResolventSolver<'_>> {
        let m = self.faer_matrix(|r| -z * self.mass[r])?;
        let lu = m
            .sp_lu()
            .map_err(|e| Error::Solver(format!("LU factorization of A - zM failed: {e:?}")))?;
        Ok(ResolventSolver { op: self, lu, z })
    }
}

/// Factored `A + iM`.
pub struct ResolventSolver<'a> {
    op: &'a AssembledOperator,
    lu: faer::sparse::linalg::solvers::Lu<usize, C>,
    z: C,
}

impl ResolventSolver<'_> {
    /// `u = (H − z)⁻¹ f` on the grid, with a relative residual of at most
    /// `1e−10` unless the componentwise backward error is already at the
    /// rounding floor (`≤ 1e−12`).
    pub fn solve(&self, f: &[C]) -> Result<Vec<C>> {
        let op = self.op;
        if f.len() != op.n_nodes {
            return Err(Error::Precondition(format!(
                "grid function has {} values, mesh has {} nodes",
                f.len(),
                op.n_nodes
            )));
        }
        let n = op.dim();
        let rhs: Vec<C> = op
            .node_of_dof
            .iter()
            .zip(&op.mass)
            .map(|(&p, &w)| f[p] * w)
            .collect();
        let rhs_norm = norm2(&rhs);
        if rhs_norm == 0.0 {
            return Ok(vec![C::new(0.0, 0.0); op.n_nodes]);
        }
        let mut b = Mat::<C>::from_fn(n, 1, |i, _| rhs[i]);
        self.lu.solve_in_place(b.as_mut());
        let mut u: Vec<C> = (0..n).map(|i| b[(i, 0)]).collect();
        let residual = |u: &[C]| -> Vec<C> {
            let au = op.matrix.apply(u);
            (0..n)
                .map(|i| rhs[i] - au[i] + self.z * op.mass[i] * u[i])
                .collect()
        };
        let mut r = residual(&u);
        for _ in 0..3 {
            if norm2(&r) <= 1e-12 * rhs_norm {
                break;
            }
            let mut c = Mat::<C>::from_fn(n, 1, |i, _| r[i]);
            self.lu.solve_in_place(c.as_mut());
            for (i, x) in u.iter_mut().enumerate() {
                *x += c[(i, 0)];
            }
            r = residual(&u);
        }
        let rel = norm2(&r) / rhs_norm;
        if rel > 1e-10 {
            let backward = self.backward_error(&u, &r, &rhs);
            if backward > 1e-12 {
                return Err(Error::Solver(format!(
                    "resolvent residual {rel:e} exceeds 1e-10 (componentwise backward error {backward:e})"
                )));
            }
        }
        Ok(op.extend(&u))
    }

    /// `max_i |r_i| / (Σ_j |a_ij − z m_ij||u_j| + |(Mf)_i|)`.
    fn backward_error(&self, u: &[C], r: &[C], rhs: &[C]) -> f64 {
        let a = &self.op.matrix;
        (0..a.dim)
            .map(|i| {
                let mut scale = rhs[i].norm();
                for k in a.row_ptr[i]..a.row_ptr[i + 1] {
                    let j = a.cols[k];
                    let mut v = a.vals[k];
                    if j == i {
                        v -= self.z * self.op.mass[i];
                    }
                    scale += v.norm() * u[j].norm();
                }
                if scale == 0.0 {
                    0.0
                } else {
                    r[i].norm() / scale
                }
            })
            .fold(0.0, f64::max)
    }
}

pub fn resolvent_solve(op: &AssembledOperator, f: &[C]) -> Result<Vec<C>> {
    op.resolvent()?.solve(f)
}

fn norm2(x: &[C]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

fn dot(x: &[C], y: &[C]) -> C {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// Lowest eigenpairs of `Au = λMu`.
#[derive(Debug, Clone)]
pub struct SpectrumResult {
    /// Ascending.
    pub values: Vec<f64>,
    /// `M`-normalized grid functions on all nodes.
    pub vectors: Vec<Vec<C>>,
    /// `‖M^{−1/2}(Av − λMv)‖ / ‖M^{1/2}v‖` per pair.
    pub residuals: Vec<f64>,
    /// Residuals satisfy `r ≤ tolerance · max(|λ|, 1)` or sit at the rounding
    /// floor `64u‖M^{−1/2}AM^{−1/2}‖`.
    pub tolerance: f64,
    /// Krylov steps summed over restarts.
    pub iterations: usize,
    pub shift: f64,
}

pub const DEFAULT_EIGEN_SEED: u64 = 0x5EED_CE11;

pub fn eigensolve_lowest(op: &AssembledOperator, n: usize, tol: f64) -> Result<SpectrumResult> {
    eigensolve_lowest_seeded(op, n, tol, DEFAULT_EIGEN_SEED)
}

enum Factor {
    Real(faer::sparse::linalg::solvers::Llt<usize, f64>),
    Complex(faer::sparse::linalg::solvers::Llt<usize, C>),
}

impl Factor {
    fn solve(&self, x: &mut [C]) {
        let n = x.len();
        match self {
            Factor::Real(llt) => {
                let has_im = x.iter().any(|v| v.im != 0.0);
                let cols = if has_im { 2 } else { 1 };
                let mut b = Mat::<f64>::from_fn(n, cols, |i, j| if j == 0 { x[i].re } else { x[i].im });
                llt.solve_in_place(b.as_mut());
                for (i, v) in x.iter_mut().enumerate() {
                    *v = C::new(b[(i, 0)], if has_im { b[(i, 1)] } else { 0.0 });
                }
            }
            Factor::Complex(llt) => {
                let mut b = Mat::<C>::from_fn(n, 1, |i, _| x[i]);
                llt.solve_in_place(b.as_mut());
                for (i, v) in x.iter_mut().enumerate() {
                    *v = b[(i, 0)];
                }
            }
        }
    }
}

fn factor_shifted(op: &AssembledOperator, sigma: f64) -> Option<Factor> {
    if op.real {
        let m = op.faer_matrix_real(sigma).ok()?;
        m.sp_cholesky(Side::Lower).ok().map(Factor::Real)
    } else {
        let m = op.faer_matrix(|r| C::new(-sigma * op.mass[r], 0.0)).ok()?;
        m.sp_cholesky(Side::Lower).ok().map(Factor::Complex)
    }
}

/// Factors `A − σM`, lowering `σ` until the matrix is positive definite.
fn factor_below(op: &AssembledOperator, start: f64, floor_gap: f64) -> Result<(f64, Factor)> {
    let mut sigma = start;
    let mut gap = floor_gap.max(0.5);
    for _ in 0..40 {
        if let Some(f) = factor_shifted(op, sigma) {
            return Ok((sigma, f));
        }
        sigma -= gap;
        gap *= 2.0;
    }
    Err(Error::Solver("no positive definite shift found below the spectrum".into()))
}

/// Residuals below `ROUNDING_FLOOR · ‖B‖` are at the backward-stable limit.
const ROUNDING_FLOOR: f64 = 64.0 * f64::EPSILON;

/// Gershgorin bound on `‖B‖`, `B = M^{−1/2}AM^{−1/2}`.
fn scaled_norm_bound(op: &AssembledOperator, sqrt_m: &[f64]) -> f64 {
    let a = &op.matrix;
    (0..a.dim)
        .map(|r| {
            (a.row_ptr[r]..a.row_ptr[r + 1])
                .map(|k| a.vals[k].norm() / (sqrt_m[r] * sqrt_m[a.cols[k]]))
                .sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// `By` with `B = M^{−1/2}AM^{−1/2}`.
fn scaled_apply(op: &AssembledOperator, sqrt_m: &[f64], y: &[C]) -> Vec<C> {
    let v: Vec<C> = y.iter().zip(sqrt_m).map(|(a, s)| a / s).collect();
    op.matrix.apply(&v).iter().zip(sqrt_m).map(|(a, s)| a / s).collect()
}

/// Block inverse iteration with Rayleigh-Ritz on `ys` until the lowest `n`
/// residuals meet `tol` or `floor`; `ys` ends orthonormal and ascending.
fn polish(
    op: &AssembledOperator,
    factor: &Factor,
    sqrt_m: &[f64],
    ys: &mut Vec<Vec<C>>,
    n: usize,
    tol: f64,
    floor: f64,
) -> (Vec<f64>, Vec<f64>) {
    let p = ys.len();
    let mut out = (Vec::new(), Vec::new());
    for round in 0..8 {
        if round > 0 {
            for y in ys.iter_mut() {
                y.iter_mut().zip(sqrt_m).for_each(|(a, s)| *a *= s);
                factor.solve(y);
                y.iter_mut().zip(sqrt_m).for_each(|(a, s)| *a *= s);
            }
        }
        for k in 0..p {
            for _ in 0..2 {
                for j in 0..k {
                    let c = dot(&ys[j], &ys[k]);
                    let (head, tail) = ys.split_at_mut(k);
                    tail[0].iter_mut().zip(&head[j]).for_each(|(x, y)| *x -= c * y);
                }
            }
            let nk = norm2(&ys[k]);
            ys[k].iter_mut().for_each(|x| *x /= nk);
        }
        let bys: Vec<Vec<C>> = ys.iter().map(|y| scaled_apply(op, sqrt_m, y)).collect();
        let h = Mat::<C>::from_fn(p, p, |i, j| {
            let v = dot(&ys[i], &bys[j]);
            if i == j {
                C::new(v.re, 0.0)
            } else {
                v
            }
        });
        let Ok(e) = h.self_adjoint_eigen(Side::Lower) else {
            break;
        };
        let lam: Vec<f64> = (0..p).map(|i| e.S().column_vector()[i].re).collect();
        let u = e.U();
        let combine = |src: &[Vec<C>], i: usize| -> Vec<C> {
            let mut acc = vec![C::new(0.0, 0.0); src[0].len()];
            for (k, v) in src.iter().enumerate() {
                let c = u[(k, i)];
                acc.iter_mut().zip(v).for_each(|(a, b)| *a += b * c);
            }
            acc
        };
        let new_y: Vec<Vec<C>> = (0..p).map(|i| combine(ys, i)).collect();
        let residuals: Vec<f64> = (0..n)
            .map(|i| {
                let by = combine(&bys, i);
                let r: f64 = by
                    .iter()
                    .zip(&new_y[i])
                    .map(|(a, y)| (a - y * lam[i]).norm_sqr())
                    .sum();
                r.sqrt() / norm2(&new_y[i])
            })
            .collect();
        *ys = new_y;
        let done = residuals
            .iter()
            .zip(&lam)
            .all(|(r, l)| *r <= (tol * l.abs().max(1.0)).max(floor));
        out = (lam[..n].to_vec(), residuals);
        if done {
            break;
        }
    }
    out
}

/// Ritz values and vectors of a symmetric tridiagonal matrix, ascending.
fn tridiagonal_eigen(alpha: &[f64], beta: &[f64]) -> Result<(Vec<f64>, Mat<f64>)> {
    let m = alpha.len();
    let t = Mat::<f64>::from_fn(m, m, |i, j| {
        if i == j {
            alpha[i]
        } else if i == j + 1 {
            beta[j]
        } else if j == i + 1 {
            beta[i]
        } else {
            0.0
        }
    });
    let e = t
        .self_adjoint_eigen(Side::Lower)
        .map_err(|err| Error::Solver(format!("tridiagonal eigenproblem failed: {err:?}")))?;
    let s = e.S().column_vector();
    let vals: Vec<f64> = (0..m).map(|i| s[i]).collect();
    Ok((vals, e.U().to_owned()))
}

/// Shift-invert Lanczos on `M^{1/2}(A − σM)^{−1}M^{1/2}` with full
/// reorthogonalization and a seeded start vector.
pub fn eigensolve_lowest_seeded(
    op: &AssembledOperator,
    n: usize,
    tol: f64,
    seed: u64,
) -> Result<SpectrumResult> {
    let dim = op.dim();
    if n == 0 || n >= dim {
        return Err(Error::Precondition(format!(
            "requested {n} eigenpairs of a {dim}-dimensional problem"
        )));
    }
    let sqrt_m: Vec<f64> = op.mass.iter().map(|m| m.sqrt()).collect();
    let max_dim = (3 * n + 40).min(dim);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut start: Vec<C> = (0..dim).map(|_| C::new(rng.random::<f64>() - 0.5, 0.0)).collect();
    let (mut sigma, mut factor) = factor_below(op, op.lower_bound_hint, 1.0)?;
    let mut iterations = 0;
    for pass in 0..6 {
        let s0 = norm2(&start);
        start.iter_mut().for_each(|v| *v /= s0);
        let mut basis: Vec<Vec<C>> = vec![start.clone()];
        let mut alpha = Vec::new();
        let mut beta: Vec<f64> = Vec::new();
        let mut done = None;
        for j in 0..max_dim {
            let mut w: Vec<C> = basis[j].iter().zip(&sqrt_m).map(|(v, s)| v * s).collect();
            factor.solve(&mut w);
            w.iter_mut().zip(&sqrt_m).for_each(|(v, s)| *v *= s);
            iterations += 1;
            let a = dot(&basis[j], &w).re;
            alpha.push(a);
            for _ in 0..2 {
                for v in &basis {
                    let c = dot(v, &w);
                    w.iter_mut().zip(v).for_each(|(x, y)| *x -= c * y);
                }
            }
            let b = norm2(&w);
            let m = j + 1;
            let check = m >= n && (m % 5 == 0 || m == max_dim || b <= 1e-14 * a.abs());
            if check {
                let (theta, s) = tridiagonal_eigen(&alpha, &beta)?;
                // Largest θ are the wanted eigenvalues.
                let converged = (0..n).all(|k| {
                    let idx = m - 1 - k;
                    let th = theta[idx];
                    let lam = sigma + 1.0 / th;
                    let res = (b * s[(m - 1, idx)]).abs() / (th * th);
                    th > 0.0 && res <= tol * lam.abs().max(1.0)
                });
                if converged || b <= 1e-14 * a.abs() || m == max_dim {
                    done = Some((theta, s, converged, m));
                    break;
                }
            }
            if b <= 1e-300 {
                break;
            }
            beta.push(b);
            w.iter_mut().for_each(|x| *x /= b);
            basis.push(w);
        }
        let Some((theta, s, converged, m)) = done else {
            return Err(Error::Solver("Lanczos broke down before the first check".into()));
        };
        let ritz = |idx: usize| -> Vec<C> {
            let mut y = vec![C::new(0.0, 0.0); dim];
            for (k, v) in basis.iter().enumerate().take(m) {
                let c = s[(k, idx)];
                y.iter_mut().zip(v).for_each(|(a, b)| *a += b * c);
            }
            y
        };
        let values: Vec<f64> = (0..n).map(|k| sigma + 1.0 / theta[m - 1 - k]).collect();
        let mut ys: Vec<Vec<C>> = (0..(n + 2).min(m)).map(|k| ritz(m - 1 - k)).collect();
        if converged || pass == 5 {
            let floor = ROUNDING_FLOOR * scaled_norm_bound(op, &sqrt_m);
            let (values, residuals) = polish(op, &factor, &sqrt_m, &mut ys, n, tol, floor);
            let met = residuals
                .iter()
                .zip(&values)
                .all(|(r, l)| *r <= (tol * l.abs().max(1.0)).max(floor));
            if !met {
                return Err(Error::Solver(format!(
                    "Lanczos did not converge after {iterations} steps; residuals {residuals:?}"
                )));
            }
            let vectors = ys[..n]
                .iter()
                .map(|y| {
                    let v: Vec<C> = y.iter().zip(&sqrt_m).map(|(a, s)| a / s).collect();
                    op.extend(&v)
                })
                .collect();
            return Ok(SpectrumResult {
                values,
                vectors,
                residuals,
                tolerance: tol,
                iterations,
                shift: sigma,
            });
        }
        let spread = (values[n - 1] - values[0]).abs();
        let target = values[0] - (0.1 * spread).max(0.05 * (values[0].abs() + 1.0));
        if target > sigma {
            let (s2, f2) = factor_below(op, target, 0.1 * (target - sigma))?;
            sigma = s2;
            factor = f2;
        }
        start = ys.iter().fold(vec![C::new(0.0, 0.0); dim], |mut acc, y| {
            acc.iter_mut().zip(y).for_each(|(a, b)| *a += b);
            acc
        });
        log::debug!("Lanczos restart {} with shift {sigma}", pass + 1);
    }
    unreachable!("the final pass always returns")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormKind {
    L2,
    H1,
    /// Boundary `L²` over the Robin part `Γ_ε`.
    BoundaryRobin,
    /// Boundary `L²` over the whole bottom.
    BoundaryBottom,
}

/// Composite trapezoid/finite-difference norms of a grid function.
pub fn norms(u: &[C], mesh: &Mesh, kind: NormKind) -> Result<f64> {
    if u.len() != mesh.len() {
        return Err(Error::Precondition(format!(
            "grid function has {} values, mesh has {} nodes",
            u.len(),
            mesh.len()
        )));
    }
    let eps = mesh.epsilon;
    let l2 = || -> f64 { (0..mesh.len()).map(|p| mesh.mass(p) * u[p].norm_sqr()).sum() };
    let boundary = |keep: &dyn Fn(NodeClass) -> bool| -> f64 {
        (0..mesh.n1())
            .filter(|&i| keep(mesh.bottom[i]))
            .map(|i| eps * mesh.wxi[i] * u[mesh.index(i, 0)].norm_sqr())
            .sum::<f64>()
            .sqrt()
    };
    Ok(match kind {
        NormKind::L2 => l2().sqrt(),
        NormKind::H1 => {
            let mut g = 0.0;
            for k in 0..mesh.n2() {
                for &(i, j, h, _) in &mesh.xi_edges() {
                    let d = u[mesh.index(j, k)] - u[mesh.index(i, k)];
                    g += mesh.wx2[k] * h / eps * d.norm_sqr() / (h * h);
                }
            }
            for k in 0..mesh.n2() - 1 {
                let h = mesh.x2[k + 1] - mesh.x2[k];
                for i in 0..mesh.n1() {
                    let d = u[mesh.index(i, k + 1)] - u[mesh.index(i, k)];
                    g += eps * mesh.wxi[i] * h * d.norm_sqr() / (h * h);
                }
            }
            (l2() + g).sqrt()
        }
        NormKind::BoundaryRobin => boundary(&|c| c == NodeClass::Robin),
        NormKind::BoundaryBottom => boundary(&|_| true),
    })
}

/// Result of [`quasimode_rayleigh`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuasimodeReport {
    pub rayleigh: f64,
    pub mismatch: f64,
    /// Inner cut-off radii `(r₀, r₁)` in `ξ` units.
    pub inner_radii: (f64, f64),
}

/// Radii of the inner cut-off: one on `|ξ| ≤ r₀`, zero on `|ξ| ≥ r₁`.
/// `r₀` covers the Dirichlet segment and `r₁` stays inside the cell.
pub fn quasimode_radii(eta: f64) -> (f64, f64) {
    let r0 = (0.25 * eta.sqrt()).max(1.25 * eta);
    let r1 = (0.75 * eta.sqrt()).max(r0 + 0.5).min(FRAC_PI_2 - 0.05);
    (r0, r1.max(r0 + 1e-3))
}

fn inner_cutoff(r: f64, r0: f64, r1: f64) -> f64 {
    chi(0.25 + 0.5 * (r - r0) / (r1 - r0))
}

/// Builds the matched quasimode on the cell mesh and compares its discrete
/// Rayleigh quotient with `Λ`.
pub fn quasimode_rayleigh(
    mesh: &Mesh,
    geom: &AlternationGeometry,
    physics: &PhysicsConfig,
    mu: f64,
    lambda: f64,
) -> Result<QuasimodeReport> {
    if !physics.magnetic.is_zero() || !matches!(physics.potential, Potential::Zero) {
        return Err(Error::Precondition("the quasimode needs A = 0 and V = 0".into()));
    }
    if mesh.shape != MeshShape::Cell {
        return Err(Error::Precondition("the quasimode lives on the cell mesh".into()));
    }
    if !(lambda > 0.0 && lambda.is_finite()) {
        return Err(Error::Parameter(format!("quasimode needs Lambda > 0, got {lambda}")));
    }
    let eps = geom.epsilon();
    let eta = geom.eta();
    let b = physics.b;
    let op = assemble_cell(mesh, 0.0, physics)?;
    let sl = lambda.sqrt();
    let radii = quasimode_radii(eta);
    let psi: Vec<C> = if geom.is_degenerate() {
        mesh.sample(|_, x2| C::new((sl * (x2 - PI)).sin(), 0.0))
    } else {
        let k = match geom.regime() {
            Regime::Robin { k } => k,
            Regime::Dirichlet => {
                return Err(Error::Regime("the quasimode needs the Robin regime".into()))
            }
        };
        if (eps * (k + mu) * eta.ln() + 1.0).abs() > 1e-8 {
            return Err(Error::Parameter(format!(
                "mu = {mu} is inconsistent with eta = {eta}"
            )));
        }
        let amp = sl * (sl * PI).cos() + b * (sl * PI).sin();
        let beta = eps * sl;
        if !(beta < 2.0) {
            return Err(Error::Parameter(format!(
                "eps sqrt(Lambda) = {beta} outside the layer domain"
            )));
        }
        let ctl = SeriesControl::new(1_000_000, 1e-10)?;
        let (r0, r1) = radii;
        let mut out = vec![C::new(0.0, 0.0); mesh.len()];
        for p in 0..mesh.len() {
            if !op.is_free(p) {
                continue;
            }
            let n1 = mesh.n1();
            let (xi1, x2) = (mesh.xi[p % n1], mesh.x2[p / n1]);
            let xi2 = x2 / eps;
            let r = xi1.hypot(xi2);
            let w = inner_cutoff(r, r0, r1);
            let mut v = 0.0;
            if w < 1.0 {
                let ex = (sl * (x2 - PI)).sin();
                let layer = if chi(x2) > 0.0 {
                    let z = eval_z_accelerated(PlanePoint::new(xi1, xi2)?, eps * b, beta, ctl)?;
                    chi(x2) * eps * amp * z.value
                } else {
                    0.0
                };
                v += (ex + layer) * (1.0 - w);
            }
            if w > 0.0 {
                let s = PlanePoint::new(xi1 / eta, xi2 / eta)?;
                let mut inner = eps * amp * eval_y(s)?;
                if b != 0.0 {
                    inner += eps * eta * eps * b * amp * eval_y1_leading(s)?;
                }
                v += w * (eps * eta * b * s.y()).exp() * inner;
            }
            out[p] = C::new(v, 0.0);
        }
        out
    };
    let (a, m) = op.form_and_mass(&psi);
    if !(m > 0.0) {
        return Err(Error::Solver("quasimode vanishes on the mesh".into()));
    }
    let rayleigh = a / m;
    Ok(QuasimodeReport {
        rayleigh,
        mismatch: (rayleigh - lambda).abs(),
        inner_radii: radii,
    })
}

/// Writes `x1,x2,class,re,im` for every node.
pub fn write_snapshot_csv(mesh: &Mesh, values: &[C], mut out: impl Write) -> Result<()> {
    if values.len() != mesh.len() {
        return Err(Error::Precondition("snapshot length does not match the mesh".into()));
    }
    writeln!(out, "x1,x2,class,re,im")?;
    for (p, v) in values.iter().enumerate() {
        let (x1, x2) = mesh.point(p);
        let class = serde_json::to_value(mesh.class(p))?;
        writeln!(
            out,
            "{x1:.12e},{x2:.12e},{},{:.12e},{:.12e}",
            class.as_str().unwrap_or("?"),
            v.re,
            v.im
        )?;
    }
    Ok(())
}
