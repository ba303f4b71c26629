//! Discretized domains Ω on Cartesian grids.
//!
//! Every domain is meshed by the Kuhn triangulation of its grid cubes (n!
//! simplices per cube). Boxes are meshed exactly. For curved shapes the
//! simplices crossing the zero set of the shape function are kept with the
//! exact volume fraction of the negative part of the linear interpolant of
//! the shape function; their vertices outside Ω become ghost nodes. The
//! boundary ∂Ω is sampled by the facets of the same linear interpolant
//! (marching simplices), aggregated per grid cube.
//!
//! Node weights are lumped P1 masses: deep interior nodes carry `h^n`, box
//! faces carry trapezoid fractions, and the total equals the discrete volume.

use std::collections::BTreeMap;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::fields::{builtin_system, VectorFieldSystem};
use crate::{Error, Result};

/// Fewer interior nodes than this means `h` is too large for the shape.
pub const MIN_INTERIOR_NODES: usize = 10;

/// Interval floor: three interior nodes already resolve a 1D problem.
pub const MIN_INTERIOR_NODES_1D: usize = 3;

/// Simplices whose inside fraction falls below this are dropped.
const MIN_FRACTION: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum Shape {
    Box { lo: Vec<f64>, hi: Vec<f64> },
    EuclideanBall { center: Vec<f64>, radius: f64 },
    /// `{ρ < radius}` for the Heisenberg gauge `ρ = ((x²+y²)² + 16t²)^{1/4}`.
    GaugeBall { radius: f64 },
}

/// Heisenberg gauge `ρ(x, y, t) = ((x² + y²)² + 16 t²)^{1/4}`.
pub fn heisenberg_gauge(x: &[f64]) -> f64 {
    let r2 = x[0] * x[0] + x[1] * x[1];
    (r2 * r2 + 16.0 * x[2] * x[2]).powf(0.25)
}

/// Euclidean gradient of the Heisenberg gauge; zero at the origin.
pub fn heisenberg_gauge_gradient(x: &[f64], out: &mut [f64]) {
    let r2 = x[0] * x[0] + x[1] * x[1];
    let rho = heisenberg_gauge(x);
    if rho == 0.0 {
        out[..3].fill(0.0);
        return;
    }
    let rho3 = rho * rho * rho;
    out[0] = x[0] * r2 / rho3;
    out[1] = x[1] * r2 / rho3;
    out[2] = 8.0 * x[2] / rho3;
}

impl Shape {
    pub fn dim(&self) -> usize {
        match self {
            Shape::Box { lo, .. } => lo.len(),
            Shape::EuclideanBall { center, .. } => center.len(),
            Shape::GaugeBall { .. } => 3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.dim();
        if !(1..=3).contains(&n) {
            return Err(Error::InvalidParameter(format!(
                "domains support dimension 1..=3, got {n}"
            )));
        }
        match self {
            Shape::Box { lo, hi } => {
                if hi.len() != n {
                    return Err(Error::InvalidParameter("box lo/hi dimension mismatch".into()));
                }
                if lo.iter().zip(hi).any(|(a, b)| !(a < b) || !a.is_finite() || !b.is_finite()) {
                    return Err(Error::InvalidParameter("box requires lo < hi on every axis".into()));
                }
            }
            Shape::EuclideanBall { center, radius } => {
                if !(*radius > 0.0) || center.iter().any(|c| !c.is_finite()) {
                    return Err(Error::InvalidParameter("ball requires a finite center and radius > 0".into()));
                }
            }
            Shape::GaugeBall { radius } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidParameter("gauge ball requires radius > 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Defining function: negative inside, zero on the boundary.
    pub fn level(&self, x: &[f64]) -> f64 {
        match self {
            Shape::Box { lo, hi } => lo
                .iter()
                .zip(hi)
                .zip(x)
                .map(|((a, b), xi)| (a - xi).max(xi - b))
                .fold(f64::NEG_INFINITY, f64::max),
            Shape::EuclideanBall { center, radius } => {
                let d2: f64 = center.iter().zip(x).map(|(c, xi)| (xi - c) * (xi - c)).sum();
                d2.sqrt() - radius
            }
            Shape::GaugeBall { radius } => heisenberg_gauge(x) - radius,
        }
    }

    /// Gradient of the canonical gauge of the shape (distance for balls,
    /// `ρ` for the gauge ball). Boxes are handled face by face.
    fn gauge_gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Shape::Box { .. } => out.fill(0.0),
            Shape::EuclideanBall { center, .. } => {
                let d: f64 = center.iter().zip(x).map(|(c, xi)| (xi - c) * (xi - c)).sum::<f64>().sqrt();
                for k in 0..center.len() {
                    out[k] = if d > 0.0 { (x[k] - center[k]) / d } else { 0.0 };
                }
            }
            Shape::GaugeBall { .. } => heisenberg_gauge_gradient(x, out),
        }
    }

    pub fn bounding_box(&self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Shape::Box { lo, hi } => (lo.clone(), hi.clone()),
            Shape::EuclideanBall { center, radius } => (
                center.iter().map(|c| c - radius).collect(),
                center.iter().map(|c| c + radius).collect(),
            ),
            Shape::GaugeBall { radius } => {
                let tmax = radius * radius / 4.0;
                (vec![-radius, -radius, -tmax], vec![*radius, *radius, tmax])
            }
        }
    }

    /// The system whose `|XΦ|` weights the boundary measure μ by default.
    pub fn default_system(&self) -> VectorFieldSystem {
        match self {
            Shape::GaugeBall { .. } => builtin_system("heisenberg1").expect("builtin"),
            other => VectorFieldSystem::euclidean(other.dim()),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Shape::Box { .. } => "box",
            Shape::EuclideanBall { .. } => "euclidean_ball",
            Shape::GaugeBall { .. } => "gauge_ball",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Interior,
    /// Grid node lying on ∂Ω (box faces).
    Boundary,
    /// Grid node just outside Ω carrying a cut simplex.
    Ghost,
}

impl NodeKind {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeKind::Interior => "interior",
            NodeKind::Boundary => "boundary",
            NodeKind::Ghost => "ghost",
        }
    }
}

/// Values the existence theory takes as hypotheses about Ω; carried from the
/// configuration and never verified.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeclaredParams {
    pub eps: f64,
    pub delta: f64,
    pub r_o: f64,
    /// Upper Ahlfors constant M.
    pub m: f64,
    pub rad: f64,
}

impl Default for DeclaredParams {
    fn default() -> Self {
        DeclaredParams { eps: 0.5, delta: 0.5, r_o: 8.0, m: 50.0, rad: 0.25 }
    }
}

/// Kuhn simplices of the mesh. Vertex `i` of element `e` is
/// `verts[e * (n + 1) + i]`; `perm` selects the simplex shape.
#[derive(Clone, Debug)]
pub struct Elements {
    pub verts: Vec<u32>,
    pub weight: Vec<f64>,
    pub perm: Vec<u8>,
}

/// Boundary samples. Trace rows are stored CSR-style.
#[derive(Clone, Debug)]
pub struct Boundary {
    pub points: Vec<f64>,
    pub normals: Vec<f64>,
    pub sigma: Vec<f64>,
    pub mu: Vec<f64>,
    pub trace_offsets: Vec<usize>,
    pub trace_nodes: Vec<u32>,
    pub trace_coefs: Vec<f64>,
}

impl Boundary {
    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }

    pub fn trace_row(&self, b: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.trace_offsets[b]..self.trace_offsets[b + 1];
        self.trace_nodes[r.clone()].iter().map(|&i| i as usize).zip(self.trace_coefs[r].iter().copied())
    }
}

#[derive(Clone, Debug)]
pub struct GridDomain {
    shape: Shape,
    h: f64,
    n: usize,
    id: u64,
    points: Vec<f64>,
    kinds: Vec<NodeKind>,
    weights: Vec<f64>,
    /// Lattice multi-index of each node relative to `lattice_origin`.
    lattice: Vec<i64>,
    lattice_origin: Vec<f64>,
    elements: Elements,
    /// Barycentric gradients per permutation, `(n + 1) × n`, already divided by h.
    grad_lambda: Vec<Vec<f64>>,
    boundary: Boundary,
    diam_cc: Option<f64>,
    pub declared: DeclaredParams,
}

/// Lexicographic permutations of `0..n`.
fn permutations(n: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut Vec<bool>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for k in 0..used.len() {
            if !used[k] {
                used[k] = true;
                prefix.push(k);
                rec(prefix, used, out);
                prefix.pop();
                used[k] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::new(), &mut vec![false; n], &mut out);
    out
}

/// Vertex offsets (in lattice units) of the Kuhn simplex for `perm`.
fn kuhn_offsets(perm: &[usize]) -> Vec<Vec<i64>> {
    let n = perm.len();
    let mut v = vec![0i64; n];
    let mut out = vec![v.clone()];
    for &k in perm {
        v[k] += 1;
        out.push(v.clone());
    }
    out
}

/// `∇λ_i` of the Kuhn simplex for `perm`, scaled by `1/h`, row-major `(n+1) × n`.
fn kuhn_grad_lambda(perm: &[usize], h: f64) -> Vec<f64> {
    let n = perm.len();
    let mut g = vec![0.0; (n + 1) * n];
    g[perm[0]] = -1.0 / h;
    for k in 1..n {
        g[k * n + perm[k - 1]] += 1.0 / h;
        g[k * n + perm[k]] -= 1.0 / h;
    }
    g[n * n + perm[n - 1]] = 1.0 / h;
    g
}

/// Fraction of a simplex where the linear interpolant of the vertex values is
/// negative. Uses the divided-difference form of the volume distribution of a
/// linear function, evaluated on the smaller sign group.
pub fn negative_fraction(values: &[f64]) -> f64 {
    let n = values.len() - 1;
    let neg = values.iter().filter(|&&a| a < 0.0).count();
    if neg == 0 {
        return 0.0;
    }
    if neg == values.len() {
        return 1.0;
    }
    let scale = values.iter().fold(0.0f64, |m, a| m.max(a.abs()));
    let mut a: Vec<f64> = values.to_vec();
    // Separate coincident values; the formula divides by their differences.
    let sep = 1e-9 * scale;
    for i in 0..a.len() {
        for j in 0..i {
            if (a[i] - a[j]).abs() < sep {
                a[i] += sep * (1.0 + i as f64) * if a[i] < 0.0 { -1.0 } else { 1.0 };
            }
        }
    }
    let pos_side = neg > values.len() - neg;
    let mut acc = 0.0;
    for i in 0..a.len() {
        let on_side = if pos_side { a[i] >= 0.0 } else { a[i] < 0.0 };
        if !on_side {
            continue;
        }
        let mut denom = 1.0;
        for j in 0..a.len() {
            if j != i {
                denom *= if pos_side { a[i] - a[j] } else { a[j] - a[i] };
            }
        }
        let base = if pos_side { a[i] } else { -a[i] };
        acc += base.powi(n as i32) / denom;
    }
    let frac = if pos_side { 1.0 - acc } else { acc };
    frac.clamp(0.0, 1.0)
}

/// Per-cube accumulator of boundary facets.
#[derive(Default)]
struct FacetAccum {
    area: f64,
    centroid: Vec<f64>,
    normal: Vec<f64>,
    mu: f64,
    trace: BTreeMap<u32, f64>,
}

struct Facet {
    measure: f64,
    centroid: Vec<f64>,
    /// Barycentric coordinates of the centroid in the simplex.
    bary: Vec<f64>,
}

/// Zero-level facet of the linear interpolant on a cut simplex.
fn simplex_facet(verts: &[Vec<f64>], vals: &[f64]) -> Facet {
    let n = verts.len() - 1;
    // Edge crossings with their barycentric coordinates.
    let mut pts: Vec<(Vec<f64>, Vec<f64>)> = Vec::new();
    let neg: Vec<usize> = (0..=n).filter(|&i| vals[i] < 0.0).collect();
    let pos: Vec<usize> = (0..=n).filter(|&i| vals[i] >= 0.0).collect();
    let crossing = |i: usize, j: usize| {
        let t = vals[i] / (vals[i] - vals[j]);
        let p: Vec<f64> = (0..n).map(|k| verts[i][k] + t * (verts[j][k] - verts[i][k])).collect();
        let mut b = vec![0.0; n + 1];
        b[i] = 1.0 - t;
        b[j] = t;
        (p, b)
    };
    if n == 3 && neg.len() == 2 {
        // Quadrilateral: cyclic order (i0,j0),(i0,j1),(i1,j1),(i1,j0).
        let (i0, i1, j0, j1) = (neg[0], neg[1], pos[0], pos[1]);
        pts.push(crossing(i0, j0));
        pts.push(crossing(i0, j1));
        pts.push(crossing(i1, j1));
        pts.push(crossing(i1, j0));
    } else {
        for &i in &neg {
            for &j in &pos {
                pts.push(crossing(i, j));
            }
        }
    }
    match n {
        1 => Facet { measure: 1.0, centroid: pts[0].0.clone(), bary: pts[0].1.clone() },
        2 => {
            let (p, q) = (&pts[0], &pts[1]);
            let len = ((p.0[0] - q.0[0]).powi(2) + (p.0[1] - q.0[1]).powi(2)).sqrt();
            Facet {
                measure: len,
                centroid: (0..2).map(|k| 0.5 * (p.0[k] + q.0[k])).collect(),
                bary: (0..3).map(|k| 0.5 * (p.1[k] + q.1[k])).collect(),
            }
        }
        _ => {
            // Fan triangulation from the first point.
            let mut area = 0.0;
            let mut c = vec![0.0; 3];
            let mut b = vec![0.0; 4];
            for k in 1..pts.len() - 1 {
                let (p0, p1, p2) = (&pts[0], &pts[k], &pts[k + 1]);
                let u: Vec<f64> = (0..3).map(|d| p1.0[d] - p0.0[d]).collect();
                let v: Vec<f64> = (0..3).map(|d| p2.0[d] - p0.0[d]).collect();
                let cx = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                let a = 0.5 * (cx[0] * cx[0] + cx[1] * cx[1] + cx[2] * cx[2]).sqrt();
                area += a;
                for d in 0..3 {
                    c[d] += a * (p0.0[d] + p1.0[d] + p2.0[d]) / 3.0;
                }
                for d in 0..4 {
                    b[d] += a * (p0.1[d] + p1.1[d] + p2.1[d]) / 3.0;
                }
            }
            if area > 0.0 {
                c.iter_mut().for_each(|x| *x /= area);
                b.iter_mut().for_each(|x| *x /= area);
            } else {
                c = pts[0].0.clone();
                b = pts[0].1.clone();
            }
            Facet { measure: area, centroid: c, bary: b }
        }
    }
}

/// Dense Cartesian lattice `origin + i·h`, `i ∈ [0, dims)`.
struct Lattice {
    origin: Vec<f64>,
    dims: Vec<usize>,
    h: f64,
}

impl Lattice {
    fn len(&self) -> usize {
        self.dims.iter().product()
    }

    fn index(&self, idx: &[i64]) -> usize {
        let mut lin = 0usize;
        for k in (0..self.dims.len()).rev() {
            lin = lin * self.dims[k] + idx[k] as usize;
        }
        lin
    }

    fn multi(&self, mut lin: usize) -> Vec<i64> {
        let mut out = vec![0i64; self.dims.len()];
        for k in 0..self.dims.len() {
            out[k] = (lin % self.dims[k]) as i64;
            lin /= self.dims[k];
        }
        out
    }

    fn point(&self, idx: &[i64]) -> Vec<f64> {
        idx.iter().zip(&self.origin).map(|(&i, o)| o + i as f64 * self.h).collect()
    }

    /// Lower corners of all cells.
    fn cells(&self) -> impl Iterator<Item = Vec<i64>> + '_ {
        let cdims: Vec<usize> = self.dims.iter().map(|d| d - 1).collect();
        let total: usize = cdims.iter().product();
        (0..total).map(move |mut lin| {
            let mut out = vec![0i64; cdims.len()];
            for k in 0..cdims.len() {
                out[k] = (lin % cdims[k]) as i64;
                lin /= cdims[k];
            }
            out
        })
    }
}

fn fingerprint(shape: &Shape, h: f64, nodes: usize) -> u64 {
    let mut s = std::collections::hash_map::DefaultHasher::new();
    serde_json::to_string(shape).unwrap_or_default().hash(&mut s);
    h.to_bits().hash(&mut s);
    nodes.hash(&mut s);
    s.finish()
}

struct RawElement {
    lat: Vec<usize>,
    weight: f64,
    perm: u8,
    cut: bool,
    cell: usize,
}

impl GridDomain {
    /// Builds Ω with μ weighted by the shape's default system
    /// (Heisenberg for the gauge ball, the coordinate frame otherwise).
    pub fn build(shape: Shape, h: f64) -> Result<Self> {
        let sys = shape.default_system();
        Self::build_with_system(shape, h, &sys)
    }

    /// Builds Ω with `μ = |XΦ| dσ`, `Φ` the shape's gauge and `X = sys`.
    pub fn build_with_system(shape: Shape, h: f64, sys: &VectorFieldSystem) -> Result<Self> {
        shape.validate()?;
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!("grid spacing must be positive, got {h}")));
        }
        let n = shape.dim();
        if sys.ambient_dim() != n {
            return Err(Error::InvalidParameter(format!(
                "system `{}` lives in R^{} but the domain is {n}-dimensional",
                sys.name(),
                sys.ambient_dim()
            )));
        }
        let perms = permutations(n);
        let offsets: Vec<Vec<Vec<i64>>> = perms.iter().map(|p| kuhn_offsets(p)).collect();
        let grad_lambda: Vec<Vec<f64>> = perms.iter().map(|p| kuhn_grad_lambda(p, h)).collect();
        let vol = h.powi(n as i32) / perms.len() as f64;

        let lattice = match &shape {
            Shape::Box { lo, hi } => {
                let mut dims = Vec::with_capacity(n);
                for k in 0..n {
                    let cells = ((hi[k] - lo[k]) / h).round();
                    if cells < 1.0 || (cells * h - (hi[k] - lo[k])).abs() > 1e-9 * (hi[k] - lo[k]) {
                        return Err(Error::InvalidParameter(format!(
                            "h = {h} must divide the box side {} on axis {k}",
                            hi[k] - lo[k]
                        )));
                    }
                    dims.push(cells as usize + 1);
                }
                Lattice { origin: lo.clone(), dims, h }
            }
            _ => {
                let (lo, hi) = shape.bounding_box();
                let center: Vec<f64> = match &shape {
                    Shape::EuclideanBall { center, .. } => center.clone(),
                    _ => vec![0.0; n],
                };
                let mut origin = Vec::with_capacity(n);
                let mut dims = Vec::with_capacity(n);
                for k in 0..n {
                    let imin = ((lo[k] - center[k]) / h).floor() as i64 - 1;
                    let imax = ((hi[k] - center[k]) / h).ceil() as i64 + 1;
                    origin.push(center[k] + imin as f64 * h);
                    dims.push((imax - imin + 1) as usize);
                }
                Lattice { origin, dims, h }
            }
        };
        let is_box = matches!(shape, Shape::Box { .. });
        let total = lattice.len();
        let level: Vec<f64> = if is_box {
            Vec::new()
        } else {
            (0..total).map(|lin| shape.level(&lattice.point(&lattice.multi(lin)))).collect()
        };

        // Pass 1: elements with positive inside fraction.
        let mut raw: Vec<RawElement> = Vec::new();
        let mut vals = vec![0.0; n + 1];
        for (cell_no, corner) in lattice.cells().enumerate() {
            for (pi, offs) in offsets.iter().enumerate() {
                let lat: Vec<usize> = offs
                    .iter()
                    .map(|o| {
                        let idx: Vec<i64> = corner.iter().zip(o).map(|(c, d)| c + d).collect();
                        lattice.index(&idx)
                    })
                    .collect();
                let (frac, cut) = if is_box {
                    (1.0, false)
                } else {
                    for (v, &l) in vals.iter_mut().zip(&lat) {
                        *v = level[l];
                    }
                    let f = negative_fraction(&vals);
                    (f, vals.iter().any(|&v| v >= 0.0) && f > 0.0)
                };
                if frac < MIN_FRACTION {
                    continue;
                }
                raw.push(RawElement { lat, weight: vol * frac, perm: pi as u8, cut, cell: cell_no });
            }
        }

        // Keep the largest vertex-connected component.
        let mut parent: Vec<usize> = (0..total).collect();
        fn find(p: &mut [usize], mut x: usize) -> usize {
            while p[x] != x {
                p[x] = p[p[x]];
                x = p[x];
            }
            x
        }
        let mut used = vec![false; total];
        for e in &raw {
            for &l in &e.lat {
                used[l] = true;
            }
            let r0 = find(&mut parent, e.lat[0]);
            for &l in &e.lat[1..] {
                let r = find(&mut parent, l);
                if r != r0 {
                    parent[r] = r0;
                }
            }
        }
        let mut comp_size: BTreeMap<usize, usize> = BTreeMap::new();
        for l in 0..total {
            if used[l] {
                *comp_size.entry(find(&mut parent, l)).or_default() += 1;
            }
        }
        let main = comp_size
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
            .map(|(&r, _)| r)
            .ok_or(Error::EmptyInterior)?;
        raw.retain(|e| find(&mut parent, e.lat[0]) == main);

        // DOF numbering in lattice order.
        let mut dof = vec![u32::MAX; total];
        for e in &raw {
            for &l in &e.lat {
                dof[l] = 0;
            }
        }
        let mut points = Vec::new();
        let mut lattice_idx = Vec::new();
        let mut kinds = Vec::new();
        let mut count = 0u32;
        for l in 0..total {
            if dof[l] == u32::MAX {
                continue;
            }
            dof[l] = count;
            count += 1;
            let idx = lattice.multi(l);
            let x = lattice.point(&idx);
            let kind = if is_box {
                let on_face = idx.iter().zip(&lattice.dims).any(|(&i, &d)| i == 0 || i as usize == d - 1);
                if on_face {
                    NodeKind::Boundary
                } else {
                    NodeKind::Interior
                }
            } else if level[l] < 0.0 {
                NodeKind::Interior
            } else {
                NodeKind::Ghost
            };
            points.extend_from_slice(&x);
            lattice_idx.extend_from_slice(&idx);
            kinds.push(kind);
        }
        let num_nodes = count as usize;
        let interior = kinds.iter().filter(|&&k| k == NodeKind::Interior).count();
        let needed = if n == 1 { MIN_INTERIOR_NODES_1D } else { MIN_INTERIOR_NODES };
        if interior < needed {
            return Err(Error::DomainTooCoarse { interior, needed });
        }

        let mut weights = vec![0.0; num_nodes];
        let mut elements = Elements {
            verts: Vec::with_capacity(raw.len() * (n + 1)),
            weight: Vec::with_capacity(raw.len()),
            perm: Vec::with_capacity(raw.len()),
        };
        for e in &raw {
            for &l in &e.lat {
                let d = dof[l];
                elements.verts.push(d);
                weights[d as usize] += e.weight / (n + 1) as f64;
            }
            elements.weight.push(e.weight);
            elements.perm.push(e.perm);
        }

        let boundary = if is_box {
            box_boundary(&lattice, &dof, sys)
        } else {
            curved_boundary(&shape, &lattice, &level, &raw, &dof, sys)
        };

        let id = fingerprint(&shape, h, num_nodes);
        Ok(GridDomain {
            shape,
            h,
            n,
            id,
            points,
            kinds,
            weights,
            lattice: lattice_idx,
            lattice_origin: lattice.origin.clone(),
            elements,
            grad_lambda,
            boundary,
            diam_cc: None,
            declared: DeclaredParams::default(),
        })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }
    pub fn h(&self) -> f64 {
        self.h
    }
    pub fn dim(&self) -> usize {
        self.n
    }
    pub fn id(&self) -> u64 {
        self.id
    }
    pub fn num_nodes(&self) -> usize {
        self.kinds.len()
    }
    pub fn node(&self, i: usize) -> &[f64] {
        &self.points[i * self.n..(i + 1) * self.n]
    }
    pub fn node_kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }
    pub fn kinds(&self) -> &[NodeKind] {
        &self.kinds
    }
    /// Lumped Lebesgue weights, one per node.
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
    /// Lattice multi-index of node `i` (axis `k` at `lattice_origin[k] + idx·h`).
    pub fn lattice_index(&self, i: usize) -> &[i64] {
        &self.lattice[i * self.n..(i + 1) * self.n]
    }
    pub fn lattice_origin(&self) -> &[f64] {
        &self.lattice_origin
    }
    pub fn elements(&self) -> &Elements {
        &self.elements
    }
    pub fn num_elements(&self) -> usize {
        self.elements.weight.len()
    }
    pub fn element_vertices(&self, e: usize) -> &[u32] {
        &self.elements.verts[e * (self.n + 1)..(e + 1) * (self.n + 1)]
    }
    /// `∇λ_i` of element `e`, row-major `(n + 1) × n`.
    pub fn element_grad_lambda(&self, e: usize) -> &[f64] {
        &self.grad_lambda[self.elements.perm[e] as usize]
    }
    pub fn element_centroid(&self, e: usize) -> Vec<f64> {
        let mut c = vec![0.0; self.n];
        for &v in self.element_vertices(e) {
            for (ck, xk) in c.iter_mut().zip(self.node(v as usize)) {
                *ck += xk;
            }
        }
        c.iter_mut().for_each(|x| *x /= (self.n + 1) as f64);
        c
    }
    pub fn boundary(&self) -> &Boundary {
        &self.boundary
    }
    pub fn num_boundary(&self) -> usize {
        self.boundary.len()
    }
    pub fn boundary_point(&self, b: usize) -> &[f64] {
        &self.boundary.points[b * self.n..(b + 1) * self.n]
    }
    pub fn boundary_normal(&self, b: usize) -> &[f64] {
        &self.boundary.normals[b * self.n..(b + 1) * self.n]
    }
    /// Discrete |Ω|.
    pub fn volume(&self) -> f64 {
        self.weights.iter().sum()
    }
    pub fn diam_cc(&self) -> Option<f64> {
        self.diam_cc
    }
    pub fn set_diam_cc(&mut self, d: f64) {
        self.diam_cc = Some(d);
    }
    /// Euclidean diameter of the node set bounding box.
    pub fn diam_euclidean(&self) -> f64 {
        let (lo, hi) = self.shape.bounding_box();
        lo.iter().zip(&hi).map(|(a, b)| (b - a) * (b - a)).sum::<f64>().sqrt()
    }

    /// Recomputes μ = |XΦ| dσ for a different system.
    pub fn reweight_mu(&mut self, sys: &VectorFieldSystem) -> Result<()> {
        if sys.ambient_dim() != self.n {
            return Err(Error::InvalidParameter("system dimension does not match the domain".into()));
        }
        if matches!(self.shape, Shape::Box { .. }) {
            let mut tmp = Vec::new();
            for b in 0..self.num_boundary() {
                let x = self.boundary_point(b).to_vec();
                tmp.push(box_mu(&self.shape, &x, self.h, sys));
            }
            self.boundary.mu = tmp;
        } else {
            let mut g = vec![0.0; self.n];
            for b in 0..self.num_boundary() {
                let x = self.boundary_point(b).to_vec();
                self.shape.gauge_gradient(&x, &mut g);
                self.boundary.mu[b] = self.boundary.sigma[b] * sys.horizontal_norm(&x, &g);
            }
        }
        Ok(())
    }

    /// CSV export: `x1..xn,weight,kind`. Grid nodes carry Lebesgue weights;
    /// boundary samples (kind `surface`) carry μ-weights.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        let cols: Vec<String> = (1..=self.n).map(|k| format!("x{k}")).collect();
        writeln!(w, "{},weight,kind", cols.join(","))?;
        for i in 0..self.num_nodes() {
            for x in self.node(i) {
                write!(w, "{x:.16e},")?;
            }
            writeln!(w, "{:.16e},{}", self.weights[i], self.kinds[i].as_str())?;
        }
        for b in 0..self.num_boundary() {
            for x in self.boundary_point(b) {
                write!(w, "{x:.16e},")?;
            }
            writeln!(w, "{:.16e},surface", self.boundary.mu[b])?;
        }
        Ok(())
    }
}

/// μ-weight of a box face node: Σ over faces of (face trapezoid weight)·|B η_face|.
fn box_mu(shape: &Shape, x: &[f64], h: f64, sys: &VectorFieldSystem) -> f64 {
    let Shape::Box { lo, hi } = shape else { return 0.0 };
    let n = lo.len();
    let mut mu = 0.0;
    for (k, nrm) in box_faces(lo, hi, x, h) {
        let mut eta = vec![0.0; n];
        eta[k] = nrm;
        mu += face_weight(lo, hi, x, h, k) * sys.horizontal_norm(x, &eta);
    }
    mu
}

/// Faces `(axis, ±1)` containing `x`.
fn box_faces(lo: &[f64], hi: &[f64], x: &[f64], h: f64) -> Vec<(usize, f64)> {
    let tol = 1e-9 * h;
    let mut out = Vec::new();
    for k in 0..lo.len() {
        if (x[k] - lo[k]).abs() < tol {
            out.push((k, -1.0));
        }
        if (x[k] - hi[k]).abs() < tol {
            out.push((k, 1.0));
        }
    }
    out
}

/// Trapezoid surface weight of `x` on the face orthogonal to `axis`.
fn face_weight(lo: &[f64], hi: &[f64], x: &[f64], h: f64, axis: usize) -> f64 {
    let tol = 1e-9 * h;
    (0..lo.len())
        .filter(|&l| l != axis)
        .map(|l| if (x[l] - lo[l]).abs() < tol || (x[l] - hi[l]).abs() < tol { 0.5 * h } else { h })
        .product()
}

fn box_boundary(lattice: &Lattice, dof: &[u32], sys: &VectorFieldSystem) -> Boundary {
    let n = lattice.dims.len();
    let h = lattice.h;
    let lo = lattice.origin.clone();
    let hi: Vec<f64> = (0..n).map(|k| lo[k] + (lattice.dims[k] - 1) as f64 * h).collect();
    let shape = Shape::Box { lo: lo.clone(), hi: hi.clone() };
    let mut b = Boundary {
        points: Vec::new(),
        normals: Vec::new(),
        sigma: Vec::new(),
        mu: Vec::new(),
        trace_offsets: vec![0],
        trace_nodes: Vec::new(),
        trace_coefs: Vec::new(),
    };
    for l in 0..lattice.len() {
        let idx = lattice.multi(l);
        if !idx.iter().zip(&lattice.dims).any(|(&i, &d)| i == 0 || i as usize == d - 1) {
            continue;
        }
        let x = lattice.point(&idx);
        let faces = box_faces(&lo, &hi, &x, h);
        let mut normal = vec![0.0; n];
        let mut sigma = 0.0;
        for &(k, s) in &faces {
            let w = face_weight(&lo, &hi, &x, h, k);
            sigma += w;
            normal[k] += s * w;
        }
        let nn = normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        normal.iter_mut().for_each(|v| *v /= nn);
        b.points.extend_from_slice(&x);
        b.normals.extend_from_slice(&normal);
        b.sigma.push(sigma);
        b.mu.push(box_mu(&shape, &x, h, sys));
        b.trace_nodes.push(dof[l]);
        b.trace_coefs.push(1.0);
        b.trace_offsets.push(b.trace_nodes.len());
    }
    b
}

fn curved_boundary(
    shape: &Shape,
    lattice: &Lattice,
    level: &[f64],
    raw: &[RawElement],
    dof: &[u32],
    sys: &VectorFieldSystem,
) -> Boundary {
    let n = lattice.dims.len();
    let mut cells: BTreeMap<usize, FacetAccum> = BTreeMap::new();
    let mut grad = vec![0.0; n];
    for e in raw.iter().filter(|e| e.cut) {
        let verts: Vec<Vec<f64>> = e.lat.iter().map(|&l| lattice.point(&lattice.multi(l))).collect();
        let vals: Vec<f64> = e.lat.iter().map(|&l| level[l]).collect();
        let facet = simplex_facet(&verts, &vals);
        if facet.measure <= 0.0 {
            continue;
        }
        // Normal of the linear interpolant: Σ vals_i ∇λ_i.
        let perm = permutations(n).swap_remove(e.perm as usize);
        let gl = kuhn_grad_lambda(&perm, lattice.h);
        let mut nrm = vec![0.0; n];
        for i in 0..=n {
            for k in 0..n {
                nrm[k] += vals[i] * gl[i * n + k];
            }
        }
        let nn = nrm.iter().map(|v| v * v).sum::<f64>().sqrt().max(f64::MIN_POSITIVE);
        shape.gauge_gradient(&facet.centroid, &mut grad);
        let mu = facet.measure * sys.horizontal_norm(&facet.centroid, &grad);
        let acc = cells.entry(e.cell).or_insert_with(|| FacetAccum {
            centroid: vec![0.0; n],
            normal: vec![0.0; n],
            ..Default::default()
        });
        acc.area += facet.measure;
        acc.mu += mu;
        for k in 0..n {
            acc.centroid[k] += facet.measure * facet.centroid[k];
            acc.normal[k] += facet.measure * nrm[k] / nn;
        }
        for (i, &l) in e.lat.iter().enumerate() {
            if facet.bary[i] != 0.0 {
                *acc.trace.entry(dof[l]).or_default() += facet.measure * facet.bary[i];
            }
        }
    }
    let mut b = Boundary {
        points: Vec::new(),
        normals: Vec::new(),
        sigma: Vec::new(),
        mu: Vec::new(),
        trace_offsets: vec![0],
        trace_nodes: Vec::new(),
        trace_coefs: Vec::new(),
    };
    for acc in cells.values() {
        let a = acc.area;
        b.points.extend(acc.centroid.iter().map(|c| c / a));
        let nn = acc.normal.iter().map(|v| v * v).sum::<f64>().sqrt();
        b.normals.extend(acc.normal.iter().map(|v| v / nn));
        b.sigma.push(a);
        b.mu.push(acc.mu);
        for (&node, &c) in &acc.trace {
            b.trace_nodes.push(node);
            b.trace_coefs.push(c / a);
        }
        b.trace_offsets.push(b.trace_nodes.len());
    }
    b
}

/// Nodal scalar field.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: u64,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn new(dom: &GridDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != dom.num_nodes() {
            return Err(Error::InvalidParameter(format!(
                "field has {} values, grid has {} nodes",
                values.len(),
                dom.num_nodes()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("scalar field"));
        }
        Ok(ScalarField { grid: dom.id(), values })
    }

    pub fn zeros(dom: &GridDomain) -> Self {
        ScalarField { grid: dom.id(), values: vec![0.0; dom.num_nodes()] }
    }

    pub fn constant(dom: &GridDomain, c: f64) -> Self {
        ScalarField { grid: dom.id(), values: vec![c; dom.num_nodes()] }
    }

    pub fn from_fn(dom: &GridDomain, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..dom.num_nodes()).map(|i| f(dom.node(i))).collect();
        ScalarField { grid: dom.id(), values }
    }

    pub fn grid_id(&self) -> u64 {
        self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
    pub fn into_values(self) -> Vec<f64> {
        self.values
    }
    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check(&self, dom: &GridDomain) -> Result<()> {
        if self.grid != dom.id() || self.values.len() != dom.num_nodes() {
            return Err(Error::GridMismatch { expected: dom.id(), found: self.grid });
        }
        Ok(())
    }

    pub fn scaled(&self, a: f64) -> Self {
        ScalarField { grid: self.grid, values: self.values.iter().map(|v| a * v).collect() }
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &ScalarField, b: f64) -> Self {
        debug_assert_eq!(self.grid, other.grid);
        ScalarField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(x, y)| a * x + b * y).collect(),
        }
    }

    pub fn add_constant(&self, c: f64) -> Self {
        ScalarField { grid: self.grid, values: self.values.iter().map(|v| v + c).collect() }
    }
}

/// One value per boundary sample.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryValues {
    grid: u64,
    values: Vec<f64>,
}

impl BoundaryValues {
    pub fn new(dom: &GridDomain, values: Vec<f64>) -> Result<Self> {
        if values.len() != dom.num_boundary() {
            return Err(Error::InvalidParameter(format!(
                "boundary field has {} values, domain has {} boundary nodes",
                values.len(),
                dom.num_boundary()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("boundary values"));
        }
        Ok(BoundaryValues { grid: dom.id(), values })
    }

    pub fn constant(dom: &GridDomain, c: f64) -> Self {
        BoundaryValues { grid: dom.id(), values: vec![c; dom.num_boundary()] }
    }

    pub fn from_fn(dom: &GridDomain, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..dom.num_boundary()).map(|b| f(dom.boundary_point(b))).collect();
        BoundaryValues { grid: dom.id(), values }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn grid_id(&self) -> u64 {
        self.grid
    }
    pub fn check(&self, dom: &GridDomain) -> Result<()> {
        if self.grid != dom.id() || self.values.len() != dom.num_boundary() {
            return Err(Error::GridMismatch { expected: dom.id(), found: self.grid });
        }
        Ok(())
    }
    pub fn scaled(&self, a: f64) -> Self {
        BoundaryValues { grid: self.grid, values: self.values.iter().map(|v| a * v).collect() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Measure {
    Lebesgue,
    Sigma,
    Mu,
}

/// Restriction of a nodal field to the boundary samples (P1 interpolation).
pub fn trace(dom: &GridDomain, u: &ScalarField) -> Result<BoundaryValues> {
    u.check(dom)?;
    let bd = dom.boundary();
    let values = (0..bd.len())
        .map(|b| bd.trace_row(b).map(|(i, c)| c * u.values[i]).sum())
        .collect();
    Ok(BoundaryValues { grid: dom.id(), values })
}

/// Weighted sum of `w` over the node set of `measure`, in node order.
/// Boundary measures integrate the trace of `w`.
pub fn integrate(dom: &GridDomain, w: &ScalarField, measure: Measure) -> Result<f64> {
    w.check(dom)?;
    match measure {
        Measure::Lebesgue => Ok(w.values.iter().zip(dom.weights()).map(|(a, b)| a * b).sum()),
        Measure::Sigma | Measure::Mu => integrate_boundary(dom, &trace(dom, w)?, measure),
    }
}

pub fn integrate_boundary(dom: &GridDomain, w: &BoundaryValues, measure: Measure) -> Result<f64> {
    w.check(dom)?;
    let bd = dom.boundary();
    let weights = match measure {
        Measure::Sigma => &bd.sigma,
        Measure::Mu => &bd.mu,
        Measure::Lebesgue => {
            return Err(Error::InvalidParameter("Lebesgue measure is not defined on boundary samples".into()))
        }
    };
    Ok(w.values.iter().zip(weights).map(|(a, b)| a * b).sum())
}

/// Discrete Lebesgue average `u_Ω`.
pub fn average(dom: &GridDomain, u: &ScalarField) -> Result<f64> {
    let vol = dom.volume();
    if !(vol > 0.0) {
        return Err(Error::EmptyInterior);
    }
    Ok(integrate(dom, u, Measure::Lebesgue)? / vol)
}

/// `u − u_Ω`: projection onto the mean-zero subspace.
pub fn mean_zero_project(dom: &GridDomain, u: &ScalarField) -> Result<ScalarField> {
    let avg = average(dom, u)?;
    Ok(u.add_constant(-avg))
}

/// Boundary samples where every horizontal field is (nearly) tangent to ∂Ω:
/// `max_j |<X_j, η>| < tol · max_j |X_j|`.
pub fn characteristic_points(sys: &VectorFieldSystem, dom: &GridDomain, tol: f64) -> Vec<usize> {
    let n = dom.dim();
    let mut col = vec![0.0; n];
    let mut out = Vec::new();
    for b in 0..dom.num_boundary() {
        let x = dom.boundary_point(b);
        let eta = dom.boundary_normal(b);
        let (mut dot_max, mut len_max) = (0.0f64, 0.0f64);
        for j in 0..sys.num_fields() {
            sys.coeff(j, x, &mut col);
            let dot: f64 = col.iter().zip(eta).map(|(a, b)| a * b).sum();
            let len = col.iter().map(|a| a * a).sum::<f64>().sqrt();
            dot_max = dot_max.max(dot.abs());
            len_max = len_max.max(len);
        }
        if dot_max < tol * len_max || len_max == 0.0 {
            out.push(b);
        }
    }
    out
}
