//! Vector-field systems `X = (X_1, …, X_m)`, `X_j = Σ_k b_k^{(j)}(x) ∂_k`,
//! and their discrete action on P1 grid functions.
//!
//! `Xu` is piecewise constant: on each simplex `T`, `X_j u = Σ_k b_k^{(j)}(c_T) ∂_k u|_T`
//! with `c_T` the centroid. The discrete formal adjoint is the exact transpose of
//! this map with respect to the element-weighted inner product on horizontal
//! fields and the lumped-mass inner product on nodal fields, so
//! `⟨Xu, V⟩ = ⟨u, X*V⟩` holds to rounding for every pair.
//!
//! Field indices are zero-based throughout the API.

use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::domain::{GridDomain, ScalarField};
use crate::{Error, Result};

/// `coeff(j, x, out)` writes `b^{(j)}(x)` into `out` (length n).
pub type CoeffFn = Arc<dyn Fn(usize, &[f64], &mut [f64]) + Send + Sync>;

/// One entry of a bracket table: a vector field obtained at bracket `depth`
/// (depth 1 = the generators themselves).
#[derive(Clone)]
pub struct Bracket {
    pub label: String,
    pub depth: usize,
    pub eval: CoeffFn,
}

#[derive(Clone)]
pub struct VectorFieldSystem {
    name: String,
    n: usize,
    m: usize,
    coeff: CoeffFn,
    brackets: Vec<Bracket>,
    /// Every bracket of every depth is spanned by the table (higher ones vanish).
    table_complete: bool,
    q_hint: f64,
    axis_weights: Vec<u32>,
}

impl fmt::Debug for VectorFieldSystem {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("VectorFieldSystem")
            .field("name", &self.name)
            .field("n", &self.n)
            .field("m", &self.m)
            .field("q_hint", &self.q_hint)
            .finish()
    }
}

/// Parses `euclidean(n)`, `heisenberg1` or `grushin`.
pub fn builtin_system(name: &str) -> Result<VectorFieldSystem> {
    let trimmed = name.trim();
    match trimmed {
        "heisenberg1" => Ok(VectorFieldSystem::heisenberg1()),
        "grushin" => Ok(VectorFieldSystem::grushin()),
        _ => {
            let inner = trimmed
                .strip_prefix("euclidean(")
                .and_then(|r| r.strip_suffix(')'))
                .ok_or_else(|| Error::UnknownSystem(name.to_string()))?;
            let n: usize = inner.trim().parse().map_err(|_| Error::UnknownSystem(name.to_string()))?;
            if n == 0 {
                return Err(Error::UnknownSystem(name.to_string()));
            }
            Ok(VectorFieldSystem::euclidean(n))
        }
    }
}

impl VectorFieldSystem {
    pub fn euclidean(n: usize) -> Self {
        let coeff: CoeffFn = Arc::new(|j, _x, out: &mut [f64]| {
            out.fill(0.0);
            out[j] = 1.0;
        });
        let brackets = (0..n)
            .map(|j| Bracket {
                label: format!("X{}", j + 1),
                depth: 1,
                eval: Arc::new(move |_, _x, out: &mut [f64]| {
                    out.fill(0.0);
                    out[j] = 1.0;
                }),
            })
            .collect();
        VectorFieldSystem {
            name: format!("euclidean({n})"),
            n,
            m: n,
            coeff,
            brackets,
            table_complete: true,
            q_hint: n as f64,
            axis_weights: vec![1; n],
        }
    }

    /// `X_1 = ∂_x − (y/2)∂_t`, `X_2 = ∂_y + (x/2)∂_t`.
    pub fn heisenberg1() -> Self {
        let coeff: CoeffFn = Arc::new(|j, x, out: &mut [f64]| {
            if j == 0 {
                out[0] = 1.0;
                out[1] = 0.0;
                out[2] = -0.5 * x[1];
            } else {
                out[0] = 0.0;
                out[1] = 1.0;
                out[2] = 0.5 * x[0];
            }
        });
        let c1 = coeff.clone();
        let c2 = coeff.clone();
        let brackets = vec![
            Bracket { label: "X1".into(), depth: 1, eval: Arc::new(move |_, x, out| c1(0, x, out)) },
            Bracket { label: "X2".into(), depth: 1, eval: Arc::new(move |_, x, out| c2(1, x, out)) },
            Bracket {
                label: "[X1,X2]".into(),
                depth: 2,
                eval: Arc::new(|_, _x, out: &mut [f64]| {
                    out[0] = 0.0;
                    out[1] = 0.0;
                    out[2] = 1.0;
                }),
            },
        ];
        VectorFieldSystem {
            name: "heisenberg1".into(),
            n: 3,
            m: 2,
            coeff,
            brackets,
            table_complete: true,
            q_hint: 4.0,
            axis_weights: vec![1, 1, 2],
        }
    }

    /// `X_1 = ∂_x`, `X_2 = x ∂_y`.
    pub fn grushin() -> Self {
        let coeff: CoeffFn = Arc::new(|j, x, out: &mut [f64]| {
            if j == 0 {
                out[0] = 1.0;
                out[1] = 0.0;
            } else {
                out[0] = 0.0;
                out[1] = x[0];
            }
        });
        let c1 = coeff.clone();
        let c2 = coeff.clone();
        let brackets = vec![
            Bracket { label: "X1".into(), depth: 1, eval: Arc::new(move |_, x, out| c1(0, x, out)) },
            Bracket { label: "X2".into(), depth: 1, eval: Arc::new(move |_, x, out| c2(1, x, out)) },
            Bracket {
                label: "[X1,X2]".into(),
                depth: 2,
                eval: Arc::new(|_, _x, out: &mut [f64]| {
                    out[0] = 0.0;
                    out[1] = 1.0;
                }),
            },
        ];
        VectorFieldSystem {
            name: "grushin".into(),
            n: 2,
            m: 2,
            coeff,
            brackets,
            table_complete: true,
            q_hint: 3.0,
            axis_weights: vec![1, 2],
        }
    }

    /// Extension point for systems beyond the builtins. Brackets are computed
    /// numerically (finite-difference commutators, depth ≤ 2). `axis_weights`
    /// are the bracket depths at which each coordinate direction is reached;
    /// they drive the anisotropic metric lattice.
    pub fn custom(
        name: impl Into<String>,
        n: usize,
        m: usize,
        coeff: CoeffFn,
        q_hint: f64,
        axis_weights: Vec<u32>,
    ) -> Result<Self> {
        if n == 0 || m == 0 || axis_weights.len() != n || axis_weights.iter().any(|&w| w == 0) {
            return Err(Error::InvalidParameter("custom system needs n, m ≥ 1 and one positive weight per axis".into()));
        }
        if !(q_hint > 0.0) {
            return Err(Error::InvalidParameter("homogeneous dimension hint must be positive".into()));
        }
        Ok(VectorFieldSystem {
            name: name.into(),
            n,
            m,
            coeff,
            brackets: Vec::new(),
            table_complete: false,
            q_hint,
            axis_weights,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }
    pub fn ambient_dim(&self) -> usize {
        self.n
    }
    pub fn num_fields(&self) -> usize {
        self.m
    }
    pub fn q_hint(&self) -> f64 {
        self.q_hint
    }
    pub fn axis_weights(&self) -> &[u32] {
        &self.axis_weights
    }
    pub fn brackets(&self) -> &[Bracket] {
        &self.brackets
    }

    /// Writes `b^{(j)}(x)` into `out`.
    pub fn coeff(&self, j: usize, x: &[f64], out: &mut [f64]) {
        (self.coeff)(j, x, out)
    }

    pub fn coeff_vec(&self, j: usize, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.n];
        self.coeff(j, x, &mut out);
        out
    }

    /// Row-major `m × n` matrix `B(x)` with rows `b^{(j)}(x)`.
    pub fn matrix(&self, x: &[f64], out: &mut [f64]) {
        for j in 0..self.m {
            self.coeff(j, x, &mut out[j * self.n..(j + 1) * self.n]);
        }
    }

    /// `|B(x) η| = (Σ_j ⟨X_j(x), η⟩²)^{1/2}`, the horizontal length of a covector.
    pub fn horizontal_norm(&self, x: &[f64], eta: &[f64]) -> f64 {
        let mut col = vec![0.0; self.n];
        let mut acc = 0.0;
        for j in 0..self.m {
            self.coeff(j, x, &mut col);
            let d: f64 = col.iter().zip(eta).map(|(a, b)| a * b).sum();
            acc += d * d;
        }
        acc.sqrt()
    }

    /// All vector fields up to bracket `depth` evaluated at `x`, one per column.
    pub fn bracket_matrix(&self, x: &[f64], depth: usize) -> Result<DMatrix<f64>> {
        if depth == 0 {
            return Err(Error::InvalidParameter("bracket depth must be ≥ 1".into()));
        }
        let n = self.n;
        let mut cols: Vec<Vec<f64>> = Vec::new();
        if self.table_complete {
            for b in self.brackets.iter().filter(|b| b.depth <= depth) {
                let mut v = vec![0.0; n];
                (b.eval)(0, x, &mut v);
                cols.push(v);
            }
        } else {
            for j in 0..self.m {
                cols.push(self.coeff_vec(j, x));
            }
            if depth >= 2 {
                if depth > 2 {
                    return Err(Error::BracketDepth {
                        depth,
                        reason: "numeric commutators are available up to depth 2".into(),
                    });
                }
                for a in 0..self.m {
                    for b in a + 1..self.m {
                        cols.push(self.numeric_commutator(a, b, x));
                    }
                }
            }
        }
        Ok(DMatrix::from_fn(n, cols.len(), |r, c| cols[c][r]))
    }

    /// `[X_a, X_b](x) = (Db_b) b_a − (Db_a) b_b` with central-difference Jacobians.
    pub fn numeric_commutator(&self, a: usize, b: usize, x: &[f64]) -> Vec<f64> {
        let n = self.n;
        let ba = self.coeff_vec(a, x);
        let bb = self.coeff_vec(b, x);
        // Directional derivative of field `j` along `v`.
        let dir = |j: usize, v: &[f64]| {
            let scale = 1e-5 * (1.0 + x.iter().map(|c| c.abs()).fold(0.0, f64::max));
            let xp: Vec<f64> = x.iter().zip(v).map(|(xi, vi)| xi + scale * vi).collect();
            let xm: Vec<f64> = x.iter().zip(v).map(|(xi, vi)| xi - scale * vi).collect();
            let fp = self.coeff_vec(j, &xp);
            let fm = self.coeff_vec(j, &xm);
            (0..n).map(|k| (fp[k] - fm[k]) / (2.0 * scale)).collect::<Vec<f64>>()
        };
        let t1 = dir(b, &ba);
        let t2 = dir(a, &bb);
        t1.iter().zip(&t2).map(|(p, q)| p - q).collect()
    }
}

/// Rank of the span of all brackets up to `depth` at `x`; singular values
/// below `1e-8 · σ_max` count as zero.
pub fn bracket_rank(sys: &VectorFieldSystem, x: &[f64], depth: usize) -> Result<usize> {
    if x.len() != sys.ambient_dim() {
        return Err(Error::InvalidParameter("point dimension does not match the system".into()));
    }
    let mat = sys.bracket_matrix(x, depth)?;
    if mat.ncols() == 0 {
        return Ok(0);
    }
    let sv = mat.svd(false, false).singular_values;
    let smax = sv.iter().cloned().fold(0.0, f64::max);
    if smax == 0.0 {
        return Ok(0);
    }
    Ok(sv.iter().filter(|&&s| s > 1e-8 * smax).count())
}

/// `Xu` on the simplices of a grid: `values[e * m + j] = X_j u` on element `e`.
#[derive(Clone, Debug, PartialEq)]
pub struct HorizontalField {
    grid: u64,
    m: usize,
    values: Vec<f64>,
}

impl HorizontalField {
    pub fn new(dom: &GridDomain, m: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != dom.num_elements() * m {
            return Err(Error::InvalidParameter(format!(
                "horizontal field needs {} values, got {}",
                dom.num_elements() * m,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("horizontal field"));
        }
        Ok(HorizontalField { grid: dom.id(), m, values })
    }

    pub fn zeros(dom: &GridDomain, m: usize) -> Self {
        HorizontalField { grid: dom.id(), m, values: vec![0.0; dom.num_elements() * m] }
    }

    /// Samples a vector-valued function at element centroids.
    pub fn from_fn(dom: &GridDomain, m: usize, f: impl Fn(&[f64], &mut [f64])) -> Self {
        let mut values = vec![0.0; dom.num_elements() * m];
        for e in 0..dom.num_elements() {
            let c = dom.element_centroid(e);
            f(&c, &mut values[e * m..(e + 1) * m]);
        }
        HorizontalField { grid: dom.id(), m, values }
    }

    pub fn grid_id(&self) -> u64 {
        self.grid
    }
    pub fn num_fields(&self) -> usize {
        self.m
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn element(&self, e: usize) -> &[f64] {
        &self.values[e * self.m..(e + 1) * self.m]
    }

    /// `|Xu|` per element.
    pub fn magnitudes(&self) -> Vec<f64> {
        self.values.chunks(self.m).map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt()).collect()
    }

    fn check(&self, dom: &GridDomain, m: usize) -> Result<()> {
        if self.grid != dom.id() || self.m != m || self.values.len() != dom.num_elements() * m {
            return Err(Error::GridMismatch { expected: dom.id(), found: self.grid });
        }
        Ok(())
    }
}

/// Precomputed `G_T = B(c_T) ∇λ`, one `m × (n+1)` block per element.
#[derive(Clone, Debug)]
pub struct HorizontalOperator {
    grid: u64,
    n: usize,
    m: usize,
    num_nodes: usize,
    verts: Vec<u32>,
    elem_weight: Vec<f64>,
    node_mass: Vec<f64>,
    g: Vec<f64>,
}

impl HorizontalOperator {
    pub fn new(sys: &VectorFieldSystem, dom: &GridDomain) -> Result<Self> {
        let n = dom.dim();
        if sys.ambient_dim() != n {
            return Err(Error::InvalidParameter(format!(
                "system `{}` acts on R^{} but the domain is {n}-dimensional",
                sys.name(),
                sys.ambient_dim()
            )));
        }
        let m = sys.num_fields();
        let ne = dom.num_elements();
        let mut g = vec![0.0; ne * m * (n + 1)];
        let mut b = vec![0.0; m * n];
        for e in 0..ne {
            let c = dom.element_centroid(e);
            sys.matrix(&c, &mut b);
            if b.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("vector-field coefficients"));
            }
            let gl = dom.element_grad_lambda(e);
            let blk = &mut g[e * m * (n + 1)..(e + 1) * m * (n + 1)];
            for j in 0..m {
                for i in 0..=n {
                    blk[j * (n + 1) + i] = (0..n).map(|k| b[j * n + k] * gl[i * n + k]).sum();
                }
            }
        }
        Ok(HorizontalOperator {
            grid: dom.id(),
            n,
            m,
            num_nodes: dom.num_nodes(),
            verts: dom.elements().verts.clone(),
            elem_weight: dom.elements().weight.clone(),
            node_mass: dom.weights().to_vec(),
            g,
        })
    }

    pub fn grid_id(&self) -> u64 {
        self.grid
    }
    pub fn num_fields(&self) -> usize {
        self.m
    }
    pub fn num_elements(&self) -> usize {
        self.elem_weight.len()
    }
    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }
    pub fn element_weights(&self) -> &[f64] {
        &self.elem_weight
    }
    pub fn node_mass(&self) -> &[f64] {
        &self.node_mass
    }

    /// `out[e*m + j] = X_j u` on element `e`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let (n1, m) = (self.n + 1, self.m);
        for e in 0..self.num_elements() {
            let vs = &self.verts[e * n1..(e + 1) * n1];
            let blk = &self.g[e * m * n1..(e + 1) * m * n1];
            for j in 0..m {
                let mut acc = 0.0;
                for i in 0..n1 {
                    acc += blk[j * n1 + i] * u[vs[i] as usize];
                }
                out[e * m + j] = acc;
            }
        }
    }

    /// Unweighted transpose: `out_i = Σ_T w_T Σ_j F_Tj G_T[j][i]`, so that
    /// `Σ_i u_i out_i = Σ_T w_T ⟨(Xu)_T, F_T⟩`.
    pub fn transpose_weighted(&self, f: &[f64], out: &mut [f64]) {
        let (n1, m) = (self.n + 1, self.m);
        out.fill(0.0);
        for e in 0..self.num_elements() {
            let vs = &self.verts[e * n1..(e + 1) * n1];
            let blk = &self.g[e * m * n1..(e + 1) * m * n1];
            let w = self.elem_weight[e];
            for i in 0..n1 {
                let mut acc = 0.0;
                for j in 0..m {
                    acc += blk[j * n1 + i] * f[e * m + j];
                }
                out[vs[i] as usize] += w * acc;
            }
        }
    }

    /// Discrete `Σ_j X_j^* F_j`: the transpose scaled by the inverse lumped mass.
    pub fn adjoint(&self, f: &[f64], out: &mut [f64]) {
        self.transpose_weighted(f, out);
        for (o, mass) in out.iter_mut().zip(&self.node_mass) {
            *o /= mass;
        }
    }

    /// Diagonal of the weighted stiffness `Σ_T w_T |G_T e_i|²`.
    pub fn stiffness_diagonal(&self) -> Vec<f64> {
        let (n1, m) = (self.n + 1, self.m);
        let mut d = vec![0.0; self.num_nodes];
        for e in 0..self.num_elements() {
            let vs = &self.verts[e * n1..(e + 1) * n1];
            let blk = &self.g[e * m * n1..(e + 1) * m * n1];
            for i in 0..n1 {
                let s: f64 = (0..m).map(|j| blk[j * n1 + i] * blk[j * n1 + i]).sum();
                d[vs[i] as usize] += self.elem_weight[e] * s;
            }
        }
        d
    }

    /// Volume-weighted average of element values over each node's star;
    /// returns `num_nodes × m` values.
    pub fn nodal_average(&self, f: &[f64]) -> Vec<f64> {
        let (n1, m) = (self.n + 1, self.m);
        let mut acc = vec![0.0; self.num_nodes * m];
        let mut wsum = vec![0.0; self.num_nodes];
        for e in 0..self.num_elements() {
            let w = self.elem_weight[e];
            for &v in &self.verts[e * n1..(e + 1) * n1] {
                let v = v as usize;
                wsum[v] += w;
                for j in 0..m {
                    acc[v * m + j] += w * f[e * m + j];
                }
            }
        }
        for v in 0..self.num_nodes {
            for j in 0..m {
                acc[v * m + j] /= wsum[v];
            }
        }
        acc
    }

    pub fn gradient(&self, u: &ScalarField) -> Result<HorizontalField> {
        if u.grid_id() != self.grid || u.len() != self.num_nodes {
            return Err(Error::GridMismatch { expected: self.grid, found: u.grid_id() });
        }
        let mut values = vec![0.0; self.num_elements() * self.m];
        self.apply(u.values(), &mut values);
        Ok(HorizontalField { grid: self.grid, m: self.m, values })
    }
}

/// `Xu` per element.
pub fn horizontal_gradient(sys: &VectorFieldSystem, dom: &GridDomain, u: &ScalarField) -> Result<HorizontalField> {
    u.check(dom)?;
    HorizontalOperator::new(sys, dom)?.gradient(u)
}

/// `Σ_j X_j^* F_j` as a nodal field, the exact adjoint of [`horizontal_gradient`].
pub fn formal_adjoint_apply(sys: &VectorFieldSystem, dom: &GridDomain, f: &HorizontalField) -> Result<ScalarField> {
    f.check(dom, sys.num_fields())?;
    let op = HorizontalOperator::new(sys, dom)?;
    let mut out = vec![0.0; dom.num_nodes()];
    op.adjoint(f.values(), &mut out);
    ScalarField::new(dom, out)
}

/// Nodal recovery of `Xu`: volume-weighted average over each node's star.
pub fn nodal_gradient(sys: &VectorFieldSystem, dom: &GridDomain, u: &ScalarField) -> Result<Vec<f64>> {
    u.check(dom)?;
    let op = HorizontalOperator::new(sys, dom)?;
    let xu = op.gradient(u)?;
    Ok(op.nodal_average(xu.values()))
}

/// `⟨F, G⟩ = Σ_T w_T ⟨F_T, G_T⟩`.
pub fn horizontal_inner(dom: &GridDomain, f: &HorizontalField, g: &HorizontalField) -> Result<f64> {
    f.check(dom, f.m)?;
    g.check(dom, f.m)?;
    let m = f.m;
    Ok(dom
        .elements()
        .weight
        .iter()
        .enumerate()
        .map(|(e, w)| w * (0..m).map(|j| f.values[e * m + j] * g.values[e * m + j]).sum::<f64>())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{NodeKind, Shape};

    #[test]
    fn builtin_coefficients() {
        let h = builtin_system("heisenberg1").unwrap();
        assert_eq!(h.coeff_vec(0, &[0.0, 0.0, 0.0]), vec![1.0, 0.0, 0.0]);
        let e = builtin_system("euclidean(2)").unwrap();
        assert_eq!(e.coeff_vec(1, &[3.7, -1.0]), vec![0.0, 1.0]);
        let g = builtin_system("grushin").unwrap();
        assert_eq!(g.coeff_vec(1, &[0.5, 0.0]), vec![0.0, 0.5]);
        assert!(matches!(builtin_system("heisenberg2"), Err(Error::UnknownSystem(_))));
        assert!(matches!(builtin_system("euclidean(0)"), Err(Error::UnknownSystem(_))));
    }

    #[test]
    fn bracket_ranks() {
        let h = builtin_system("heisenberg1").unwrap();
        assert_eq!(bracket_rank(&h, &[0.3, -2.0, 1.0], 2).unwrap(), 3);
        assert_eq!(bracket_rank(&h, &[0.3, -2.0, 1.0], 1).unwrap(), 2);
        assert_eq!(bracket_rank(&VectorFieldSystem::euclidean(4), &[0.0; 4], 1).unwrap(), 4);
        let g = builtin_system("grushin").unwrap();
        assert_eq!(bracket_rank(&g, &[0.0, 0.7], 1).unwrap(), 1);
        assert_eq!(bracket_rank(&g, &[0.0, 0.7], 2).unwrap(), 2);
        assert_eq!(bracket_rank(&g, &[0.0, 0.7], 5).unwrap(), 2);
    }

    #[test]
    fn numeric_fallback_matches_table() {
        let h = builtin_system("heisenberg1").unwrap();
        let coeff = h.coeff.clone();
        let custom = VectorFieldSystem::custom("h-numeric", 3, 2, coeff, 4.0, vec![1, 1, 2]).unwrap();
        let c = custom.numeric_commutator(0, 1, &[0.4, -0.2, 0.9]);
        for (a, b) in c.iter().zip([0.0, 0.0, 1.0]) {
            assert!((a - b).abs() < 1e-8);
        }
        assert_eq!(bracket_rank(&custom, &[0.4, -0.2, 0.9], 2).unwrap(), 3);
        assert!(matches!(bracket_rank(&custom, &[0.0; 3], 3), Err(Error::BracketDepth { .. })));
    }

    #[test]
    fn linear_function_gradient_is_exact() {
        let dom = GridDomain::build(Shape::Box { lo: vec![0.0], hi: vec![1.0] }, 1.0 / 16.0).unwrap();
        let sys = VectorFieldSystem::euclidean(1);
        let u = ScalarField::from_fn(&dom, |x| x[0]);
        let xu = horizontal_gradient(&sys, &dom, &u).unwrap();
        assert!(xu.values().iter().all(|v| (v - 1.0).abs() < 1e-13));
        let c = ScalarField::constant(&dom, 3.0);
        let xc = horizontal_gradient(&sys, &dom, &c).unwrap();
        assert!(xc.values().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn heisenberg_t_gradient_at_node() {
        let shape = Shape::Box { lo: vec![0.0, 1.0, -1.0], hi: vec![2.0, 3.0, 1.0] };
        let sys = builtin_system("heisenberg1").unwrap();
        let dom = GridDomain::build_with_system(shape, 0.25, &sys).unwrap();
        let u = ScalarField::from_fn(&dom, |x| x[2]);
        let nodal = nodal_gradient(&sys, &dom, &u).unwrap();
        let i = (0..dom.num_nodes())
            .find(|&i| {
                let x = dom.node(i);
                (x[0] - 1.0).abs() < 1e-12 && (x[1] - 2.0).abs() < 1e-12 && x[2].abs() < 1e-12
            })
            .unwrap();
        assert_eq!(dom.node_kind(i), NodeKind::Interior);
        assert!((nodal[2 * i] + 1.0).abs() < 1e-12);
        assert!((nodal[2 * i + 1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn adjoint_of_identity_field_in_1d() {
        let dom = GridDomain::build(Shape::Box { lo: vec![0.0], hi: vec![1.0] }, 1.0 / 16.0).unwrap();
        let sys = VectorFieldSystem::euclidean(1);
        let f = HorizontalField::from_fn(&dom, 1, |x, out| out[0] = x[0]);
        let a = formal_adjoint_apply(&sys, &dom, &f).unwrap();
        for i in 0..dom.num_nodes() {
            if dom.node_kind(i) == NodeKind::Interior {
                assert!((a.values()[i] + 1.0).abs() < 1e-12);
            }
        }
        let z = HorizontalField::zeros(&dom, 1);
        assert!(formal_adjoint_apply(&sys, &dom, &z).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let d1 = GridDomain::build(Shape::Box { lo: vec![0.0], hi: vec![1.0] }, 1.0 / 16.0).unwrap();
        let d2 = GridDomain::build(Shape::Box { lo: vec![0.0], hi: vec![1.0] }, 1.0 / 32.0).unwrap();
        let u = ScalarField::zeros(&d1);
        let sys = VectorFieldSystem::euclidean(1);
        assert!(matches!(horizontal_gradient(&sys, &d2, &u), Err(Error::GridMismatch { .. })));
    }
}
