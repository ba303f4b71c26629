//! Besov seminorm and norm of boundary data in the CC metric, the trace,
//! the boundary pairing `⟨ν, φ⟩ = ∫ g φ dμ` and trace-inequality ratios.
//!
//! ```text
//! N(f) = { Σ_x Σ_{y≠x} (|f(x) − f(y)| / d^β)^q · d^s / |B(x, d)| · μ_y μ_x }^{1/q},  d = d(x, y)
//! ```
//!
//! Ball volumes below one lattice cell are clamped to one cell.

use serde::{Deserialize, Serialize};

use crate::cc_metric::MetricGraph;
use crate::domain::{self, BoundaryValues, GridDomain, Measure, ScalarField};
use crate::fields::HorizontalOperator;
use crate::{Error, Result};

/// Default cap on the number of boundary nodes in the O(|F|²) double sum.
pub const DEFAULT_NODE_CAP: usize = 4000;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BesovParams {
    pub q: f64,
    pub beta: f64,
    pub s: f64,
}

impl BesovParams {
    /// `beta = None` selects the endpoint `1 − s/q`.
    pub fn new(q: f64, beta: Option<f64>, s: f64) -> Result<Self> {
        if !(q > 1.0) || !q.is_finite() {
            return Err(Error::InvalidExponents(format!("q = {q} must exceed 1")));
        }
        if !(s > 0.0 && s < q) {
            return Err(Error::InvalidParameter(format!("s = {s} must lie in (0, q)")));
        }
        let top = 1.0 - s / q;
        let beta = beta.unwrap_or(top);
        if !(beta > 0.0 && beta < 1.0) || beta > top + 1e-12 {
            return Err(Error::InvalidParameter(format!("beta = {beta} must lie in (0, 1 − s/q] = (0, {top}]")));
        }
        Ok(BesovParams { q, beta, s })
    }

    /// Conjugate exponent `q' = q/(q − 1)`.
    pub fn q_conj(&self) -> f64 {
        self.q / (self.q - 1.0)
    }
}

/// Neumann datum ν represented by a density `g` against μ.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryDatum {
    pub g: BoundaryValues,
}

impl BoundaryDatum {
    pub fn new(g: BoundaryValues) -> Self {
        BoundaryDatum { g }
    }
    pub fn zero(dom: &GridDomain) -> Self {
        BoundaryDatum { g: BoundaryValues::constant(dom, 0.0) }
    }
}

/// Pairwise distances and ball volumes on a set F of boundary samples.
#[derive(Clone, Debug)]
pub struct BesovGeometry {
    grid: Option<u64>,
    /// Boundary-sample indices of F.
    nodes: Vec<usize>,
    mu: Vec<f64>,
    /// Row-major `|F| × |F|`.
    dist: Vec<f64>,
    /// `vol[i*k + j] = |B(x_i, d(x_i, x_j))|`, floored at one cell.
    vol: Vec<f64>,
}

impl BesovGeometry {
    /// One Dijkstra sweep per node of F. `nodes = None` takes every boundary sample.
    pub fn new(g: &MetricGraph, dom: &GridDomain, nodes: Option<&[usize]>, cap: usize) -> Result<Self> {
        if g.grid_id() != Some(dom.id()) {
            return Err(Error::GridMismatch { expected: dom.id(), found: g.grid_id().unwrap_or(0) });
        }
        let nodes: Vec<usize> = match nodes {
            Some(ns) => ns.to_vec(),
            None => (0..dom.num_boundary()).collect(),
        };
        if nodes.len() > cap {
            return Err(Error::InvalidParameter(format!(
                "{} boundary nodes exceed the Besov cap of {cap}",
                nodes.len()
            )));
        }
        let k = nodes.len();
        let mut dist = vec![0.0; k * k];
        let mut vol = vec![0.0; k * k];
        let floor = g.cell_volume();
        for (i, &bi) in nodes.iter().enumerate() {
            let d = g.distances_from(g.boundary_node(bi));
            let prof = g.profile_from(&d);
            for (j, &bj) in nodes.iter().enumerate() {
                if i == j {
                    continue;
                }
                let dij = d[g.boundary_node(bj)];
                if !dij.is_finite() {
                    return Err(Error::Disconnected(bi, bj));
                }
                if dij <= 0.0 {
                    return Err(Error::ZeroDistance(bi, bj));
                }
                dist[i * k + j] = dij;
                vol[i * k + j] = prof.volume(dij).volume.max(floor);
            }
        }
        let mu = nodes.iter().map(|&b| g.boundary_mu()[b]).collect();
        Ok(BesovGeometry { grid: Some(dom.id()), nodes, mu, dist, vol })
    }

    /// Geometry from explicit tables (row-major `k × k`); the diagonal is ignored.
    pub fn from_parts(mu: Vec<f64>, dist: Vec<f64>, vol: Vec<f64>) -> Result<Self> {
        let k = mu.len();
        if dist.len() != k * k || vol.len() != k * k {
            return Err(Error::InvalidParameter("distance/volume tables must be |F| × |F|".into()));
        }
        for i in 0..k {
            for j in 0..k {
                if i != j && !(dist[i * k + j] > 0.0) {
                    return Err(Error::ZeroDistance(i, j));
                }
            }
        }
        Ok(BesovGeometry { grid: None, nodes: (0..k).collect(), mu, dist, vol })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }
    pub fn mu(&self) -> &[f64] {
        &self.mu
    }
    pub fn distance(&self, i: usize, j: usize) -> f64 {
        self.dist[i * self.len() + j]
    }

    fn values(&self, f: &BoundaryValues) -> Result<Vec<f64>> {
        if let Some(id) = self.grid {
            if f.grid_id() != id {
                return Err(Error::GridMismatch { expected: id, found: f.grid_id() });
            }
            Ok(self.nodes.iter().map(|&b| f.values()[b]).collect())
        } else if f.values().len() == self.len() {
            Ok(f.values().to_vec())
        } else {
            Err(Error::InvalidParameter("boundary values do not match the node set".into()))
        }
    }

    fn seminorm_raw(&self, f: &[f64], p: &BesovParams) -> f64 {
        let k = self.len();
        let mut total = 0.0;
        for i in 0..k {
            let mut row = 0.0;
            for j in 0..k {
                if i == j {
                    continue;
                }
                let df = (f[i] - f[j]).abs();
                if df == 0.0 {
                    continue;
                }
                let d = self.dist[i * k + j];
                row += (df / d.powf(p.beta)).powf(p.q) * d.powf(p.s) / self.vol[i * k + j] * self.mu[j];
            }
            total += row * self.mu[i];
        }
        total.powf(1.0 / p.q)
    }

    fn lq_raw(&self, f: &[f64], q: f64) -> f64 {
        f.iter().zip(&self.mu).map(|(v, w)| w * v.abs().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// `N^q_β(f, F, dμ)`.
pub fn besov_seminorm(geom: &BesovGeometry, f: &BoundaryValues, params: &BesovParams) -> Result<f64> {
    let v = geom.values(f)?;
    Ok(geom.seminorm_raw(&v, params))
}

/// `‖f‖_{L^q(F, dμ)} + N^q_β(f, F, dμ)`.
pub fn besov_norm(geom: &BesovGeometry, f: &BoundaryValues, params: &BesovParams) -> Result<f64> {
    let v = geom.values(f)?;
    Ok(geom.lq_raw(&v, params.q) + geom.seminorm_raw(&v, params))
}

/// Discrete trace: P1 interpolation at each boundary sample.
pub fn trace_restrict(dom: &GridDomain, u: &ScalarField) -> Result<BoundaryValues> {
    domain::trace(dom, u)
}

/// `⟨ν, φ⟩ = Σ_b g_b φ_b μ_b`.
pub fn pair_boundary(dom: &GridDomain, nu: &BoundaryDatum, phi: &BoundaryValues) -> Result<f64> {
    nu.g.check(dom)?;
    phi.check(dom)?;
    Ok(nu
        .g
        .values()
        .iter()
        .zip(phi.values())
        .zip(&dom.boundary().mu)
        .map(|((g, p), w)| g * p * w)
        .sum())
}

/// `‖g‖_{L^{q'}(∂Ω, dμ)}`, an upper bound for the dual norm of ν.
pub fn dual_norm_surrogate(dom: &GridDomain, nu: &BoundaryDatum, params: &BesovParams) -> Result<f64> {
    nu.g.check(dom)?;
    let qc = params.q_conj();
    let s: f64 = nu.g.values().iter().zip(&dom.boundary().mu).map(|(g, w)| w * g.abs().powf(qc)).sum();
    Ok(s.powf(1.0 / qc))
}

/// `max_φ |⟨ν, φ⟩| / ‖φ‖_{Besov}` over a test set.
pub fn empirical_dual_norm(
    dom: &GridDomain,
    geom: &BesovGeometry,
    nu: &BoundaryDatum,
    tests: &[BoundaryValues],
    params: &BesovParams,
) -> Result<f64> {
    if tests.is_empty() {
        return Err(Error::InvalidParameter("empirical dual norm needs a non-empty test set".into()));
    }
    let mut best = 0.0f64;
    for phi in tests {
        let norm = besov_norm(geom, phi, params)?;
        if norm > 0.0 {
            best = best.max(pair_boundary(dom, nu, phi)?.abs() / norm);
        }
    }
    Ok(best)
}

/// Discrete `‖u‖_{L^q(dx)}`.
pub fn lq_norm(dom: &GridDomain, u: &ScalarField, q: f64) -> Result<f64> {
    u.check(dom)?;
    let abs_q = ScalarField::new(dom, u.values().iter().map(|v| v.abs().powf(q)).collect())?;
    Ok(domain::integrate(dom, &abs_q, Measure::Lebesgue)?.powf(1.0 / q))
}

/// Discrete `‖Xu‖_{L^q(dx)}` with `Xu` constant per element.
pub fn grad_lq_norm(op: &HorizontalOperator, u: &ScalarField, q: f64) -> Result<f64> {
    let xu = op.gradient(u)?;
    Ok(xu
        .magnitudes()
        .iter()
        .zip(op.element_weights())
        .map(|(a, w)| w * a.powf(q))
        .sum::<f64>()
        .powf(1.0 / q))
}

/// `‖Tr u‖_{Besov} / (‖u‖_{L^q} + ‖Xu‖_{L^q})`.
pub fn trace_inequality_ratio(
    dom: &GridDomain,
    op: &HorizontalOperator,
    geom: &BesovGeometry,
    u: &ScalarField,
    params: &BesovParams,
) -> Result<f64> {
    let den = lq_norm(dom, u, params.q)? + grad_lq_norm(op, u, params.q)?;
    if !(den > 0.0) {
        return Err(Error::ZeroDenominator("trace inequality ratio"));
    }
    Ok(besov_norm(geom, &trace_restrict(dom, u)?, params)? / den)
}
