//! The discrete functional
//!
//! ```text
//! J(u) = Σ_T w_T (1/p) ψ_δ(|Xu|_T) + Σ_i m_i f_i u_i − Σ_b μ_b g_b (Tr u)_b,
//! ψ_δ(r) = (r² + δ²)^{p/2} − δ^p,
//! ```
//!
//! its exact gradient with respect to the lumped-mass inner product
//! `⟨u, v⟩_h = Σ_i m_i u_i v_i`, and the weak-form residual
//! `⟨G(u), φ⟩_h = Σ_T w_T |Xu|_δ^{p−2} ⟨Xu, Xφ⟩ + ∫ f φ − ⟨ν, Tr φ⟩`.

use serde::{Deserialize, Serialize};

use crate::besov::{pair_boundary, BesovParams, BoundaryDatum};
use crate::domain::{integrate, BoundaryValues, DeclaredParams, GridDomain, Measure, ScalarField};
use crate::fields::{HorizontalOperator, VectorFieldSystem};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct NeumannProblem {
    pub sys: VectorFieldSystem,
    pub dom: GridDomain,
    pub op: HorizontalOperator,
    pub p: f64,
    pub besov: BesovParams,
    pub f: ScalarField,
    pub nu: BoundaryDatum,
    pub reg_delta: f64,
    pub declared: DeclaredParams,
    /// `T^T(μ ⊙ g)`: the boundary load on nodes.
    boundary_load: Vec<f64>,
    compat: f64,
}

/// Checks `1 < q ≤ p < ∞`.
pub fn validate_exponents(p: f64, q: f64) -> Result<()> {
    if !(p > 1.0) || !p.is_finite() {
        return Err(Error::InvalidExponents(format!("p = {p}")));
    }
    if !(q > 1.0 && q <= p) {
        return Err(Error::InvalidExponents(format!("q = {q}, p = {p}")));
    }
    Ok(())
}

impl NeumannProblem {
    /// Validates `1 < q ≤ p`, `0 < s < min(q, (n+q)/2)`, `β ≤ 1 − s/q` and records
    /// the compatibility residual.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        sys: VectorFieldSystem,
        dom: GridDomain,
        p: f64,
        q: f64,
        s: f64,
        beta: Option<f64>,
        f: ScalarField,
        g: BoundaryValues,
        reg_delta: f64,
    ) -> Result<Self> {
        validate_exponents(p, q)?;
        let n = dom.dim() as f64;
        let smax = q.min((n + q) / 2.0);
        if !(s > 0.0 && s < smax) {
            return Err(Error::InvalidParameter(format!("s = {s} must lie in (0, min(q, (n+q)/2)) = (0, {smax})")));
        }
        let besov = BesovParams::new(q, beta, s)?;
        if !(reg_delta >= 0.0) || !reg_delta.is_finite() {
            return Err(Error::InvalidParameter(format!("reg_delta = {reg_delta} must be ≥ 0")));
        }
        f.check(&dom)?;
        g.check(&dom)?;
        let op = HorizontalOperator::new(&sys, &dom)?;
        let declared = dom.declared.clone();
        let mut prob = NeumannProblem {
            sys,
            dom,
            op,
            p,
            besov,
            f,
            nu: BoundaryDatum::new(g),
            reg_delta,
            declared,
            boundary_load: Vec::new(),
            compat: 0.0,
        };
        prob.refresh();
        Ok(prob)
    }

    fn refresh(&mut self) {
        let bd = self.dom.boundary();
        let mut load = vec![0.0; self.dom.num_nodes()];
        for (b, (g, mu)) in self.nu.g.values().iter().zip(&bd.mu).enumerate() {
            for (i, c) in bd.trace_row(b) {
                load[i] += c * mu * g;
            }
        }
        self.boundary_load = load;
        self.compat = compatibility_residual(self);
    }

    pub fn q(&self) -> f64 {
        self.besov.q
    }

    /// Same problem with data `λ(f, g)`.
    pub fn with_scaled_data(&self, lambda: f64) -> Self {
        let mut out = self.clone();
        out.f = self.f.scaled(lambda);
        out.nu = BoundaryDatum::new(self.nu.g.scaled(lambda));
        out.refresh();
        out
    }

    /// Same problem with another regularization.
    pub fn with_reg_delta(&self, delta: f64) -> Self {
        let mut out = self.clone();
        out.reg_delta = delta;
        out
    }

    /// Recorded `⟨ν,1⟩ − ∫ f dx`.
    pub fn compat(&self) -> f64 {
        self.compat
    }

    /// `‖f‖_{L¹(dx)} + ‖g‖_{L¹(dμ)}`.
    pub fn data_scale(&self) -> f64 {
        let f1: f64 = self.f.values().iter().zip(self.dom.weights()).map(|(v, w)| v.abs() * w).sum();
        let g1: f64 = self.nu.g.values().iter().zip(&self.dom.boundary().mu).map(|(v, w)| v.abs() * w).sum();
        f1 + g1
    }

    pub fn is_zero_data(&self) -> bool {
        self.f.values().iter().all(|&v| v == 0.0) && self.nu.g.values().iter().all(|&v| v == 0.0)
    }

    /// `m_i f_i − (T^T μ g)_i`: the linear part of `J` as a node vector.
    pub fn linear_load(&self) -> Vec<f64> {
        self.f
            .values()
            .iter()
            .zip(self.dom.weights())
            .zip(&self.boundary_load)
            .map(|((f, m), t)| m * f - t)
            .collect()
    }

    /// Kinetic energy, and per-element flux coefficients `|Xu|_δ^{p−2}` when requested.
    fn kinetic_parts(&self, xu: &[f64], delta: f64, coef: Option<&mut Vec<f64>>) -> f64 {
        let m = self.op.num_fields();
        let p = self.p;
        let dp = if delta > 0.0 { delta.powf(p) } else { 0.0 };
        let d2 = delta * delta;
        let mut kin = 0.0;
        let mut coef = coef;
        if let Some(c) = coef.as_deref_mut() {
            c.resize(self.op.num_elements(), 0.0);
        }
        for (e, w) in self.op.element_weights().iter().enumerate() {
            let z2: f64 = xu[e * m..(e + 1) * m].iter().map(|v| v * v).sum();
            let r2 = z2 + d2;
            kin += w * (r2.powf(0.5 * p) - dp) / p;
            if let Some(c) = coef.as_deref_mut() {
                c[e] = if p == 2.0 { 1.0 } else if r2 > 0.0 { r2.powf(0.5 * p - 1.0) } else { 0.0 };
            }
        }
        kin
    }
}

/// `J = kinetic + source − boundary`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    #[serde(rename = "J")]
    pub j: f64,
    pub kinetic: f64,
    pub source: f64,
    pub boundary: f64,
    pub grad_norm: f64,
}

fn check_finite(u: &ScalarField) -> Result<()> {
    if u.values().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite("u"))
    }
}

/// Energy at the problem's own regularization.
pub fn energy(prob: &NeumannProblem, u: &ScalarField) -> Result<EnergyReport> {
    energy_at(prob, u, prob.reg_delta)
}

/// Energy with regularization `delta`. `grad_norm` is the projected gradient
/// norm when the gradient exists, `NaN` otherwise.
pub fn energy_at(prob: &NeumannProblem, u: &ScalarField, delta: f64) -> Result<EnergyReport> {
    u.check(&prob.dom)?;
    check_finite(u)?;
    let mut xu = vec![0.0; prob.op.num_elements() * prob.op.num_fields()];
    prob.op.apply(u.values(), &mut xu);
    let kinetic = prob.kinetic_parts(&xu, delta, None);
    let source: f64 = u.values().iter().zip(prob.f.values()).zip(prob.dom.weights()).map(|((a, b), w)| a * b * w).sum();
    let tr = crate::domain::trace(&prob.dom, u)?;
    let boundary = pair_boundary(&prob.dom, &prob.nu, &tr)?;
    let grad_norm = if prob.p >= 2.0 || delta > 0.0 {
        let g = gradient_at(prob, u.values(), delta)?;
        projected_norm(&prob.dom, &g)
    } else {
        f64::NAN
    };
    Ok(EnergyReport { j: kinetic + source - boundary, kinetic, source, boundary, grad_norm })
}

/// `(1/p) Σ_T w_T |Xu|_T^p` (the kinetic term `I(u)`), unregularized.
pub fn kinetic(prob: &NeumannProblem, u: &ScalarField) -> Result<f64> {
    u.check(&prob.dom)?;
    let mut xu = vec![0.0; prob.op.num_elements() * prob.op.num_fields()];
    prob.op.apply(u.values(), &mut xu);
    Ok(prob.kinetic_parts(&xu, 0.0, None))
}

/// Energy value only, on raw node values.
pub(crate) fn energy_value(prob: &NeumannProblem, u: &[f64], delta: f64, load: &[f64], xu: &mut [f64]) -> f64 {
    prob.op.apply(u, xu);
    let kin = prob.kinetic_parts(xu, delta, None);
    kin + u.iter().zip(load).map(|(a, b)| a * b).sum::<f64>()
}

/// Mass-weighted gradient on raw node values.
pub(crate) fn gradient_at(prob: &NeumannProblem, u: &[f64], delta: f64) -> Result<Vec<f64>> {
    if prob.p < 2.0 && delta <= 0.0 {
        return Err(Error::NonDifferentiable { p: prob.p });
    }
    let m = prob.op.num_fields();
    let mut xu = vec![0.0; prob.op.num_elements() * m];
    prob.op.apply(u, &mut xu);
    let mut coef = Vec::new();
    prob.kinetic_parts(&xu, delta, Some(&mut coef));
    for (e, c) in coef.iter().enumerate() {
        for v in &mut xu[e * m..(e + 1) * m] {
            *v *= c;
        }
    }
    let mut g = vec![0.0; u.len()];
    prob.op.transpose_weighted(&xu, &mut g);
    let load = prob.linear_load();
    for ((gi, li), mi) in g.iter_mut().zip(&load).zip(prob.dom.weights()) {
        *gi = (*gi + li) / mi;
    }
    Ok(g)
}

/// `‖g − g_Ω‖_h`.
pub(crate) fn projected_norm(dom: &GridDomain, g: &[f64]) -> f64 {
    let w = dom.weights();
    let vol: f64 = w.iter().sum();
    let avg = g.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / vol;
    g.iter().zip(w).map(|(a, b)| b * (a - avg) * (a - avg)).sum::<f64>().sqrt()
}

/// Gradient `G` of the discrete energy in the lumped-mass inner product.
pub fn energy_gradient(prob: &NeumannProblem, u: &ScalarField) -> Result<ScalarField> {
    u.check(&prob.dom)?;
    check_finite(u)?;
    ScalarField::new(&prob.dom, gradient_at(prob, u.values(), prob.reg_delta)?)
}

/// `⟨G(u), φ⟩_h`: left side minus right side of the weak form.
pub fn weak_residual(prob: &NeumannProblem, u: &ScalarField, phi: &ScalarField) -> Result<f64> {
    phi.check(&prob.dom)?;
    let g = energy_gradient(prob, u)?;
    Ok(g.values().iter().zip(phi.values()).zip(prob.dom.weights()).map(|((a, b), w)| a * b * w).sum())
}

/// `⟨ν, 1⟩ − ∫ f dx`.
pub fn compatibility_residual(prob: &NeumannProblem) -> f64 {
    let one = BoundaryValues::constant(&prob.dom, 1.0);
    let nu1 = pair_boundary(&prob.dom, &prob.nu, &one).unwrap_or(f64::NAN);
    let f_int = integrate(&prob.dom, &prob.f, Measure::Lebesgue).unwrap_or(f64::NAN);
    nu1 - f_int
}

/// `(1/p)|w|^p − (1/p)|z|^p − |z|^{p−2}⟨z, w − z⟩`; the last term is 0 at `z = 0`.
pub fn p_convexity_gap(z: &[f64], w: &[f64], p: f64) -> f64 {
    let nz = z.iter().map(|v| v * v).sum::<f64>().sqrt();
    let nw = w.iter().map(|v| v * v).sum::<f64>().sqrt();
    let lin = if nz > 0.0 {
        nz.powf(p - 2.0) * z.iter().zip(w).map(|(a, b)| a * (b - a)).sum::<f64>()
    } else {
        0.0
    };
    nw.powf(p) / p - nz.powf(p) / p - lin
}

/// Rescales `g` by a constant so that the compatibility residual vanishes.
/// Fails when `∫ g dμ = 0`.
pub fn balance_boundary_density(dom: &GridDomain, f: &ScalarField, g: &BoundaryValues) -> Result<BoundaryValues> {
    let f_int = integrate(dom, f, Measure::Lebesgue)?;
    let g_int = crate::domain::integrate_boundary(dom, g, Measure::Mu)?;
    if g_int == 0.0 {
        if f_int == 0.0 {
            return Ok(g.clone());
        }
        return Err(Error::ZeroDenominator("boundary density balancing"));
    }
    Ok(g.scaled(f_int / g_int))
}

/// Shifts `g` by a constant so that the compatibility residual vanishes.
pub fn shift_boundary_density(dom: &GridDomain, f: &ScalarField, g: &BoundaryValues) -> Result<BoundaryValues> {
    let f_int = integrate(dom, f, Measure::Lebesgue)?;
    let g_int = crate::domain::integrate_boundary(dom, g, Measure::Mu)?;
    let mu_tot: f64 = dom.boundary().mu.iter().sum();
    if !(mu_tot > 0.0) {
        return Err(Error::ZeroDenominator("μ(∂Ω)"));
    }
    let c = (f_int - g_int) / mu_tot;
    BoundaryValues::new(dom, g.values().iter().map(|v| v + c).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Shape;

    fn interval(h: f64) -> GridDomain {
        GridDomain::build(Shape::Box { lo: vec![0.0], hi: vec![1.0] }, h).unwrap()
    }

    fn problem(dom: &GridDomain, p: f64, f: ScalarField, g: BoundaryValues) -> NeumannProblem {
        NeumannProblem::new(VectorFieldSystem::euclidean(dom.dim()), dom.clone(), p, p.min(2.0), 0.5, None, f, g, 0.0)
            .unwrap()
    }

    #[test]
    fn zero_field_has_zero_energy() {
        let dom = interval(1.0 / 32.0);
        let prob = problem(&dom, 2.0, ScalarField::from_fn(&dom, |x| x[0]), BoundaryValues::constant(&dom, 3.0));
        let e = energy(&prob, &ScalarField::zeros(&dom)).unwrap();
        assert_eq!(e.j, 0.0);
        assert_eq!(e.j, e.kinetic + e.source - e.boundary);
    }

    #[test]
    fn kinetic_energy_of_cosine() {
        let mut errs = Vec::new();
        for k in [32, 64] {
            let dom = interval(1.0 / k as f64);
            let prob = problem(&dom, 2.0, ScalarField::zeros(&dom), BoundaryValues::constant(&dom, 0.0));
            let u = ScalarField::from_fn(&dom, |x| (std::f64::consts::PI * x[0]).cos());
            let e = energy(&prob, &u).unwrap();
            errs.push((e.kinetic - std::f64::consts::PI.powi(2) / 4.0).abs());
        }
        assert!(errs[0] < 2e-3);
        assert!((errs[0] / errs[1]).log2() > 1.9);
    }

    #[test]
    fn p_homogeneity_without_data() {
        let dom = interval(1.0 / 16.0);
        let prob = problem(&dom, 3.0, ScalarField::zeros(&dom), BoundaryValues::constant(&dom, 0.0));
        let u = ScalarField::from_fn(&dom, |x| x[0] * x[0]);
        let j1 = energy(&prob, &u).unwrap().j;
        let j2 = energy(&prob, &u.scaled(2.0)).unwrap().j;
        assert!((j2 - 8.0 * j1).abs() < 1e-14 * j2);
    }

    #[test]
    fn p_convexity_gap_values() {
        assert_eq!(p_convexity_gap(&[0.3, -1.2], &[0.3, -1.2], 3.7), 0.0);
        let (z, w) = ([0.4, 1.0], [-0.5, 2.0]);
        let half_sq = 0.5 * ((0.9f64).powi(2) + 1.0);
        assert!((p_convexity_gap(&z, &w, 2.0) - half_sq).abs() < 1e-15);
        assert!((p_convexity_gap(&[1.0, 0.0], &[0.0, 1.0], 3.0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn gradient_preconditions() {
        let dom = interval(1.0 / 16.0);
        let prob = problem(&dom, 1.5, ScalarField::zeros(&dom), BoundaryValues::constant(&dom, 0.0));
        let u = ScalarField::zeros(&dom);
        assert!(matches!(energy_gradient(&prob, &u), Err(Error::NonDifferentiable { .. })));
        let reg = prob.with_reg_delta(1e-3);
        assert!(energy_gradient(&reg, &u).unwrap().values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn compatibility_examples() {
        let dom = interval(1.0 / 16.0);
        let prob = problem(&dom, 2.0, ScalarField::constant(&dom, 1.0), BoundaryValues::constant(&dom, 0.0));
        assert!((prob.compat() + 1.0).abs() < 1e-14);
        let g = balance_boundary_density(&dom, &prob.f, &BoundaryValues::constant(&dom, 1.0)).unwrap();
        let ok = problem(&dom, 2.0, prob.f.clone(), g);
        assert!(ok.compat().abs() < 1e-15);
    }

    #[test]
    fn constant_test_field_sees_only_compatibility() {
        let dom = interval(1.0 / 16.0);
        let prob = problem(&dom, 2.0, ScalarField::constant(&dom, 1.0), BoundaryValues::constant(&dom, 0.2));
        let u = ScalarField::from_fn(&dom, |x| (3.0 * x[0]).sin());
        let r = weak_residual(&prob, &u, &ScalarField::constant(&dom, 1.0)).unwrap();
        assert!((r + prob.compat()).abs() < 1e-12);
    }
}
