//! Minimization of the discrete energy on the mean-zero subspace.
//!
//! `p = 2` is a linear problem `K u = −ℓ` with `K` the (singular, positive
//! semidefinite) stiffness; it is solved by Jacobi-preconditioned conjugate
//! gradients. Other exponents use projected gradient descent in the
//! lumped-mass inner product with Barzilai–Borwein steps, a monotone Armijo
//! backtracking line search and, when the integrand is not differentiable,
//! continuation in the regularization `δ_k = δ_0 2^{−k}`.
//!
//! Convergence is declared when `‖G − G_Ω‖_h ≤ tol_grad · max(1, ‖G(0) − G(0)_Ω‖_h)`.

use serde::{Deserialize, Serialize};

use crate::besov::{dual_norm_surrogate, grad_lq_norm, lq_norm};
use crate::domain::{mean_zero_project, GridDomain, ScalarField};
use crate::energy::{energy, gradient_at, projected_norm, NeumannProblem};
use crate::fields::HorizontalOperator;
use crate::testfields::random_smooth;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// `cg_p2` for `p = 2`, `descent_bb` otherwise.
    Auto,
    CgP2,
    DescentBb,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Init {
    Zero,
    /// Seeded random smooth field.
    Random,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolveOptions {
    pub tol_grad: f64,
    pub max_iter: usize,
    pub method: Method,
    /// First regularization level of the continuation.
    pub delta0: f64,
    /// Regularization used for `p < 2` when the problem itself has none.
    pub delta_min: f64,
    /// Taken from the run seed; not a configuration key.
    #[serde(skip)]
    pub seed: u64,
    pub init: Init,
    /// Relative tolerance on the compatibility residual.
    pub tol_compat: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol_grad: 1e-8,
            max_iter: 50_000,
            method: Method::Auto,
            delta0: 0.1,
            delta_min: 1e-8,
            seed: 0,
            init: Init::Zero,
            tol_compat: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub u: ScalarField,
    pub j: f64,
    pub grad_norm: f64,
    /// Absolute gradient tolerance that was applied.
    pub tolerance: f64,
    pub iterations: usize,
    pub delta_final: f64,
    pub converged: bool,
    /// `J` after every accepted step at the final regularization level.
    pub energy_trace: Vec<f64>,
    /// Largest energy increase between consecutive iterates at any fixed level.
    pub max_energy_increase: f64,
    /// Largest `|u_Ω|` over all iterates.
    pub max_mean_drift: f64,
}

fn mass_dot(w: &[f64], a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).zip(w).map(|((x, y), m)| x * y * m).sum()
}

fn project_in_place(w: &[f64], vol: f64, v: &mut [f64]) -> f64 {
    let avg = v.iter().zip(w).map(|(a, m)| a * m).sum::<f64>() / vol;
    for x in v.iter_mut() {
        *x -= avg;
    }
    avg
}

fn mean_of(w: &[f64], vol: f64, v: &[f64]) -> f64 {
    v.iter().zip(w).map(|(a, m)| a * m).sum::<f64>() / vol
}

/// Checks compatibility against `tol_compat · (‖f‖₁ + ‖g‖₁)`.
pub fn check_compatibility(prob: &NeumannProblem, tol_compat: f64) -> Result<()> {
    let residual = prob.compat();
    let tolerance = tol_compat * prob.data_scale();
    if residual.abs() > tolerance {
        return Err(Error::IncompatibleData { residual, tolerance });
    }
    Ok(())
}

/// Minimizes the discrete energy on the mean-zero subspace.
pub fn solve(prob: &NeumannProblem, opts: &SolveOptions) -> Result<Solution> {
    crate::energy::validate_exponents(prob.p, prob.q())?;
    if !(opts.tol_grad > 0.0) {
        return Err(Error::InvalidParameter("tol_grad must be positive".into()));
    }
    let method = match opts.method {
        Method::Auto if prob.p == 2.0 => Method::CgP2,
        Method::Auto => Method::DescentBb,
        Method::CgP2 if prob.p != 2.0 => {
            return Err(Error::InvalidParameter(format!("cg_p2 requires p = 2, got p = {}", prob.p)))
        }
        m => m,
    };
    check_compatibility(prob, opts.tol_compat)?;
    let dom = &prob.dom;
    let delta_final = if prob.reg_delta > 0.0 {
        prob.reg_delta
    } else if prob.p < 2.0 {
        opts.delta_min
    } else {
        0.0
    };
    if prob.is_zero_data() && opts.init == Init::Zero {
        let u = ScalarField::zeros(dom);
        return Ok(Solution {
            u,
            j: 0.0,
            grad_norm: 0.0,
            tolerance: opts.tol_grad,
            iterations: 0,
            delta_final,
            converged: true,
            energy_trace: vec![0.0],
            max_energy_increase: 0.0,
            max_mean_drift: 0.0,
        });
    }
    let mut u = match opts.init {
        Init::Zero => vec![0.0; dom.num_nodes()],
        Init::Random => random_smooth(dom, opts.seed).into_values(),
    };
    let w = dom.weights();
    let vol = dom.volume();
    project_in_place(w, vol, &mut u);
    // Scale from the gradient at u = 0, at the final regularization.
    let g0 = gradient_at(prob, &vec![0.0; u.len()], delta_final.max(if prob.p < 2.0 { opts.delta_min } else { 0.0 }))?;
    let tol_abs = opts.tol_grad * projected_norm(dom, &g0).max(1.0);
    match method {
        Method::CgP2 => solve_cg(prob, opts, u, tol_abs),
        _ => solve_descent(prob, opts, u, tol_abs, delta_final),
    }
}

fn solve_cg(prob: &NeumannProblem, opts: &SolveOptions, mut u: Vec<f64>, tol_abs: f64) -> Result<Solution> {
    let dom = &prob.dom;
    let op = &prob.op;
    let w = dom.weights();
    let vol = dom.volume();
    let nn = u.len();
    let load = prob.linear_load();
    let mut diag = op.stiffness_diagonal();
    for d in diag.iter_mut() {
        if !(*d > 0.0) {
            *d = 1.0;
        }
    }
    let mut xu = vec![0.0; op.num_elements() * op.num_fields()];
    let apply_k = |v: &[f64], out: &mut [f64], xu: &mut [f64]| {
        op.apply(v, xu);
        op.transpose_weighted(xu, out);
    };
    let mut r = vec![0.0; nn];
    apply_k(&u, &mut r, &mut xu);
    for (ri, li) in r.iter_mut().zip(&load) {
        *ri = -li - *ri;
    }
    let grad_norm_of = |r: &[f64]| {
        let g: Vec<f64> = r.iter().zip(w).map(|(a, m)| -a / m).collect();
        projected_norm(dom, &g)
    };
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(a, d)| a / d).collect();
    let mut pdir = z.clone();
    let mut rz: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
    let mut kp = vec![0.0; nn];
    let mut gn = grad_norm_of(&r);
    let mut it = 0;
    while gn > tol_abs && it < opts.max_iter {
        apply_k(&pdir, &mut kp, &mut xu);
        let pkp: f64 = pdir.iter().zip(&kp).map(|(a, b)| a * b).sum();
        if !(pkp > 0.0) {
            break;
        }
        let alpha = rz / pkp;
        for i in 0..nn {
            u[i] += alpha * pdir[i];
            r[i] -= alpha * kp[i];
        }
        // Keep the residual in the range of K (orthogonal to constants).
        let rmean = r.iter().sum::<f64>() / nn as f64;
        r.iter_mut().for_each(|x| *x -= rmean);
        for i in 0..nn {
            z[i] = r[i] / diag[i];
        }
        let rz_new: f64 = r.iter().zip(&z).map(|(a, b)| a * b).sum();
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..nn {
            pdir[i] = z[i] + beta * pdir[i];
        }
        it += 1;
        gn = grad_norm_of(&r);
    }
    project_in_place(w, vol, &mut u);
    let us = ScalarField::new(dom, u)?;
    let rep = energy(prob, &us)?;
    let converged = rep.grad_norm <= tol_abs * (1.0 + 1e-6) || gn <= tol_abs;
    if !converged {
        return Err(Error::NotConverged { iterations: it, grad_norm: rep.grad_norm, tolerance: tol_abs });
    }
    Ok(Solution {
        u: us,
        j: rep.j,
        grad_norm: rep.grad_norm,
        tolerance: tol_abs,
        iterations: it,
        delta_final: prob.reg_delta,
        converged,
        energy_trace: vec![rep.j],
        max_energy_increase: 0.0,
        max_mean_drift: 0.0,
    })
}

/// Accurate `J(u + αd) − J(u)` from element-wise differences.
struct LineModel<'a> {
    prob: &'a NeumannProblem,
    delta: f64,
}

impl LineModel<'_> {
    fn delta_energy(&self, xu: &[f64], xd: &[f64], alpha: f64, lin_d: f64) -> f64 {
        let prob = self.prob;
        let m = prob.op.num_fields();
        let p = prob.p;
        let s = 0.5 * p;
        let d2 = self.delta * self.delta;
        let mut acc = 0.0;
        for (e, wt) in prob.op.element_weights().iter().enumerate() {
            let (mut b, mut db) = (d2, 0.0);
            for j in 0..m {
                let z = xu[e * m + j];
                let dz = alpha * xd[e * m + j];
                b += z * z;
                db += dz * (2.0 * z + dz);
            }
            let diff = if p == 2.0 {
                db
            } else if b > 0.0 {
                b.powf(s) * (s * (db / b).ln_1p()).exp_m1()
            } else {
                (b + db).max(0.0).powf(s)
            };
            acc += wt * diff / p;
        }
        acc + alpha * lin_d
    }
}

fn solve_descent(
    prob: &NeumannProblem,
    opts: &SolveOptions,
    mut u: Vec<f64>,
    tol_abs: f64,
    delta_final: f64,
) -> Result<Solution> {
    let dom = &prob.dom;
    let op = &prob.op;
    let w = dom.weights();
    let vol = dom.volume();
    let nn = u.len();
    let load = prob.linear_load();
    let mut levels = Vec::new();
    if delta_final > 0.0 && opts.delta0 > delta_final {
        let mut d = opts.delta0;
        while d > delta_final {
            levels.push(d);
            d *= 0.5;
        }
    }
    levels.push(delta_final);
    let ne = op.num_elements() * op.num_fields();
    let mut xu = vec![0.0; ne];
    let mut xd = vec![0.0; ne];
    let mut total_it = 0usize;
    let mut max_increase = 0.0f64;
    let mut max_drift = 0.0f64;
    let mut trace = Vec::new();
    let mut gn = f64::INFINITY;
    let mut j_cur = 0.0;
    for (li, &delta) in levels.iter().enumerate() {
        let last = li + 1 == levels.len();
        let tol_level = if last { tol_abs } else { tol_abs * 1e3 };
        let model = LineModel { prob, delta };
        let mut g = gradient_at(prob, &u, delta)?;
        project_in_place(w, vol, &mut g);
        gn = mass_dot(w, &g, &g).sqrt();
        j_cur = crate::energy::energy_value(prob, &u, delta, &load, &mut xu);
        if last {
            trace.push(j_cur);
        }
        let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
        let mut alpha_prev = 0.0;
        let mut k = 0usize;
        while gn > tol_level {
            if total_it >= opts.max_iter {
                return Err(Error::NotConverged { iterations: total_it, grad_norm: gn, tolerance: tol_abs });
            }
            let d: Vec<f64> = g.iter().map(|x| -x).collect();
            let mut alpha = match &prev {
                None => 1.0 / gn.max(1e-300),
                Some((s, y)) => {
                    let sy = mass_dot(w, s, y);
                    if sy > 0.0 {
                        if k % 2 == 0 {
                            mass_dot(w, s, s) / sy
                        } else {
                            sy / mass_dot(w, y, y)
                        }
                    } else {
                        alpha_prev * 2.0
                    }
                }
            };
            op.apply(&u, &mut xu);
            op.apply(&d, &mut xd);
            let lin_d: f64 = load.iter().zip(&d).map(|(a, b)| a * b).sum();
            let slope = -gn * gn;
            let mut accepted = None;
            for _ in 0..80 {
                let dj = model.delta_energy(&xu, &xd, alpha, lin_d);
                if dj.is_finite() && dj <= 1e-4 * alpha * slope {
                    accepted = Some(dj);
                    break;
                }
                alpha *= 0.5;
            }
            let Some(dj) = accepted else {
                return Err(Error::NotConverged { iterations: total_it, grad_norm: gn, tolerance: tol_abs });
            };
            let s: Vec<f64> = d.iter().map(|x| alpha * x).collect();
            for i in 0..nn {
                u[i] += s[i];
            }
            max_drift = max_drift.max(mean_of(w, vol, &u).abs());
            project_in_place(w, vol, &mut u);
            max_increase = max_increase.max(dj);
            j_cur += dj;
            if last {
                trace.push(j_cur);
            }
            let mut g_new = gradient_at(prob, &u, delta)?;
            project_in_place(w, vol, &mut g_new);
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            prev = Some((s, y));
            alpha_prev = alpha;
            g = g_new;
            gn = mass_dot(w, &g, &g).sqrt();
            k += 1;
            total_it += 1;
        }
    }
    let us = ScalarField::new(dom, u)?;
    let j = crate::energy::energy_at(prob, &us, delta_final)?.j;
    let _ = j_cur;
    Ok(Solution {
        u: us,
        j,
        grad_norm: gn,
        tolerance: tol_abs,
        iterations: total_it,
        delta_final,
        converged: true,
        energy_trace: trace,
        max_energy_increase: max_increase,
        max_mean_drift: max_drift,
    })
}

/// Outcome of solving from several random initializations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UniquenessReport {
    pub trials: usize,
    /// `max_{i,j} ‖u_i − u_j‖_{L^p} / ‖u_1‖_{L^p}` (absolute when `u_1 = 0`).
    pub max_discrepancy: f64,
    pub iterations: Vec<usize>,
}

/// Solves from `trials` seeded random initializations and compares the results.
pub fn uniqueness_check(prob: &NeumannProblem, opts: &SolveOptions, trials: usize) -> Result<UniquenessReport> {
    if trials < 2 {
        return Err(Error::InvalidParameter("uniqueness check needs at least 2 trials".into()));
    }
    let mut sols = Vec::with_capacity(trials);
    for t in 0..trials {
        let o = SolveOptions { init: Init::Random, seed: opts.seed.wrapping_add(t as u64 * 7919), ..opts.clone() };
        sols.push(solve(prob, &o)?);
    }
    let p = prob.p;
    let base = lq_norm(&prob.dom, &sols[0].u, p)?;
    let mut worst = 0.0f64;
    for i in 0..trials {
        for j in i + 1..trials {
            let diff = sols[i].u.combine(1.0, &sols[j].u, -1.0);
            worst = worst.max(lq_norm(&prob.dom, &diff, p)?);
        }
    }
    Ok(UniquenessReport {
        trials,
        max_discrepancy: if base > 0.0 { worst / base } else { worst },
        iterations: sols.iter().map(|s| s.iterations).collect(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AprioriRatio {
    /// `‖Xu‖_{L^p} / (‖g‖_{L^{q'}(dμ)} + ‖f‖_{L^{q'}(dx)})^{1/(p−1)}`.
    pub ratio: f64,
    pub grad_norm_lp: f64,
    pub data_norm: f64,
    /// Both data vanish, so `u = 0` and the ratio is reported as 0.
    pub zero_data: bool,
}

/// Empirical constant of the a-priori estimate, with the dual norm of ν
/// replaced by its `L^{q'}(dμ)` surrogate.
pub fn apriori_estimate_ratio(prob: &NeumannProblem, sol: &Solution) -> Result<AprioriRatio> {
    let qc = prob.besov.q_conj();
    let data_norm = dual_norm_surrogate(&prob.dom, &prob.nu, &prob.besov)? + lq_norm(&prob.dom, &prob.f, qc)?;
    let grad = grad_lq_norm(&prob.op, &sol.u, prob.p)?;
    if data_norm == 0.0 {
        return Ok(AprioriRatio { ratio: 0.0, grad_norm_lp: grad, data_norm, zero_data: true });
    }
    Ok(AprioriRatio {
        ratio: grad / data_norm.powf(1.0 / (prob.p - 1.0)),
        grad_norm_lp: grad,
        data_norm,
        zero_data: false,
    })
}

/// `(avg |u − u_Ω|^{kp})^{1/kp} / (diam · (avg |Xu|^p)^{1/p})`.
pub fn poincare_ratio(
    op: &HorizontalOperator,
    dom: &GridDomain,
    u: &ScalarField,
    p: f64,
    k: f64,
    diam: f64,
) -> Result<f64> {
    if !(k >= 1.0) || !(p >= 1.0) {
        return Err(Error::InvalidParameter(format!("Poincaré exponents need p ≥ 1, k ≥ 1 (got {p}, {k})")));
    }
    if !(diam > 0.0) {
        return Err(Error::InvalidParameter("diameter must be positive".into()));
    }
    let vol = dom.volume();
    let xu = op.gradient(u)?;
    let mags = xu.magnitudes();
    let scale = u.values().iter().fold(0.0f64, |a, v| a.max(v.abs())).max(f64::MIN_POSITIVE);
    if mags.iter().all(|&a| a <= 1e-12 * scale) {
        return Err(Error::ZeroGradient);
    }
    let centered = mean_zero_project(dom, u)?;
    let kp = k * p;
    let lhs = (centered.values().iter().zip(dom.weights()).map(|(v, w)| w * v.abs().powf(kp)).sum::<f64>() / vol)
        .powf(1.0 / kp);
    let rhs = diam
        * (mags.iter().zip(op.element_weights()).map(|(a, w)| w * a.powf(p)).sum::<f64>() / vol).powf(1.0 / p);
    Ok(lhs / rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{BoundaryValues, Shape};
    use crate::fields::VectorFieldSystem;

    fn interval_problem(h: f64, p: f64) -> NeumannProblem {
        let dom = GridDomain::build(Shape::Box { lo: vec![0.0], hi: vec![1.0] }, h).unwrap();
        let pi = std::f64::consts::PI;
        let f = ScalarField::from_fn(&dom, |x| -pi * pi * (pi * x[0]).cos());
        let g = BoundaryValues::constant(&dom, 0.0);
        NeumannProblem::new(VectorFieldSystem::euclidean(1), dom, p, p.min(2.0), 0.5, None, f, g, 0.0).unwrap()
    }

    #[test]
    fn zero_data_gives_zero() {
        let mut prob = interval_problem(1.0 / 16.0, 2.0);
        prob = prob.with_scaled_data(0.0);
        let s = solve(&prob, &SolveOptions::default()).unwrap();
        assert!(s.u.values().iter().all(|&v| v == 0.0));
        assert_eq!(s.j, 0.0);
        assert!(s.iterations <= 1);
    }

    #[test]
    fn cosine_oracle_second_order() {
        let pi = std::f64::consts::PI;
        let mut errs = Vec::new();
        for k in [16, 32] {
            let prob = interval_problem(1.0 / k as f64, 2.0);
            let s = solve(&prob, &SolveOptions::default()).unwrap();
            let e: f64 = s
                .u
                .values()
                .iter()
                .enumerate()
                .map(|(i, v)| prob.dom.weights()[i] * (v - (pi * prob.dom.node(i)[0]).cos()).powi(2))
                .sum::<f64>()
                .sqrt();
            errs.push(e);
        }
        let slope = (errs[0] / errs[1]).log2();
        assert!((1.8..=2.2).contains(&slope), "{errs:?}");
    }

    #[test]
    fn descent_matches_cg_at_p2() {
        let prob = interval_problem(1.0 / 32.0, 2.0);
        let a = solve(&prob, &SolveOptions::default()).unwrap();
        let b = solve(&prob, &SolveOptions { method: Method::DescentBb, ..Default::default() }).unwrap();
        for (x, y) in a.u.values().iter().zip(b.u.values()) {
            assert!((x - y).abs() < 1e-6);
        }
        assert!(b.max_energy_increase <= 0.0);
    }

    #[test]
    fn incompatible_data_is_rejected() {
        let dom = GridDomain::build(Shape::Box { lo: vec![0.0], hi: vec![1.0] }, 1.0 / 16.0).unwrap();
        let prob = NeumannProblem::new(
            VectorFieldSystem::euclidean(1),
            dom.clone(),
            2.0,
            2.0,
            0.5,
            None,
            ScalarField::constant(&dom, 1.0),
            BoundaryValues::constant(&dom, 0.0),
            0.0,
        )
        .unwrap();
        assert!(matches!(solve(&prob, &SolveOptions::default()), Err(Error::IncompatibleData { .. })));
    }

    #[test]
    fn coordinate_poincare_ratio_below_one() {
        let dom = GridDomain::build(Shape::Box { lo: vec![0.0, 0.0], hi: vec![1.0, 1.0] }, 1.0 / 16.0).unwrap();
        let sys = VectorFieldSystem::euclidean(2);
        let op = HorizontalOperator::new(&sys, &dom).unwrap();
        let u = ScalarField::from_fn(&dom, |x| x[0]);
        let r = poincare_ratio(&op, &dom, &u, 2.0, 1.0, dom.diam_euclidean()).unwrap();
        assert!(r < 1.0);
        let c = ScalarField::constant(&dom, 2.0);
        assert!(matches!(poincare_ratio(&op, &dom, &c, 2.0, 1.0, 1.0), Err(Error::ZeroGradient)));
    }
}
