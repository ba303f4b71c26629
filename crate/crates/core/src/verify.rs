//! Check suite: every quantitative property the existence theory predicts,
//! evaluated on one configured problem.
//!
//! Each check records what it measured, the claim it shadows, the pass
//! criterion and the outcome. A failing or erroring check never aborts the
//! suite. Report bodies depend only on (configuration, seed); runtimes are
//! kept apart in [`VerifyReport::timings`].

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::besov::{
    besov_seminorm, dual_norm_surrogate, empirical_dual_norm, pair_boundary, trace_inequality_ratio, BesovGeometry,
    BoundaryDatum, DEFAULT_NODE_CAP,
};
use crate::cc_metric::{
    ahlfors_upper_check, doubling_ratio, estimate_diameter, estimate_q, MetricGraph, MetricOptions,
};
use crate::domain::{
    characteristic_points, heisenberg_gauge, mean_zero_project, BoundaryValues, GridDomain, NodeKind, ScalarField,
    Shape,
};
use crate::energy::{
    energy, energy_gradient, kinetic, p_convexity_gap, weak_residual, NeumannProblem,
};
use crate::fields::{formal_adjoint_apply, nodal_gradient, HorizontalField, VectorFieldSystem};
use crate::solver::{apriori_estimate_ratio, poincare_ratio, solve, uniqueness_check, Method, SolveOptions, Solution};
use crate::testfields::SmoothField;
use crate::{Error, Result};

/// Checks of the default suite, in report order.
pub const DEFAULT_SUITE: &[&str] = &[
    "adjoint_identity",
    "gradient_consistency",
    "gradient_linearity",
    "projection_idempotent",
    "volume_refinement",
    "characteristic_symmetry",
    "metric_symmetry",
    "triangle_inequality",
    "euclidean_distance",
    "dilation",
    "ball_monotone",
    "q_estimate",
    "doubling",
    "ahlfors_upper",
    "diameter_bound",
    "besov_homogeneity",
    "besov_triangle",
    "besov_constants",
    "pairing_bilinear",
    "trace_inequality",
    "dual_norm",
    "compatibility",
    "midpoint_convexity",
    "strict_convexity",
    "constant_shift",
    "weak_form_consistency",
    "p_convexity_gap",
    "fd_gradient",
    "solve",
    "monotone_energy",
    "mean_zero_iterates",
    "weak_solution",
    "shift_degeneracy",
    "homogeneity",
    "uniqueness",
    "apriori_ratio",
    "poincare_ratio",
];

/// Sample sizes and thresholds of the suite.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VerifyConfig {
    /// Checks to run; `None` selects [`DEFAULT_SUITE`].
    #[serde(skip_serializing_if = "Option::is_none")]
    pub suite: Option<Vec<String>>,
    pub n_test: usize,
    pub convexity_pairs: usize,
    pub gap_samples: usize,
    pub lambdas: Vec<f64>,
    pub uniqueness_trials: usize,
    pub tol_adjoint: f64,
    pub tol_weak: f64,
    pub tol_uniqueness: f64,
    pub tol_homogeneity: f64,
    /// Homogeneity tolerance on the linear (conjugate-gradient) path.
    pub tol_homogeneity_cg: f64,
    pub tol_convexity: f64,
    pub min_consistency_slope: f64,
    pub fd_slope: [f64; 2],
    pub tol_euclidean_distance: f64,
    pub tol_dilation: f64,
    pub tol_q_euclidean: f64,
    pub tol_q: f64,
    /// Doubling ratios are accepted up to `slack · 2^Q`.
    pub doubling_slack: f64,
    /// Ahlfors radii, as fractions of the Euclidean domain diameter.
    pub ahlfors_radii: Vec<f64>,
    pub ahlfors_samples: usize,
    pub ahlfors_s: f64,
    pub poincare_k: f64,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            suite: None,
            n_test: 20,
            convexity_pairs: 1000,
            gap_samples: 100_000,
            lambdas: vec![2.0, 10.0],
            uniqueness_trials: 3,
            tol_adjoint: 1e-12,
            tol_weak: 1e-6,
            tol_uniqueness: 1e-4,
            tol_homogeneity: 0.01,
            tol_homogeneity_cg: 1e-8,
            tol_convexity: 1e-12,
            min_consistency_slope: 1.9,
            fd_slope: [1.8, 2.2],
            tol_euclidean_distance: 0.03,
            tol_dilation: 0.1,
            tol_q_euclidean: 0.2,
            tol_q: 0.3,
            doubling_slack: 1.5,
            ahlfors_radii: vec![0.2, 0.27, 0.35],
            ahlfors_samples: 8,
            ahlfors_s: 1.0,
            poincare_k: 1.0,
        }
    }
}

impl VerifyConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(s) = &self.suite {
            for name in s {
                check_name(name)?;
            }
        }
        let pos = [
            self.tol_adjoint,
            self.tol_weak,
            self.tol_uniqueness,
            self.tol_homogeneity,
            self.tol_homogeneity_cg,
            self.tol_euclidean_distance,
            self.tol_dilation,
            self.tol_q_euclidean,
            self.tol_q,
            self.doubling_slack,
            self.ahlfors_s,
        ];
        if pos.iter().any(|v| !(*v > 0.0)) || !(self.tol_convexity >= 0.0) {
            return Err(Error::Config("verify tolerances must be positive".into()));
        }
        if self.n_test == 0 || self.uniqueness_trials < 2 || self.ahlfors_samples == 0 {
            return Err(Error::Config("verify.n_test ≥ 1, uniqueness_trials ≥ 2, ahlfors_samples ≥ 1".into()));
        }
        if self.ahlfors_radii.is_empty() || self.ahlfors_radii.iter().any(|r| !(*r > 0.0)) {
            return Err(Error::Config("verify.ahlfors_radii must be positive and non-empty".into()));
        }
        if self.lambdas.iter().any(|l| !(*l > 0.0)) {
            return Err(Error::Config("verify.lambdas must be positive".into()));
        }
        if !(self.fd_slope[0] < self.fd_slope[1]) || !(self.poincare_k >= 1.0) {
            return Err(Error::Config("verify.fd_slope must be an increasing pair and poincare_k ≥ 1".into()));
        }
        Ok(())
    }

    pub fn suite_names(&self) -> Vec<String> {
        match &self.suite {
            Some(s) => s.clone(),
            None => DEFAULT_SUITE.iter().map(|s| s.to_string()).collect(),
        }
    }
}

fn check_name(name: &str) -> Result<()> {
    if DEFAULT_SUITE.contains(&name) {
        Ok(())
    } else {
        Err(Error::UnknownCheck(name.to_string()))
    }
}

/// Parses a comma-separated suite list; `default` and `all` expand to the default suite.
pub fn parse_suite(list: &str) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        if item == "default" || item == "all" {
            out.extend(DEFAULT_SUITE.iter().map(|s| s.to_string()));
        } else {
            check_name(item)?;
            out.push(item.to_string());
        }
    }
    Ok(out)
}

/// Everything besides the problem that the suite reads.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteSettings {
    pub verify: VerifyConfig,
    pub metric: MetricOptions,
    pub besov_cap: usize,
    pub seed: u64,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        SuiteSettings {
            verify: VerifyConfig::default(),
            metric: MetricOptions::default(),
            besov_cap: DEFAULT_NODE_CAP,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckRecord {
    pub name: String,
    /// The claim the check shadows.
    pub anchor: String,
    pub criterion: String,
    pub values: BTreeMap<String, f64>,
    pub pass: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Environment {
    pub system: String,
    pub shape: Shape,
    pub h: f64,
    pub num_nodes: usize,
    pub num_boundary: usize,
    pub p: f64,
    pub q: f64,
    pub s: f64,
    pub beta: f64,
    pub reg_delta: f64,
    pub seed: u64,
    pub dir_count: usize,
    pub metric_step_factor: f64,
    pub tol_grad: f64,
    pub tol_compat: f64,
    pub r_o: f64,
    pub ahlfors_m: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VerifyReport {
    pub environment: Environment,
    pub checks: Vec<CheckRecord>,
    pub pass: bool,
    /// Wall-clock seconds per check; not part of the report body.
    #[serde(skip)]
    pub timings: Vec<(String, f64)>,
}

impl VerifyReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckRecord> {
        self.checks.iter().filter(|c| !c.pass)
    }

    pub fn check(&self, name: &str) -> Option<&CheckRecord> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// Human-readable table; failing rows carry the anchor.
    pub fn table(&self) -> String {
        let mut s = String::new();
        let w = self.checks.iter().map(|c| c.name.len()).max().unwrap_or(5).max(5);
        let _ = writeln!(s, "{:<w$}  {:<4}  {}", "check", "ok", "values");
        for c in &self.checks {
            let vals: Vec<String> = c.values.iter().map(|(k, v)| format!("{k}={v:.4e}")).collect();
            let _ = writeln!(s, "{:<w$}  {:<4}  {}", c.name, if c.pass { "pass" } else { "FAIL" }, vals.join(" "));
            if !c.pass {
                let _ = writeln!(s, "{:<w$}        claim: {}", "", c.anchor);
                let _ = writeln!(s, "{:<w$}        criterion: {}", "", c.criterion);
                if let Some(n) = &c.note {
                    let _ = writeln!(s, "{:<w$}        note: {n}", "");
                }
            }
        }
        let _ = writeln!(s, "overall: {}", if self.pass { "pass" } else { "FAIL" });
        s
    }

    /// `name,seconds` lines.
    pub fn timings_csv(&self) -> String {
        let mut s = String::from("check,seconds\n");
        for (n, t) in &self.timings {
            let _ = writeln!(s, "{n},{t:.6}");
        }
        s
    }
}

fn anchor(name: &str) -> &'static str {
    match name {
        "adjoint_identity" => "integration by parts: the formal adjoint X* is the transpose of X",
        "gradient_consistency" => "the discrete horizontal gradient is second-order accurate on quadratics",
        "gradient_linearity" => "X is linear",
        "projection_idempotent" => "mean-zero normalization is a projection",
        "volume_refinement" => "Lebesgue measure of Ω is approximated monotonically under refinement",
        "characteristic_symmetry" => "the characteristic set is invariant under the rotation (x,y) -> (-x,-y)",
        "metric_symmetry" => "the Carnot-Caratheodory distance is symmetric",
        "triangle_inequality" => "the Carnot-Caratheodory distance satisfies the triangle inequality",
        "euclidean_distance" => "for coordinate fields the CC distance is the Euclidean distance",
        "dilation" => "CC distances scale linearly under the intrinsic dilations",
        "ball_monotone" => "ball volume is nondecreasing in the radius",
        "q_estimate" => "ball volume grows like r^Q with Q the homogeneous dimension",
        "doubling" => "Lebesgue measure is doubling on CC balls",
        "ahlfors_upper" => "mu = |X rho| d sigma is an upper s-Ahlfors measure: mu(B(x,r)) <= M |B(x,r)| / r^s",
        "diameter_bound" => "the domain is small relative to the local parameter: diam(Ω) < R_o / 2",
        "besov_homogeneity" => "the boundary Besov seminorm is absolutely homogeneous",
        "besov_triangle" => "the boundary Besov seminorm satisfies the triangle inequality",
        "besov_constants" => "the boundary Besov seminorm vanishes exactly on constants",
        "pairing_bilinear" => "the boundary pairing <nu, phi> is bilinear",
        "trace_inequality" => "the trace maps the horizontal Sobolev space boundedly into the boundary Besov space",
        "dual_norm" => "|<nu, phi>| <= ||g||_{L^q'(mu)} ||phi||_Besov (Hölder)",
        "compatibility" => "existence requires <nu, 1> = integral of f",
        "midpoint_convexity" => "the kinetic term is convex",
        "strict_convexity" => "the functional is strictly convex on the mean-zero subspace",
        "constant_shift" => "J(u + c) = J(u) under the compatibility condition",
        "weak_form_consistency" => "the weak residual is the pairing with the energy gradient",
        "p_convexity_gap" => "(1/p)|w|^p >= (1/p)|z|^p + |z|^(p-2) <z, w - z>",
        "fd_gradient" => "the assembled gradient is the derivative of the discrete energy",
        "solve" => "a minimizer exists in the mean-zero subspace",
        "monotone_energy" => "the line search never increases the energy",
        "mean_zero_iterates" => "iterates stay in the mean-zero subspace",
        "weak_solution" => "a minimizer is a weak solution of the Neumann problem",
        "shift_degeneracy" => "minimizers differ by constants; the mean-zero normalization removes them",
        "homogeneity" => "scaling the data by lambda scales Xu by lambda^(1/(p-1)); the estimate constant is invariant",
        "uniqueness" => "the minimizer is unique modulo constants",
        "apriori_ratio" => "||Xu||_p <= C (||nu|| + ||f||_q')^(1/(p-1))",
        "poincare_ratio" => "Poincaré-Sobolev inequality on Ω",
        _ => "",
    }
}

fn criterion(name: &str, c: &VerifyConfig) -> String {
    match name {
        "adjoint_identity" => format!("V nonzero and |<Xu,V> - <u,X*V>| <= {:e} ||u|| ||V||", c.tol_adjoint),
        "gradient_consistency" => {
            format!("max nodal error exact (<= 1e-9) or refinement slope >= {}", c.min_consistency_slope)
        }
        "gradient_linearity" => "max deviation <= 1e-12 relative".into(),
        "projection_idempotent" => "max |P(Pu) - Pu| <= 1e-13 max|u|".into(),
        "volume_refinement" => "volume error nonincreasing over h, h/2, h/4".into(),
        "characteristic_symmetry" => "every rotated characteristic point lies within 2h sqrt(n) of one".into(),
        "metric_symmetry" => "edge table symmetric; |d(x,y) - d(y,x)| <= 1e-12 d".into(),
        "triangle_inequality" => "d(x,z) <= (d(x,y) + d(y,z)) (1 + 1e-12)".into(),
        "euclidean_distance" => format!(
            "relative error <= {} at the configured dir_count and not above the 8-direction error",
            c.tol_euclidean_distance
        ),
        "dilation" => format!("|d(0, δ_2 x) / d(0, x) - 2| <= {} · 2", c.tol_dilation),
        "ball_monotone" => "volume nondecreasing in r".into(),
        "q_estimate" => format!("|Q - Q_hint| <= {} (Euclidean) or {}", c.tol_q_euclidean, c.tol_q),
        "doubling" => format!("max |B(x,2r)|/|B(x,r)| <= {} · 2^Q", c.doubling_slack),
        "ahlfors_upper" => "max ratio finite and <= declared M".into(),
        "diameter_bound" => "CC diameter < R_o / 2".into(),
        "besov_homogeneity" => "|N(λf) - |λ| N(f)| <= 1e-12 |λ| N(f)".into(),
        "besov_triangle" => "N(f+g) <= (N(f) + N(g)) (1 + 1e-10)".into(),
        "besov_constants" => "N(const) = 0 and N(f) > 0 for nonconstant f".into(),
        "pairing_bilinear" => "linearity defect <= 1e-12 relative in both arguments".into(),
        "trace_inequality" => "every ratio of the polynomial family finite and positive".into(),
        "dual_norm" => "empirical dual norm <= surrogate (1 + 1e-12)".into(),
        "compatibility" => "|<nu,1> - ∫f| <= tol_compat (||f||_1 + ||g||_1)".into(),
        "midpoint_convexity" => format!("I((u+v)/2) <= (I(u)+I(v))/2 + {:e}", c.tol_convexity),
        "strict_convexity" => "(I(u)+I(v))/2 - I((u+v)/2) > 0".into(),
        "constant_shift" => "|J(u+c) - J(u)| <= |c| |residual| + 1e-10 (1 + |J|)".into(),
        "weak_form_consistency" => "weak residual equals <grad J, phi>_h to 1e-12 relative".into(),
        "p_convexity_gap" => format!("min gap >= -{:e}", c.tol_convexity),
        "fd_gradient" => format!(
            "central-difference error slope in [{}, {}] (or <= 1e-9 for quadratic energies)",
            c.fd_slope[0], c.fd_slope[1]
        ),
        "solve" => "solver converged".into(),
        "monotone_energy" => "no accepted step raises J".into(),
        "mean_zero_iterates" => "|u_Ω| <= 1e-12 max(1, max|u|) for every iterate".into(),
        "weak_solution" => format!("|weak residual(u, φ)| <= {:e} ||φ|| for {} random φ", c.tol_weak, c.n_test),
        "shift_degeneracy" => "P(u + c) = u within 1e-12".into(),
        "homogeneity" => format!(
            "scaling error <= {} ({} on the linear path); C_emp invariant within {}",
            c.tol_homogeneity, c.tol_homogeneity_cg, c.tol_homogeneity
        ),
        "uniqueness" => format!("relative L^p discrepancy < {:e}", c.tol_uniqueness),
        "apriori_ratio" => "C_emp finite".into(),
        "poincare_ratio" => "ratios finite and positive".into(),
        _ => String::new(),
    }
}

type Values = Vec<(&'static str, f64)>;

struct Outcome {
    values: Values,
    pass: bool,
    note: Option<String>,
}

fn outcome(values: Values, pass: bool) -> Outcome {
    Outcome { values, pass, note: None }
}

fn with_note(values: Values, pass: bool, note: impl Into<String>) -> Outcome {
    Outcome { values, pass, note: Some(note.into()) }
}

fn sub_seed(seed: u64, tag: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ tag.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

fn l2(dom: &GridDomain, v: &[f64]) -> f64 {
    v.iter().zip(dom.weights()).map(|(a, w)| w * a * a).sum::<f64>().sqrt()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |a, x| a.max(x.abs()))
}

fn ls_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = xs.iter().zip(ys).map(|(x, y)| (x.ln(), y.ln())).collect();
    crate::cc_metric::ls_slope(&pts)
}

fn shape_volume(shape: &Shape) -> f64 {
    match shape {
        Shape::Box { lo, hi } => lo.iter().zip(hi).map(|(a, b)| b - a).product(),
        Shape::EuclideanBall { center, radius } => {
            let n = center.len();
            let mut v = if n % 2 == 0 { 1.0 } else { 2.0 };
            let mut k = if n % 2 == 0 { 2 } else { 3 };
            while k <= n {
                v *= 2.0 * std::f64::consts::PI / k as f64;
                k += 2;
            }
            v * radius.powi(n as i32)
        }
        Shape::GaugeBall { radius } => std::f64::consts::PI.powi(2) / 8.0 * radius.powi(4),
    }
}

/// Quadratic test polynomial and its Euclidean gradient.
fn quad_poly(x: &[f64]) -> f64 {
    let n = x.len();
    let mut s = 0.3;
    for i in 0..n {
        s += x[i] * (0.5 + i as f64) + 0.7 * x[i] * x[(i + 1) % n] + 0.4 * x[i] * x[i];
    }
    s
}

fn quad_poly_grad(x: &[f64], out: &mut [f64]) {
    let n = x.len();
    for i in 0..n {
        let prev = (i + n - 1) % n;
        out[i] = 0.5 + i as f64 + 0.7 * x[(i + 1) % n] + 0.7 * x[prev] + 0.8 * x[i];
    }
    if n == 1 {
        // x0·x0 term counted twice above.
        out[0] = 0.5 + 1.4 * x[0] + 0.8 * x[0];
    }
}

/// Reference lattice for scaling checks: box, spacing, radii for Q.
fn reference_box(sys: &VectorFieldSystem) -> Option<(Vec<f64>, Vec<f64>, f64, [f64; 2])> {
    let n = sys.ambient_dim();
    match sys.name() {
        "heisenberg1" => Some((vec![-1.0, -1.0, -0.25], vec![1.0, 1.0, 0.25], 0.1, [0.4, 0.8])),
        "grushin" => Some((vec![-1.0, -1.0], vec![1.0, 1.0], 0.1, [0.3, 0.8])),
        name if name.starts_with("euclidean") => {
            let h = match n {
                1 => 0.005,
                2 => 0.02,
                3 => 0.05,
                _ => return None,
            };
            Some((vec![-1.0; n], vec![1.0; n], h, [0.3, 0.8]))
        }
        _ => None,
    }
}

/// Points for the dilation check, scaled per axis weight.
fn dilation_points(weights: &[u32]) -> Vec<Vec<f64>> {
    let base: [[f64; 3]; 4] = [[0.2, 0.1, 0.3], [0.1, -0.2, 0.5], [0.25, 0.05, -0.4], [-0.05, 0.15, 0.7]];
    base.iter()
        .map(|b| {
            weights
                .iter()
                .enumerate()
                .map(|(i, &w)| if w == 1 { b[i % 2] } else { 0.1 * b[2] })
                .collect()
        })
        .collect()
}

struct Runner<'a> {
    prob: &'a NeumannProblem,
    opts: &'a SolveOptions,
    set: &'a SuiteSettings,
    graph: Option<std::result::Result<MetricGraph, String>>,
    geom: Option<std::result::Result<BesovGeometry, String>>,
    solution: Option<std::result::Result<Solution, String>>,
    descent: Option<std::result::Result<Solution, String>>,
    reference: Option<std::result::Result<MetricGraph, String>>,
}

fn cached<T>(slot: &mut Option<std::result::Result<T, String>>, make: impl FnOnce() -> Result<T>) -> Result<&T> {
    if slot.is_none() {
        *slot = Some(make().map_err(|e| e.to_string()));
    }
    match slot.as_ref().expect("filled") {
        Ok(v) => Ok(v),
        Err(e) => Err(Error::InvalidParameter(format!("prerequisite failed: {e}"))),
    }
}

impl<'a> Runner<'a> {
    fn dom(&self) -> &'a GridDomain {
        &self.prob.dom
    }

    fn random_field(&self, tag: u64) -> ScalarField {
        SmoothField::random(self.dom().dim(), 6, 3.0, sub_seed(self.set.seed, tag)).on_nodes(self.dom())
    }

    fn random_boundary(&self, tag: u64) -> BoundaryValues {
        SmoothField::random(self.dom().dim(), 6, 3.0, sub_seed(self.set.seed, tag)).on_boundary(self.dom())
    }

    fn rng(&self, tag: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(sub_seed(self.set.seed, tag))
    }

    /// Problem with the regularization the solver actually uses.
    fn effective(&self, delta: f64) -> NeumannProblem {
        if self.prob.p < 2.0 && self.prob.reg_delta == 0.0 {
            self.prob.with_reg_delta(delta)
        } else {
            self.prob.clone()
        }
    }

    fn graph(&mut self) -> Result<&MetricGraph> {
        let (sys, dom, opts) = (&self.prob.sys, self.dom(), &self.set.metric);
        cached(&mut self.graph, || MetricGraph::build(sys, dom, opts))
    }

    fn geometry(&mut self) -> Result<&BesovGeometry> {
        if self.geom.is_none() {
            let cap = self.set.besov_cap;
            let dom = self.dom();
            let g = self.graph().map(|g| BesovGeometry::new(g, dom, None, cap));
            self.geom = Some(match g {
                Ok(Ok(v)) => Ok(v),
                Ok(Err(e)) | Err(e) => Err(e.to_string()),
            });
        }
        cached(&mut self.geom, || unreachable!())
    }

    fn solution(&mut self) -> Result<&Solution> {
        let (prob, opts) = (self.prob, self.opts);
        cached(&mut self.solution, || solve(prob, opts))
    }

    fn descent(&mut self) -> Result<&Solution> {
        let (prob, opts) = (self.prob, self.opts);
        let resolved_descent = opts.method == Method::DescentBb || (opts.method == Method::Auto && prob.p != 2.0);
        if resolved_descent {
            return self.solution();
        }
        cached(&mut self.descent, || solve(prob, &SolveOptions { method: Method::DescentBb, ..opts.clone() }))
    }

    fn reference(&mut self) -> Result<&MetricGraph> {
        let sys = &self.prob.sys;
        let dir_count = self.set.metric.dir_count;
        cached(&mut self.reference, || {
            let (lo, hi, h, _) = reference_box(sys)
                .ok_or_else(|| Error::InvalidParameter(format!("no reference lattice for `{}`", sys.name())))?;
            let opts = MetricOptions { dir_count, halo: 0.0, ..MetricOptions::default() };
            MetricGraph::build_box(sys, &lo, &hi, h, &opts)
        })
    }

    fn run(&mut self, name: &str) -> Result<Outcome> {
        match name {
            "adjoint_identity" => self.adjoint_identity(),
            "gradient_consistency" => self.gradient_consistency(),
            "gradient_linearity" => self.gradient_linearity(),
            "projection_idempotent" => self.projection_idempotent(),
            "volume_refinement" => self.volume_refinement(),
            "characteristic_symmetry" => self.characteristic_symmetry(),
            "metric_symmetry" => self.metric_symmetry(),
            "triangle_inequality" => self.triangle_inequality(),
            "euclidean_distance" => self.euclidean_distance(),
            "dilation" => self.dilation(),
            "ball_monotone" => self.ball_monotone(),
            "q_estimate" => self.q_estimate(),
            "doubling" => self.doubling(),
            "ahlfors_upper" => self.ahlfors_upper(),
            "diameter_bound" => self.diameter_bound(),
            "besov_homogeneity" => self.besov_homogeneity(),
            "besov_triangle" => self.besov_triangle(),
            "besov_constants" => self.besov_constants(),
            "pairing_bilinear" => self.pairing_bilinear(),
            "trace_inequality" => self.trace_inequality(),
            "dual_norm" => self.dual_norm(),
            "compatibility" => self.compatibility(),
            "midpoint_convexity" => self.midpoint_convexity(),
            "strict_convexity" => self.strict_convexity(),
            "constant_shift" => self.constant_shift(),
            "weak_form_consistency" => self.weak_form_consistency(),
            "p_convexity_gap" => self.p_convexity_gap(),
            "fd_gradient" => self.fd_gradient(),
            "solve" => self.solve_check(),
            "monotone_energy" => self.monotone_energy(),
            "mean_zero_iterates" => self.mean_zero_iterates(),
            "weak_solution" => self.weak_solution(),
            "shift_degeneracy" => self.shift_degeneracy(),
            "homogeneity" => self.homogeneity(),
            "uniqueness" => self.uniqueness(),
            "apriori_ratio" => self.apriori_ratio(),
            "poincare_ratio" => self.poincare_ratio(),
            other => Err(Error::UnknownCheck(other.to_string())),
        }
    }

    // ---- fields ----

    fn adjoint_identity(&mut self) -> Result<Outcome> {
        let dom = self.dom();
        let sys = &self.prob.sys;
        let op = &self.prob.op;
        let m = op.num_fields();
        // Graph depth from non-interior nodes through shared elements.
        let mut depth: Vec<usize> =
            dom.kinds().iter().map(|k| if *k == NodeKind::Interior { usize::MAX } else { 0 }).collect();
        for level in 0..2 {
            let mut next = depth.clone();
            for e in 0..dom.num_elements() {
                let vs = dom.element_vertices(e);
                if vs.iter().any(|&v| depth[v as usize] == level) {
                    for &v in vs {
                        next[v as usize] = next[v as usize].min(level + 1);
                    }
                }
            }
            depth = next;
        }
        let inside = |e: usize, c: usize| dom.element_vertices(e).iter().all(|&v| depth[v as usize] >= c);
        // Two-node collar, or one on grids too coarse to leave any element.
        let collar = if (0..dom.num_elements()).any(|e| inside(e, 2)) { 2 } else { 1 };
        let field = SmoothField::random(dom.dim() + m, 6, 3.0, sub_seed(self.set.seed, 11));
        let mut vals = vec![0.0; dom.num_elements() * m];
        let mut xj = vec![0.0; dom.dim() + m];
        for e in 0..dom.num_elements() {
            if inside(e, collar) {
                let c = dom.element_centroid(e);
                for j in 0..m {
                    xj[..dom.dim()].copy_from_slice(&c);
                    xj[dom.dim()..].iter_mut().for_each(|v| *v = 0.0);
                    xj[dom.dim() + j] = 1.0;
                    vals[e * m + j] = field.eval(&xj);
                }
            }
        }
        let v = HorizontalField::new(dom, m, vals)?;
        let u = self.random_field(12);
        let xu = op.gradient(&u)?;
        let lhs = crate::fields::horizontal_inner(dom, &xu, &v)?;
        let xsv = formal_adjoint_apply(sys, dom, &v)?;
        let rhs: f64 = u.values().iter().zip(xsv.values()).zip(dom.weights()).map(|((a, b), w)| a * b * w).sum();
        let nu = l2(dom, u.values());
        let nv = crate::fields::horizontal_inner(dom, &v, &v)?.sqrt();
        let defect = (lhs - rhs).abs();
        let bound = self.set.verify.tol_adjoint * nu * nv;
        Ok(outcome(
            vec![("defect", defect), ("norm_u", nu), ("norm_v", nv), ("lhs", lhs), ("collar", collar as f64)],
            nv > 0.0 && defect <= bound,
        ))
    }

    fn gradient_consistency(&mut self) -> Result<Outcome> {
        let sys = &self.prob.sys;
        let dom = self.dom();
        let n = dom.dim();
        let m = sys.num_fields();
        let mut hs = Vec::new();
        let mut errs = Vec::new();
        for k in 0..3 {
            let h = dom.h() / f64::from(1u32 << k);
            let d = if k == 0 { dom.clone() } else { GridDomain::build_with_system(dom.shape().clone(), h, sys)? };
            let u = ScalarField::from_fn(&d, quad_poly);
            let g = nodal_gradient(sys, &d, &u)?;
            let full = h.powi(n as i32);
            let mut grad = vec![0.0; n];
            let mut col = vec![0.0; n];
            let mut e = 0.0f64;
            for i in 0..d.num_nodes() {
                if (d.weights()[i] - full).abs() > 1e-9 * full || d.node_kind(i) != NodeKind::Interior {
                    continue;
                }
                let x = d.node(i);
                quad_poly_grad(x, &mut grad);
                for j in 0..m {
                    sys.coeff(j, x, &mut col);
                    let exact: f64 = col.iter().zip(&grad).map(|(a, b)| a * b).sum();
                    e = e.max((g[i * m + j] - exact).abs());
                }
            }
            hs.push(h);
            errs.push(e);
        }
        let exact = errs.iter().all(|&e| e <= 1e-9);
        let slope = ls_slope(&hs, &errs);
        let pass = exact || slope >= self.set.verify.min_consistency_slope;
        Ok(outcome(
            vec![("error_h", errs[0]), ("error_h2", errs[1]), ("error_h4", errs[2]), ("slope", if exact { f64::NAN } else { slope })],
            pass,
        ))
    }

    fn gradient_linearity(&mut self) -> Result<Outcome> {
        let op = &self.prob.op;
        let (a, b) = (1.7, -0.6);
        let u = self.random_field(21);
        let v = self.random_field(22);
        let w = u.combine(a, &v, b);
        let (xu, xv, xw) = (op.gradient(&u)?, op.gradient(&v)?, op.gradient(&w)?);
        let mut dev = 0.0f64;
        for i in 0..xw.values().len() {
            dev = dev.max((xw.values()[i] - (a * xu.values()[i] + b * xv.values()[i])).abs());
        }
        let scale = a.abs() * max_abs(xu.values()) + b.abs() * max_abs(xv.values());
        Ok(outcome(vec![("max_deviation", dev), ("scale", scale)], dev <= 1e-12 * scale.max(1e-300)))
    }

    // ---- domain ----

    fn projection_idempotent(&mut self) -> Result<Outcome> {
        let dom = self.dom();
        let u = self.random_field(31).add_constant(3.0);
        let p1 = mean_zero_project(dom, &u)?;
        let p2 = mean_zero_project(dom, &p1)?;
        let dev = p1.values().iter().zip(p2.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = max_abs(u.values());
        Ok(outcome(vec![("max_deviation", dev)], dev <= 1e-13 * scale))
    }

    fn volume_refinement(&mut self) -> Result<Outcome> {
        let dom = self.dom();
        let exact = shape_volume(dom.shape());
        let mut errs = Vec::new();
        let mut vols = Vec::new();
        for k in 0..3 {
            let v = if k == 0 {
                dom.volume()
            } else {
                GridDomain::build_with_system(dom.shape().clone(), dom.h() / f64::from(1u32 << k), &self.prob.sys)?
                    .volume()
            };
            vols.push(v);
            errs.push((v - exact).abs());
        }
        let slack = 1e-12 * exact;
        let pass = errs[1] <= errs[0] + slack && errs[2] <= errs[1] + slack;
        Ok(outcome(
            vec![("exact", exact), ("volume_h", vols[0]), ("volume_h2", vols[1]), ("volume_h4", vols[2])],
            pass,
        ))
    }

    fn characteristic_symmetry(&mut self) -> Result<Outcome> {
        let dom = self.dom();
        let n = dom.dim();
        if n < 2 {
            return Ok(with_note(vec![], true, "not applicable in one dimension"));
        }
        let pts = characteristic_points(&self.prob.sys, dom, 0.1);
        let radius = 2.0 * dom.h() * (n as f64).sqrt();
        let mut worst = 0.0f64;
        for &b in &pts {
            let mut r = dom.boundary_point(b).to_vec();
            r[0] = -r[0];
            r[1] = -r[1];
            let best = pts
                .iter()
                .map(|&c| dom.boundary_point(c).iter().zip(&r).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt())
                .fold(f64::INFINITY, f64::min);
            worst = worst.max(best);
        }
        Ok(outcome(vec![("count", pts.len() as f64), ("max_mismatch", worst), ("radius", radius)], worst <= radius))
    }

    // ---- metric ----

    fn sample_sources(&mut self, tag: u64, count: usize) -> Result<Vec<usize>> {
        let mut rng = self.rng(tag);
        let g = self.graph()?;
        let n = g.num_nodes();
        let mut out = Vec::with_capacity(count);
        // Include boundary nodes when present.
        for k in 0..count {
            let v = if k % 2 == 1 && g.num_boundary() > 0 {
                g.boundary_node(rng.gen_range(0..g.num_boundary()))
            } else {
                rng.gen_range(0..n)
            };
            out.push(v);
        }
        Ok(out)
    }

    fn metric_symmetry(&mut self) -> Result<Outcome> {
        let src = self.sample_sources(41, 8)?;
        let g = self.graph()?;
        let mut edge_asym = 0.0f64;
        for v in 0..g.num_nodes() {
            for (w, len) in g.neighbors(v) {
                let back = g.neighbors(w).find(|&(x, _)| x == v).map(|(_, l)| l);
                edge_asym = edge_asym.max(match back {
                    Some(l) => (l - len).abs(),
                    None => f64::INFINITY,
                });
            }
        }
        let dists: Vec<Vec<f64>> = src.iter().map(|&s| g.distances_from(s)).collect();
        let mut rel = 0.0f64;
        for i in 0..src.len() {
            for j in 0..src.len() {
                let (a, b) = (dists[i][src[j]], dists[j][src[i]]);
                if a > 0.0 {
                    rel = rel.max((a - b).abs() / a);
                }
            }
        }
        Ok(outcome(vec![("edge_asymmetry", edge_asym), ("distance_asymmetry", rel)], edge_asym == 0.0 && rel <= 1e-12))
    }

    fn triangle_inequality(&mut self) -> Result<Outcome> {
        let src = self.sample_sources(42, 6)?;
        let targets = self.sample_sources(43, 200)?;
        let g = self.graph()?;
        let dists: Vec<Vec<f64>> = src.iter().map(|&s| g.distances_from(s)).collect();
        let mut worst = f64::NEG_INFINITY;
        let mut count = 0usize;
        for a in 0..src.len() {
            for b in 0..src.len() {
                for &c in &targets {
                    let (ac, ab, bc) = (dists[a][c], dists[a][src[b]], dists[b][c]);
                    if !(ac.is_finite() && ab.is_finite() && bc.is_finite()) {
                        return Err(Error::Disconnected(src[a], c));
                    }
                    worst = worst.max(ac - (ab + bc) * (1.0 + 1e-12));
                    count += 1;
                }
            }
        }
        Ok(outcome(vec![("max_excess", worst), ("triples", count as f64)], worst <= 0.0))
    }

    fn euclidean_distance(&mut self) -> Result<Outcome> {
        let sys = VectorFieldSystem::euclidean(2);
        let pairs = [([0.0, 0.0], [1.0, 0.0]), ([0.0, 0.0], [0.6, 0.8]), ([0.1, 0.2], [0.9, 0.5])];
        let err_at = |dirs: usize| -> Result<f64> {
            let opts = MetricOptions { dir_count: dirs, halo: 0.0, ..MetricOptions::default() };
            let g = MetricGraph::build_box(&sys, &[-0.2, -0.2], &[1.2, 1.2], 0.02, &opts)?;
            let mut worst = 0.0f64;
            for (a, b) in &pairs {
                let (ia, ib) = (g.nearest_node(a), g.nearest_node(b));
                let (pa, pb) = (g.position(ia), g.position(ib));
                let exact = pa.iter().zip(&pb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
                let d = crate::cc_metric::cc_distance(&g, ia, ib)?;
                worst = worst.max((d - exact).abs() / exact);
            }
            Ok(worst)
        };
        let e8 = err_at(8)?;
        let dc = self.set.metric.dir_count;
        let e = err_at(dc)?;
        let pass = e <= self.set.verify.tol_euclidean_distance && (dc < 8 || e <= e8 + 1e-12);
        Ok(outcome(vec![("error_configured", e), ("error_8", e8), ("dir_count", dc as f64)], pass))
    }

    fn dilation(&mut self) -> Result<Outcome> {
        let weights = self.prob.sys.axis_weights().to_vec();
        let tol = self.set.verify.tol_dilation;
        let g = self.reference()?;
        let o = g.nearest_node(&vec![0.0; weights.len()]);
        let mut worst = 0.0f64;
        let mut ratios = Vec::new();
        for p in dilation_points(&weights) {
            let q: Vec<f64> = p.iter().zip(&weights).map(|(x, &w)| x * 2f64.powi(w as i32)).collect();
            let (a, b) = (g.nearest_node(&p), g.nearest_node(&q));
            let d1 = crate::cc_metric::cc_distance(g, o, a)?;
            let d2 = crate::cc_metric::cc_distance(g, o, b)?;
            let r = d2 / d1;
            ratios.push(r);
            worst = worst.max((r - 2.0).abs() / 2.0);
        }
        let mut vals: Values = vec![("max_relative_deviation", worst)];
        let names = ["ratio_0", "ratio_1", "ratio_2", "ratio_3"];
        for (k, r) in ratios.iter().enumerate() {
            vals.push((names[k], *r));
        }
        Ok(outcome(vals, worst <= tol))
    }

    fn ball_monotone(&mut self) -> Result<Outcome> {
        let src = self.sample_sources(51, 3)?;
        let g = self.graph()?;
        let mut violations = 0usize;
        for &s in &src {
            let prof = g.ball_profile(s);
            let reach = prof.box_reach().max(g.spacing()[0]);
            let mut last = 0.0;
            for k in 0..=64 {
                let v = prof.volume(reach * k as f64 / 64.0).volume;
                if v < last {
                    violations += 1;
                }
                last = v;
            }
        }
        Ok(outcome(vec![("violations", violations as f64)], violations == 0))
    }

    fn q_estimate(&mut self) -> Result<Outcome> {
        let sys = &self.prob.sys;
        let q_hint = sys.q_hint();
        let euclid = sys.name().starts_with("euclidean");
        let tol = if euclid { self.set.verify.tol_q_euclidean } else { self.set.verify.tol_q };
        let radii = reference_box(sys).map(|r| r.3).unwrap_or([0.3, 0.8]);
        let n = sys.ambient_dim();
        let g = self.reference()?;
        let q = estimate_q(g, g.nearest_node(&vec![0.0; n]), radii[0], radii[1])?;
        Ok(outcome(vec![("q", q), ("q_hint", q_hint)], (q - q_hint).abs() <= tol))
    }

    fn center_node(&mut self) -> Result<(usize, f64)> {
        let dom = self.dom();
        let (lo, hi) = dom.shape().bounding_box();
        let c: Vec<f64> = lo.iter().zip(&hi).map(|(a, b)| 0.5 * (a + b)).collect();
        let diam = dom.diam_euclidean();
        Ok((self.graph()?.nearest_node(&c), diam))
    }

    fn doubling(&mut self) -> Result<Outcome> {
        let (c, diam) = self.center_node()?;
        let q = self.prob.sys.q_hint();
        let slack = self.set.verify.doubling_slack;
        let g = self.graph()?;
        let samples: Vec<(usize, f64)> = [16.0, 8.0, 4.0].iter().map(|k| (c, diam / k)).collect();
        let ratio = doubling_ratio(g, &samples)?;
        let bound = slack * 2f64.powf(q);
        Ok(outcome(vec![("max_ratio", ratio), ("bound", bound)], ratio.is_finite() && ratio <= bound))
    }

    fn ahlfors_upper(&mut self) -> Result<Outcome> {
        let dom = self.dom();
        let r_o = dom.declared.r_o;
        let m = dom.declared.m;
        let diam = dom.diam_euclidean();
        let vc = self.set.verify.clone();
        let nb = dom.num_boundary();
        if nb == 0 {
            return Err(Error::InvalidParameter("domain has no boundary samples".into()));
        }
        let k = vc.ahlfors_samples.min(nb);
        let mut samples = Vec::new();
        for i in 0..k {
            let b = i * nb / k;
            for &r in &vc.ahlfors_radii {
                samples.push((b, r * diam));
            }
        }
        let g = self.graph()?;
        let rep = ahlfors_upper_check(g, dom, vc.ahlfors_s, &samples, r_o)?;
        let pass = rep.max_ratio.is_finite() && rep.max_ratio <= m;
        let vals = vec![
            ("max_ratio", rep.max_ratio),
            ("arg_boundary_node", rep.arg_max.0 as f64),
            ("arg_radius", rep.arg_max.1),
            ("declared_m", m),
            ("any_exits_box", if rep.any_exits_box { 1.0 } else { 0.0 }),
        ];
        Ok(outcome(vals, pass))
    }

    fn diameter_bound(&mut self) -> Result<Outcome> {
        let r_o = self.dom().declared.r_o;
        let g = self.graph()?;
        let nodes: Vec<usize> = if g.num_boundary() > 0 {
            (0..g.num_boundary()).map(|b| g.boundary_node(b)).collect()
        } else {
            (0..g.num_nodes()).collect()
        };
        let d = estimate_diameter(g, &nodes)?;
        Ok(outcome(vec![("diam_cc", d), ("r_o", r_o)], d < r_o / 2.0))
    }

    // ---- besov ----

    fn besov_homogeneity(&mut self) -> Result<Outcome> {
        let f = self.random_boundary(61);
        let params = self.prob.besov;
        let geom = self.geometry()?;
        let lam = -2.5;
        let a = besov_seminorm(geom, &f, &params)?;
        let b = besov_seminorm(geom, &f.scaled(lam), &params)?;
        let dev = (b - lam.abs() * a).abs();
        Ok(outcome(vec![("seminorm", a), ("deviation", dev)], dev <= 1e-12 * lam.abs() * a))
    }

    fn besov_triangle(&mut self) -> Result<Outcome> {
        let f = self.random_boundary(62);
        let g = self.random_boundary(63);
        let dom = self.dom();
        let sum = BoundaryValues::new(dom, f.values().iter().zip(g.values()).map(|(a, b)| a + b).collect())?;
        let params = self.prob.besov;
        let geom = self.geometry()?;
        let (nf, ng, ns) =
            (besov_seminorm(geom, &f, &params)?, besov_seminorm(geom, &g, &params)?, besov_seminorm(geom, &sum, &params)?);
        Ok(outcome(vec![("n_f", nf), ("n_g", ng), ("n_sum", ns)], ns <= (nf + ng) * (1.0 + 1e-10)))
    }

    fn besov_constants(&mut self) -> Result<Outcome> {
        let dom = self.dom();
        let c = BoundaryValues::constant(dom, 1.7);
        let f = self.random_boundary(64);
        let params = self.prob.besov;
        let geom = self.geometry()?;
        let (nc, nf) = (besov_seminorm(geom, &c, &params)?, besov_seminorm(geom, &f, &params)?);
        Ok(outcome(vec![("constant", nc), ("nonconstant", nf)], nc == 0.0 && nf > 0.0))
    }

    fn pairing_bilinear(&mut self) -> Result<Outcome> {
        let dom = self.dom();
        let (g1, g2) = (self.random_boundary(65), self.random_boundary(66));
        let (p1, p2) = (self.random_boundary(67), self.random_boundary(68));
        let (a, b) = (1.3, -0.7);
        let lin = |x: &BoundaryValues, y: &BoundaryValues| {
            BoundaryValues::new(dom, x.values().iter().zip(y.values()).map(|(u, v)| a * u + b * v).collect())
        };
        let nu = |g: &BoundaryValues| BoundaryDatum::new(g.clone());
        let left = pair_boundary(dom, &nu(&lin(&g1, &g2)?), &p1)?;
        let left_ref = a * pair_boundary(dom, &nu(&g1), &p1)? + b * pair_boundary(dom, &nu(&g2), &p1)?;
        let right = pair_boundary(dom, &nu(&g1), &lin(&p1, &p2)?)?;
        let right_ref = a * pair_boundary(dom, &nu(&g1), &p1)? + b * pair_boundary(dom, &nu(&g1), &p2)?;
        let scale = |x: f64, y: f64| x.abs().max(y.abs()).max(1e-300);
        let d1 = (left - left_ref).abs() / scale(left, left_ref);
        let d2 = (right - right_ref).abs() / scale(right, right_ref);
        let mu_tot: f64 = dom.boundary().mu.iter().sum();
        let d1 = if (left - left_ref).abs() <= 1e-14 * mu_tot { 0.0 } else { d1 };
        let d2 = if (right - right_ref).abs() <= 1e-14 * mu_tot { 0.0 } else { d2 };
        Ok(outcome(vec![("defect_first", d1), ("defect_second", d2)], d1 <= 1e-12 && d2 <= 1e-12))
    }

    fn trace_family(&self) -> Vec<ScalarField> {
        trace_test_family(self.dom(), &self.prob.sys)
    }

    fn trace_inequality(&mut self) -> Result<Outcome> {
        let fam = self.trace_family();
        let params = self.prob.besov;
        let op = &self.prob.op;
        let dom = self.dom();
        let geom = self.geometry()?;
        let mut ratios = Vec::new();
        for u in &fam {
            ratios.push(trace_inequality_ratio(dom, op, geom, u, &params)?);
        }
        let max = ratios.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
        let pass = ratios.iter().all(|r| r.is_finite() && *r > 0.0);
        Ok(outcome(vec![("max_ratio", max), ("min_ratio", min), ("family_size", ratios.len() as f64)], pass))
    }

    fn dual_norm(&mut self) -> Result<Outcome> {
        let dom = self.dom();
        let mut tests: Vec<BoundaryValues> =
            self.trace_family().iter().map(|u| crate::domain::trace(dom, u)).collect::<Result<_>>()?;
        for k in 0..5 {
            tests.push(self.random_boundary(70 + k));
        }
        let params = self.prob.besov;
        let nu = self.prob.nu.clone();
        let geom = self.geometry()?;
        let emp = empirical_dual_norm(dom, geom, &nu, &tests, &params)?;
        let sur = dual_norm_surrogate(dom, &nu, &params)?;
        Ok(outcome(vec![("empirical", emp), ("surrogate", sur)], emp <= sur * (1.0 + 1e-12)))
    }

    // ---- energy ----

    fn compatibility(&mut self) -> Result<Outcome> {
        let res = self.prob.compat();
        let tol = self.opts.tol_compat * self.prob.data_scale();
        Ok(outcome(vec![("residual", res), ("tolerance", tol)], res.abs() <= tol))
    }

    fn midpoint_convexity(&mut self) -> Result<Outcome> {
        let prob = self.prob;
        let mut worst = f64::NEG_INFINITY;
        let pairs = self.set.verify.convexity_pairs;
        let mut rng = self.rng(81);
        for k in 0..pairs as u64 {
            let u = self.random_field(1_000 + 2 * k);
            let mut v = self.random_field(1_001 + 2 * k);
            if k % 10 == 9 {
                // Nearly parallel pairs probe the flat directions.
                v = u.combine(rng.gen_range(0.5..2.0), &v, 1e-3);
            }
            let mid = u.combine(0.5, &v, 0.5);
            let gap = kinetic(prob, &mid)? - 0.5 * (kinetic(prob, &u)? + kinetic(prob, &v)?);
            worst = worst.max(gap);
        }
        let tol = self.set.verify.tol_convexity;
        Ok(outcome(vec![("max_violation", worst), ("pairs", pairs as f64)], worst <= tol))
    }

    fn strict_convexity(&mut self) -> Result<Outcome> {
        let prob = self.prob;
        let dom = self.dom();
        let mut min_margin = f64::INFINITY;
        for k in 0..20u64 {
            let u = mean_zero_project(dom, &self.random_field(2_000 + 2 * k))?;
            let v = mean_zero_project(dom, &self.random_field(2_001 + 2 * k))?;
            let mid = u.combine(0.5, &v, 0.5);
            let margin = 0.5 * (kinetic(prob, &u)? + kinetic(prob, &v)?) - kinetic(prob, &mid)?;
            min_margin = min_margin.min(margin);
        }
        Ok(outcome(vec![("min_margin", min_margin)], min_margin > 0.0))
    }

    fn constant_shift(&mut self) -> Result<Outcome> {
        let prob = self.prob;
        let u = self.random_field(91);
        let c = 0.75;
        let j0 = energy(prob, &u)?.j;
        let j1 = energy(prob, &u.add_constant(c))?.j;
        let res = prob.compat();
        let dj = j1 - j0;
        let pass = dj.abs() <= c * res.abs() + 1e-10 * (1.0 + j0.abs());
        Ok(outcome(vec![("delta_j", dj), ("c_times_residual", c * res)], pass))
    }

    fn weak_form_consistency(&mut self) -> Result<Outcome> {
        let prob = self.effective(self.opts.delta_min);
        let dom = self.dom();
        let u = self.random_field(101);
        let grad = energy_gradient(&prob, &u)?;
        let mut worst = 0.0f64;
        for k in 0..self.set.verify.n_test as u64 {
            let phi = self.random_field(102 + k);
            let w = weak_residual(&prob, &u, &phi)?;
            let pairing: f64 =
                grad.values().iter().zip(phi.values()).zip(dom.weights()).map(|((a, b), m)| a * b * m).sum();
            let scale = w.abs().max(pairing.abs()).max(1e-300);
            worst = worst.max((w - pairing).abs() / scale);
        }
        Ok(outcome(vec![("max_relative_defect", worst)], worst <= 1e-12))
    }

    fn p_convexity_gap(&mut self) -> Result<Outcome> {
        let m = self.prob.sys.num_fields();
        let mut rng = self.rng(111);
        let n = self.set.verify.gap_samples;
        let mut min_gap = f64::INFINITY;
        let mut z = vec![0.0; m];
        let mut w = vec![0.0; m];
        for k in 0..n {
            let p = rng.gen_range(1.1..6.0);
            let (sz, sw): (f64, f64) = (rng.gen_range(0.01..3.0), rng.gen_range(0.01..3.0));
            for j in 0..m {
                z[j] = if k % 100 == 0 { 0.0 } else { sz * rng.gen_range(-1.0..1.0) };
                w[j] = sw * rng.gen_range(-1.0..1.0);
            }
            min_gap = min_gap.min(p_convexity_gap(&z, &w, p));
        }
        Ok(outcome(vec![("min_gap", min_gap), ("samples", n as f64)], min_gap >= -self.set.verify.tol_convexity))
    }

    fn fd_gradient(&mut self) -> Result<Outcome> {
        let prob = self.effective(self.opts.delta_min);
        let dom = self.dom();
        // |Xu| stays away from 0, where |z|^p loses its third derivative.
        let tilt = ScalarField::from_fn(dom, |x| x[0]);
        let u = mean_zero_project(dom, &tilt.combine(1.0, &self.random_field(121), 0.05))?;
        let phi = self.random_field(122);
        let min_grad = prob
            .op
            .gradient(&u)?
            .values()
            .chunks(prob.sys.num_fields())
            .map(|g| g.iter().map(|v| v * v).sum::<f64>().sqrt())
            .fold(f64::INFINITY, f64::min);
        let (eps, errs, dj) = fd_errors(&prob, &u, &phi)?;
        let [lo, hi] = self.set.verify.fd_slope;
        if prob.p == 2.0 {
            let worst = errs.iter().copied().fold(0.0, f64::max);
            return Ok(with_note(
                vec![("max_error", worst), ("directional_derivative", dj)],
                worst <= 1e-9 * (1.0 + dj.abs()),
                "quadratic energy: central differences are exact",
            ));
        }
        let slope = ls_slope(&eps, &errs);
        Ok(outcome(
            vec![
                ("slope", slope),
                ("error_largest_eps", errs[0]),
                ("error_smallest_eps", errs[errs.len() - 1]),
                ("min_element_grad", min_grad),
            ],
            (lo..=hi).contains(&slope),
        ))
    }

    // ---- solver ----

    fn solve_check(&mut self) -> Result<Outcome> {
        let s = self.solution()?;
        Ok(outcome(
            vec![
                ("j", s.j),
                ("grad_norm", s.grad_norm),
                ("tolerance", s.tolerance),
                ("iterations", s.iterations as f64),
                ("delta_final", s.delta_final),
            ],
            s.converged,
        ))
    }

    fn monotone_energy(&mut self) -> Result<Outcome> {
        let s = self.descent()?;
        let trace_up = s.energy_trace.windows(2).filter(|w| w[1] > w[0]).count();
        Ok(outcome(
            vec![("max_increase", s.max_energy_increase), ("trace_increases", trace_up as f64)],
            s.max_energy_increase <= 0.0 && trace_up == 0,
        ))
    }

    fn mean_zero_iterates(&mut self) -> Result<Outcome> {
        let s = self.descent()?;
        let scale = max_abs(s.u.values()).max(1.0);
        Ok(outcome(vec![("max_mean_drift", s.max_mean_drift)], s.max_mean_drift <= 1e-12 * scale))
    }

    fn weak_solution(&mut self) -> Result<Outcome> {
        let sol = self.solution()?.clone();
        let prob = self.effective(sol.delta_final);
        let dom = self.dom();
        let tol = self.set.verify.tol_weak;
        let mut worst = 0.0f64;
        for k in 0..self.set.verify.n_test as u64 {
            let phi = self.random_field(131 + k);
            let r = weak_residual(&prob, &sol.u, &phi)?;
            worst = worst.max(r.abs() / l2(dom, phi.values()));
        }
        Ok(outcome(vec![("max_residual_over_norm", worst)], worst <= tol))
    }

    fn shift_degeneracy(&mut self) -> Result<Outcome> {
        let dom = self.dom();
        let sol = self.solution()?;
        let back = mean_zero_project(dom, &sol.u.add_constant(2.5))?;
        let dev = back.values().iter().zip(sol.u.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let scale = max_abs(sol.u.values()).max(1.0);
        Ok(outcome(vec![("max_deviation", dev)], dev <= 1e-12 * scale))
    }

    fn homogeneity(&mut self) -> Result<Outcome> {
        let prob = self.prob;
        let opts = self.opts.clone();
        let vc = self.set.verify.clone();
        let base = self.solution()?.clone();
        if prob.is_zero_data() {
            return Ok(with_note(vec![], true, "zero data: u = 0 for every λ"));
        }
        let cg = opts.method == Method::CgP2 || (opts.method == Method::Auto && prob.p == 2.0);
        let tol = if cg { vc.tol_homogeneity_cg } else { vc.tol_homogeneity };
        let x0 = crate::besov::grad_lq_norm(&prob.op, &base.u, prob.p)?;
        let c0 = apriori_estimate_ratio(prob, &base)?.ratio;
        let mut worst_scale = 0.0f64;
        let mut worst_c = 0.0f64;
        for &lam in &vc.lambdas {
            let scaled = prob.with_scaled_data(lam);
            let s = solve(&scaled, &opts)?;
            let x = crate::besov::grad_lq_norm(&prob.op, &s.u, prob.p)?;
            let expect = lam.powf(1.0 / (prob.p - 1.0));
            worst_scale = worst_scale.max((x / (expect * x0) - 1.0).abs());
            let c = apriori_estimate_ratio(&scaled, &s)?.ratio;
            worst_c = worst_c.max((c / c0 - 1.0).abs());
        }
        Ok(outcome(
            vec![("max_scaling_error", worst_scale), ("max_c_emp_variation", worst_c), ("c_emp", c0)],
            worst_scale <= tol && worst_c <= vc.tol_homogeneity,
        ))
    }

    fn uniqueness(&mut self) -> Result<Outcome> {
        let rep = uniqueness_check(self.prob, self.opts, self.set.verify.uniqueness_trials)?;
        Ok(outcome(
            vec![("max_discrepancy", rep.max_discrepancy), ("trials", rep.trials as f64)],
            rep.max_discrepancy < self.set.verify.tol_uniqueness,
        ))
    }

    fn apriori_ratio(&mut self) -> Result<Outcome> {
        let prob = self.prob;
        let sol = self.solution()?;
        let r = apriori_estimate_ratio(prob, sol)?;
        Ok(outcome(
            vec![("c_emp", r.ratio), ("grad_norm_lp", r.grad_norm_lp), ("data_norm", r.data_norm)],
            r.ratio.is_finite(),
        ))
    }

    fn poincare_ratio(&mut self) -> Result<Outcome> {
        let prob = self.prob;
        let dom = self.dom();
        let k = self.set.verify.poincare_k;
        let diam = dom.diam_cc().unwrap_or_else(|| dom.diam_euclidean());
        let coord = ScalarField::from_fn(dom, |x| x[0]);
        let r_coord = poincare_ratio(&prob.op, dom, &coord, prob.p, k, diam)?;
        let mut vals = vec![("coordinate", r_coord), ("diameter", diam)];
        let mut pass = r_coord.is_finite() && r_coord > 0.0;
        let sol = self.solution()?;
        match poincare_ratio(&prob.op, dom, &sol.u, prob.p, k, diam) {
            Ok(r) => {
                vals.push(("solution", r));
                pass &= r.is_finite() && r > 0.0;
            }
            Err(Error::ZeroGradient) => {}
            Err(e) => return Err(e),
        }
        Ok(outcome(vals, pass))
    }
}

/// `{1, coordinates, pairwise products, ρ² (or |x|²)}` on the nodes of `dom`.
pub fn trace_test_family(dom: &GridDomain, sys: &VectorFieldSystem) -> Vec<ScalarField> {
    let n = dom.dim();
    let mut fam = vec![ScalarField::constant(dom, 1.0)];
    for i in 0..n {
        fam.push(ScalarField::from_fn(dom, |x| x[i]));
    }
    for i in 0..n {
        for j in i + 1..n {
            fam.push(ScalarField::from_fn(dom, |x| x[i] * x[j]));
        }
    }
    if sys.name() == "heisenberg1" {
        fam.push(ScalarField::from_fn(dom, |x| heisenberg_gauge(x).powi(2)));
    } else {
        fam.push(ScalarField::from_fn(dom, |x| x.iter().map(|v| v * v).sum()));
    }
    fam
}

/// Central-difference errors `|(J(u+εφ) − J(u−εφ))/2ε − <∇J, φ>_h|` for
/// `ε ∈ {0.08, 0.04, 0.02, 0.01}`; also returns `<∇J, φ>_h`.
pub fn fd_errors(prob: &NeumannProblem, u: &ScalarField, phi: &ScalarField) -> Result<(Vec<f64>, Vec<f64>, f64)> {
    let dj = weak_residual(prob, u, phi)?;
    let eps = vec![0.08, 0.04, 0.02, 0.01];
    let mut errs = Vec::with_capacity(eps.len());
    for &e in &eps {
        let jp = energy(prob, &u.combine(1.0, phi, e))?.j;
        let jm = energy(prob, &u.combine(1.0, phi, -e))?.j;
        errs.push(((jp - jm) / (2.0 * e) - dj).abs());
    }
    Ok((eps, errs, dj))
}

/// Runs `suite` in order. Unknown names fail before anything runs; failing
/// checks are recorded and the suite continues.
pub fn run_suite(
    prob: &NeumannProblem,
    opts: &SolveOptions,
    suite: &[String],
    settings: &SuiteSettings,
) -> Result<VerifyReport> {
    for name in suite {
        check_name(name)?;
    }
    let dom = &prob.dom;
    let environment = Environment {
        system: prob.sys.name().to_string(),
        shape: dom.shape().clone(),
        h: dom.h(),
        num_nodes: dom.num_nodes(),
        num_boundary: dom.num_boundary(),
        p: prob.p,
        q: prob.besov.q,
        s: prob.besov.s,
        beta: prob.besov.beta,
        reg_delta: prob.reg_delta,
        seed: settings.seed,
        dir_count: settings.metric.dir_count,
        metric_step_factor: settings.metric.step_factor,
        tol_grad: opts.tol_grad,
        tol_compat: opts.tol_compat,
        r_o: dom.declared.r_o,
        ahlfors_m: dom.declared.m,
    };
    let mut runner = Runner {
        prob,
        opts,
        set: settings,
        graph: None,
        geom: None,
        solution: None,
        descent: None,
        reference: None,
    };
    let mut checks = Vec::with_capacity(suite.len());
    let mut timings = Vec::with_capacity(suite.len());
    for name in suite {
        let t = Instant::now();
        let out = runner.run(name).unwrap_or_else(|e| with_note(vec![], false, e.to_string()));
        timings.push((name.clone(), t.elapsed().as_secs_f64()));
        checks.push(CheckRecord {
            name: name.clone(),
            anchor: anchor(name).to_string(),
            criterion: criterion(name, &settings.verify),
            values: out.values.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            pass: out.pass,
            note: out.note,
        });
    }
    let pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { environment, checks, pass, timings })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::Shape;
    use crate::energy::shift_boundary_density;

    fn disk_problem() -> NeumannProblem {
        let sys = VectorFieldSystem::euclidean(2);
        let dom = GridDomain::build(Shape::EuclideanBall { center: vec![0.0, 0.0], radius: 1.0 }, 0.125).unwrap();
        let f = ScalarField::from_fn(&dom, |x| x[0] * x[1] + 0.3 * x[0]);
        let g0 = BoundaryValues::from_fn(&dom, |x| x[1]);
        let g = shift_boundary_density(&dom, &f, &g0).unwrap();
        NeumannProblem::new(sys, dom, 2.0, 2.0, 1.0, None, f, g, 0.0).unwrap()
    }

    #[test]
    fn empty_suite_passes() {
        let prob = disk_problem();
        let r = run_suite(&prob, &SolveOptions::default(), &[], &SuiteSettings::default()).unwrap();
        assert!(r.pass && r.checks.is_empty());
    }

    #[test]
    fn unknown_check_is_rejected() {
        let prob = disk_problem();
        let e = run_suite(&prob, &SolveOptions::default(), &["nope".into()], &SuiteSettings::default());
        assert!(matches!(e, Err(Error::UnknownCheck(_))));
        assert!(matches!(parse_suite("solve, nope"), Err(Error::UnknownCheck(_))));
        assert_eq!(parse_suite("default").unwrap().len(), DEFAULT_SUITE.len());
    }

    #[test]
    fn incompatible_data_fails_compatibility_with_minus_volume() {
        let sys = VectorFieldSystem::euclidean(2);
        let dom = GridDomain::build(Shape::EuclideanBall { center: vec![0.0, 0.0], radius: 1.0 }, 0.125).unwrap();
        let vol = dom.volume();
        let prob = NeumannProblem::new(
            sys,
            dom.clone(),
            2.0,
            2.0,
            1.0,
            None,
            ScalarField::constant(&dom, 1.0),
            BoundaryValues::constant(&dom, 0.0),
            0.0,
        )
        .unwrap();
        let r = run_suite(&prob, &SolveOptions::default(), &["compatibility".into(), "solve".into()], &SuiteSettings::default())
            .unwrap();
        assert!(!r.pass);
        let c = r.check("compatibility").unwrap();
        assert!(!c.pass);
        assert!((c.values["residual"] + vol).abs() < 1e-12);
        // The solver check records the error instead of aborting.
        assert!(!r.check("solve").unwrap().pass);
    }

    #[test]
    fn quadratic_gradient_helper() {
        for n in 1..4 {
            let x: Vec<f64> = (0..n).map(|i| 0.3 - 0.2 * i as f64).collect();
            let mut g = vec![0.0; n];
            quad_poly_grad(&x, &mut g);
            for i in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[i] += 1e-6;
                xm[i] -= 1e-6;
                let fd = (quad_poly(&xp) - quad_poly(&xm)) / 2e-6;
                assert!((fd - g[i]).abs() < 1e-8, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn disk_default_suite_passes() {
        let prob = disk_problem();
        let settings = SuiteSettings {
            verify: VerifyConfig { convexity_pairs: 50, gap_samples: 2000, ..VerifyConfig::default() },
            ..SuiteSettings::default()
        };
        let suite: Vec<String> = DEFAULT_SUITE.iter().map(|s| s.to_string()).collect();
        let r = run_suite(&prob, &SolveOptions::default(), &suite, &settings).unwrap();
        assert!(r.pass, "{}", r.table());
    }
}
