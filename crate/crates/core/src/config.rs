//! Run configuration (TOML). Unknown keys are rejected everywhere.
//!
//! ```toml
//! system = "heisenberg1"
//! seed = 7
//!
//! [domain]
//! shape = "gauge_ball"
//! radius = 1.0
//! h = 0.125
//!
//! [problem]
//! p = 3.0
//! q = 2.0
//! s = 1.0
//!
//! [data]
//! f = { expr = "x*y" }
//! g = { random = 3 }
//! balance = "shift"
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cc_metric::MetricOptions;
use crate::domain::{BoundaryValues, DeclaredParams, GridDomain, ScalarField, Shape};
use crate::energy::{balance_boundary_density, shift_boundary_density, NeumannProblem};
use crate::expr::Expression;
use crate::fields::{builtin_system, VectorFieldSystem};
use crate::solver::SolveOptions;
use crate::testfields::SmoothField;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub shape: String,
    pub h: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lo: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hi: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<f64>,
}

impl DomainConfig {
    pub fn to_shape(&self) -> Result<Shape> {
        let need = |v: &Option<Vec<f64>>, key: &str| {
            v.clone().ok_or_else(|| Error::Config(format!("domain shape `{}` needs `{key}`", self.shape)))
        };
        let radius = || self.radius.ok_or_else(|| Error::Config(format!("domain shape `{}` needs `radius`", self.shape)));
        let extra = |present: bool, key: &str| {
            if present {
                Err(Error::Config(format!("key `{key}` does not apply to shape `{}`", self.shape)))
            } else {
                Ok(())
            }
        };
        let shape = match self.shape.as_str() {
            "box" => {
                extra(self.center.is_some(), "center")?;
                extra(self.radius.is_some(), "radius")?;
                Shape::Box { lo: need(&self.lo, "lo")?, hi: need(&self.hi, "hi")? }
            }
            "euclidean_ball" => {
                extra(self.lo.is_some(), "lo")?;
                extra(self.hi.is_some(), "hi")?;
                Shape::EuclideanBall { center: need(&self.center, "center")?, radius: radius()? }
            }
            "gauge_ball" => {
                extra(self.lo.is_some(), "lo")?;
                extra(self.hi.is_some(), "hi")?;
                extra(self.center.is_some(), "center")?;
                Shape::GaugeBall { radius: radius()? }
            }
            other => return Err(Error::UnknownShape(other.to_string())),
        };
        shape.validate()?;
        Ok(shape)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProblemConfig {
    pub p: f64,
    /// Defaults to `min(p, 2)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    pub s: f64,
    /// Defaults to `1 − s/q`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub reg_delta: f64,
}

impl Default for ProblemConfig {
    fn default() -> Self {
        ProblemConfig { p: 2.0, q: None, s: 1.0, beta: None, reg_delta: 0.0 }
    }
}

impl ProblemConfig {
    pub fn q(&self) -> f64 {
        self.q.unwrap_or(self.p.min(2.0))
    }
}

/// Exactly one of `expr`, `csv` (rows `index,value`) or `random` (a seed).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expr: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub csv: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<u64>,
}

impl Default for FieldSpec {
    fn default() -> Self {
        FieldSpec { expr: Some("0".into()), csv: None, random: None }
    }
}

impl FieldSpec {
    pub fn expr(s: &str) -> Self {
        FieldSpec { expr: Some(s.into()), csv: None, random: None }
    }

    fn check(&self, what: &str) -> Result<()> {
        let count = self.expr.is_some() as u8 + self.csv.is_some() as u8 + self.random.is_some() as u8;
        if count != 1 {
            return Err(Error::Config(format!("data `{what}` needs exactly one of expr, csv, random")));
        }
        Ok(())
    }

    /// Values at the given points; `base` resolves relative CSV paths.
    pub fn evaluate<'a>(
        &self,
        what: &str,
        n: usize,
        points: impl Iterator<Item = &'a [f64]>,
        count: usize,
        base: &Path,
    ) -> Result<Vec<f64>> {
        self.check(what)?;
        if let Some(src) = &self.expr {
            return Expression::parse(src, n)?.eval_many(points);
        }
        if let Some(seed) = self.random {
            let field = SmoothField::random(n, 6, 3.0, seed);
            return Ok(points.map(|x| field.eval(x)).collect());
        }
        let path = base.join(self.csv.as_ref().expect("checked"));
        read_indexed_csv(&path, count)
    }
}

/// Reads `index,value` rows (an optional header line is skipped) covering
/// `0..count` exactly once.
pub fn read_indexed_csv(path: &Path, count: usize) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let mut out = vec![f64::NAN; count];
    for (ln, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split(',').map(str::trim);
        let (a, b) = (parts.next().unwrap_or(""), parts.next());
        let Ok(idx) = a.parse::<usize>() else {
            if ln == 0 {
                continue;
            }
            return Err(Error::Config(format!("{}:{}: bad index `{a}`", path.display(), ln + 1)));
        };
        let v: f64 = b
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Config(format!("{}:{}: bad value", path.display(), ln + 1)))?;
        if idx >= count {
            return Err(Error::Config(format!("{}:{}: index {idx} out of range 0..{count}", path.display(), ln + 1)));
        }
        if !out[idx].is_nan() {
            return Err(Error::Config(format!("{}:{}: index {idx} repeated", path.display(), ln + 1)));
        }
        if !v.is_finite() {
            return Err(Error::Config(format!("{}:{}: non-finite value", path.display(), ln + 1)));
        }
        out[idx] = v;
    }
    if let Some(missing) = out.iter().position(|v| v.is_nan()) {
        return Err(Error::Config(format!("{}: no value for index {missing}", path.display())));
    }
    Ok(out)
}

/// How `g` is adjusted to satisfy the compatibility condition.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Balance {
    #[default]
    None,
    /// Multiply `g` by a constant.
    Scale,
    /// Add a constant to `g`.
    Shift,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub f: FieldSpec,
    pub g: FieldSpec,
    pub balance: Balance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricConfig {
    pub dir_count: usize,
    /// Lattice spacing; defaults to the domain spacing.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub h: Option<f64>,
    pub step_factor: f64,
    pub lengths: usize,
    pub halo: f64,
    /// Largest boundary set for the Besov double sum.
    pub besov_cap: usize,
}

impl Default for MetricConfig {
    fn default() -> Self {
        let m = MetricOptions::default();
        MetricConfig {
            dir_count: m.dir_count,
            h: m.h,
            step_factor: m.step_factor,
            lengths: m.lengths,
            halo: m.halo,
            besov_cap: crate::besov::DEFAULT_NODE_CAP,
        }
    }
}

impl MetricConfig {
    pub fn options(&self) -> MetricOptions {
        MetricOptions {
            dir_count: self.dir_count,
            h: self.h,
            step_factor: self.step_factor,
            lengths: self.lengths,
            halo: self.halo,
        }
    }
}

/// Point queries for the `metric` command.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricQueries {
    /// Pairs of points whose distance is reported.
    pub distance: Vec<[Vec<f64>; 2]>,
    /// `(center, radius)` ball volume queries.
    pub ball: Vec<(Vec<f64>, f64)>,
    /// Centers for homogeneous-dimension estimates over `q_range`.
    pub q_at: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_range: Option<[f64; 2]>,
    /// `(boundary sample index, radius)` upper Ahlfors queries.
    pub ahlfors: Vec<(usize, f64)>,
    /// Ahlfors exponent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ahlfors_s: Option<f64>,
}

pub use crate::verify::VerifyConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub system: String,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    pub domain: DomainConfig,
    #[serde(default)]
    pub problem: ProblemConfig,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub solver: SolveOptions,
    #[serde(default)]
    pub metric: MetricConfig,
    #[serde(default)]
    pub declared: DeclaredParams,
    #[serde(default)]
    pub verify: VerifyConfig,
    #[serde(default)]
    pub queries: MetricQueries,
    /// Boundary field for the `besov` command.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub besov_field: Option<FieldSpec>,
    /// Known exact solution; `solve` then also runs a refinement study.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oracle: Option<OracleConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    /// Exact solution, compared after mean-zero normalization.
    pub exact: String,
    /// Number of grids: h, h/2, …
    #[serde(default = "default_levels")]
    pub levels: usize,
}

fn default_levels() -> usize {
    3
}

/// One row of a refinement study.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleRow {
    pub h: f64,
    pub nodes: usize,
    pub l2_error: f64,
    pub max_error: f64,
    pub iterations: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleStudy {
    pub rows: Vec<OracleRow>,
    /// Least-squares slope of log L² error against log h.
    pub l2_slope: f64,
}

/// Everything a command needs, built from a validated configuration.
pub struct Setup {
    pub sys: VectorFieldSystem,
    pub dom: GridDomain,
    pub prob: NeumannProblem,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Canonical TOML rendering, used for hashing and echoing.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    /// Checks every range constraint that does not need a grid.
    pub fn validate(&self) -> Result<()> {
        let sys = builtin_system(&self.system)?;
        let shape = self.domain.to_shape()?;
        if shape.dim() != sys.ambient_dim() {
            return Err(Error::Config(format!(
                "system `{}` acts on R^{} but the domain lives in R^{}",
                self.system,
                sys.ambient_dim(),
                shape.dim()
            )));
        }
        if !(self.domain.h > 0.0) || !self.domain.h.is_finite() {
            return Err(Error::Config(format!("domain.h = {} must be positive", self.domain.h)));
        }
        let pc = &self.problem;
        crate::energy::validate_exponents(pc.p, pc.q())?;
        let n = shape.dim() as f64;
        let q = pc.q();
        let smax = q.min((n + q) / 2.0);
        if !(pc.s > 0.0 && pc.s < smax) {
            return Err(Error::InvalidParameter(format!("s = {} must lie in (0, min(q, (n+q)/2)) = (0, {smax})", pc.s)));
        }
        crate::besov::BesovParams::new(q, pc.beta, pc.s)?;
        if !(pc.reg_delta >= 0.0) {
            return Err(Error::InvalidParameter(format!("reg_delta = {} must be ≥ 0", pc.reg_delta)));
        }
        self.data.f.check("f")?;
        self.data.g.check("g")?;
        if let Some(b) = &self.besov_field {
            b.check("besov_field")?;
        }
        let m = &self.metric;
        if m.dir_count == 0 || m.lengths == 0 || !(m.step_factor > 0.0) || !(m.halo >= 0.0) {
            return Err(Error::Config("metric options must be positive".into()));
        }
        if m.h.is_some_and(|h| !(h > 0.0)) {
            return Err(Error::Config("metric.h must be positive".into()));
        }
        let d = &self.declared;
        if !(d.r_o > 0.0 && d.m > 0.0 && d.eps > 0.0 && d.delta > 0.0 && d.rad > 0.0) {
            return Err(Error::Config("declared parameters must be positive".into()));
        }
        if !(self.solver.tol_grad > 0.0) || self.solver.max_iter == 0 {
            return Err(Error::Config("solver.tol_grad and solver.max_iter must be positive".into()));
        }
        self.verify.validate()?;
        if let Some(o) = &self.oracle {
            if o.levels < 2 {
                return Err(Error::Config("oracle.levels must be at least 2".into()));
            }
            Expression::parse(&o.exact, shape.dim())?;
        }
        Ok(())
    }

    /// Makes relative CSV paths absolute against `base`, so an echoed
    /// configuration runs from anywhere.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |spec: &mut FieldSpec| {
            if let Some(p) = &spec.csv {
                if p.is_relative() {
                    spec.csv = Some(base.join(p));
                }
            }
        };
        fix(&mut self.data.f);
        fix(&mut self.data.g);
        if let Some(b) = self.besov_field.as_mut() {
            fix(b);
        }
    }

    /// Solves on `levels` successively halved grids and compares with the
    /// exact solution.
    pub fn oracle_study(&self, base: &Path) -> Result<Option<OracleStudy>> {
        let Some(o) = &self.oracle else { return Ok(None) };
        let mut rows = Vec::with_capacity(o.levels);
        for k in 0..o.levels {
            let mut c = self.clone();
            c.domain.h = self.domain.h / f64::from(1u32 << k);
            let s = c.setup(base)?;
            let sol = crate::solver::solve(&s.prob, &c.solve_options())?;
            let expr = Expression::parse(&o.exact, s.dom.dim())?;
            let exact = ScalarField::new(&s.dom, expr.eval_many((0..s.dom.num_nodes()).map(|i| s.dom.node(i)))?)?;
            let exact = crate::domain::mean_zero_project(&s.dom, &exact)?;
            let diff: Vec<f64> = sol.u.values().iter().zip(exact.values()).map(|(a, b)| a - b).collect();
            let l2 = diff.iter().zip(s.dom.weights()).map(|(d, w)| w * d * d).sum::<f64>().sqrt();
            let max = diff.iter().fold(0.0f64, |m, d| m.max(d.abs()));
            rows.push(OracleRow { h: c.domain.h, nodes: s.dom.num_nodes(), l2_error: l2, max_error: max, iterations: sol.iterations });
        }
        let pts: Vec<(f64, f64)> = rows.iter().map(|r| (r.h.ln(), r.l2_error.ln())).collect();
        let l2_slope = crate::cc_metric::ls_slope(&pts);
        Ok(Some(OracleStudy { rows, l2_slope }))
    }

    /// Short hex digest of the canonical configuration.
    pub fn hash(&self) -> String {
        crate::report::digest(self.to_toml().as_bytes())
    }

    /// Builds the system, domain, data and problem. `base` resolves CSV paths.
    pub fn setup(&self, base: &Path) -> Result<Setup> {
        self.validate()?;
        let sys = builtin_system(&self.system)?;
        let mut dom = GridDomain::build_with_system(self.domain.to_shape()?, self.domain.h, &sys)?;
        dom.declared = self.declared.clone();
        let n = dom.dim();
        let fv = self.data.f.evaluate("f", n, (0..dom.num_nodes()).map(|i| dom.node(i)), dom.num_nodes(), base)?;
        let gv = self.data.g.evaluate(
            "g",
            n,
            (0..dom.num_boundary()).map(|b| dom.boundary_point(b)),
            dom.num_boundary(),
            base,
        )?;
        let f = ScalarField::new(&dom, fv)?;
        let mut g = BoundaryValues::new(&dom, gv)?;
        g = match self.data.balance {
            Balance::None => g,
            Balance::Scale => balance_boundary_density(&dom, &f, &g)?,
            Balance::Shift => shift_boundary_density(&dom, &f, &g)?,
        };
        let pc = &self.problem;
        let prob = NeumannProblem::new(sys.clone(), dom.clone(), pc.p, pc.q(), pc.s, pc.beta, f, g, pc.reg_delta)?;
        Ok(Setup { sys, dom, prob })
    }

    pub fn solve_options(&self) -> SolveOptions {
        SolveOptions { seed: self.seed, ..self.solver.clone() }
    }

    pub fn suite_settings(&self) -> crate::verify::SuiteSettings {
        crate::verify::SuiteSettings {
            verify: self.verify.clone(),
            metric: self.metric.options(),
            besov_cap: self.metric.besov_cap,
            seed: self.seed,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MIN: &str = r#"
system = "euclidean(1)"
[domain]
shape = "box"
lo = [0.0]
hi = [1.0]
h = 0.0625
"#;

    #[test]
    fn minimal_config_round_trips() {
        let cfg = RunConfig::from_toml(MIN).unwrap();
        assert_eq!(cfg.problem.p, 2.0);
        let again = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
        assert_eq!(cfg.hash(), again.hash());
        let s = cfg.setup(Path::new(".")).unwrap();
        assert!(s.prob.is_zero_data());
    }

    #[test]
    fn unknown_keys_rejected() {
        let bad = format!("{MIN}\n[problem]\npp = 2.0\n");
        assert!(matches!(RunConfig::from_toml(&bad), Err(Error::Config(_))));
        let bad = format!("colour = 1\n{MIN}");
        assert!(matches!(RunConfig::from_toml(&bad), Err(Error::Config(_))));
    }

    #[test]
    fn exponent_violation_is_reported() {
        let bad = format!("{MIN}\n[problem]\np = 2.0\nq = 3.0\n");
        let e = RunConfig::from_toml(&bad).unwrap_err();
        assert!(matches!(e, Error::InvalidExponents(_)));
        assert!(e.to_string().contains("1 < q ≤ p"));
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn field_spec_needs_exactly_one_source() {
        let bad = format!("{MIN}\n[data]\nf = {{ expr = \"x\", random = 1 }}\n");
        assert!(RunConfig::from_toml(&bad).is_err());
    }

    #[test]
    fn indexed_csv_reader() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.csv");
        std::fs::write(&p, "index,value\n1,2.5\n0,-1\n").unwrap();
        assert_eq!(read_indexed_csv(&p, 2).unwrap(), vec![-1.0, 2.5]);
        assert!(read_indexed_csv(&p, 3).is_err());
        std::fs::write(&p, "0,1\n0,2\n").unwrap();
        assert!(read_indexed_csv(&p, 1).is_err());
    }
}
