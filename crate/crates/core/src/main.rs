use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use subneumann::besov::{besov_norm, besov_seminorm, BesovGeometry};
use subneumann::cc_metric::{ahlfors_upper_check, ball_volume, cc_distance, estimate_diameter, estimate_q, MetricGraph};
use subneumann::config::{OracleStudy, RunConfig};
use subneumann::domain::BoundaryValues;
use subneumann::report::{fmt_f64, write_solution_csv, OutputSet};
use subneumann::solver::{apriori_estimate_ratio, solve};
use subneumann::verify::{parse_suite, run_suite};
use subneumann::{Error, Result};

/// Exit status when the verify suite ran but a check failed.
const CHECK_FAILURE: u8 = 5;

#[derive(Parser)]
#[command(name = "subneumann", version, about = "Neumann problems for p-sub-Laplacians of Hörmander vector fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Minimize the energy; write the solution CSV and a JSON report.
    Solve(Common),
    /// Run the check suite and write a JSON report.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Comma-separated check names; `default` expands to the default suite, an empty list runs nothing.
        #[arg(long)]
        suite: Option<String>,
    },
    /// Answer the distance, ball, Q and Ahlfors queries of the configuration.
    Metric(Common),
    /// Boundary Besov norm of the configured `besov_field`.
    Besov(Common),
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output` in the configuration; default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

struct Run {
    cfg: RunConfig,
    base: PathBuf,
    out: OutputSet,
}

impl Run {
    fn open(c: &Common, command: &str, suite: Option<&str>) -> Result<Run> {
        let mut cfg = RunConfig::load(&c.config)?;
        let base = c.config.parent().map(Path::to_path_buf).unwrap_or_default();
        let base = if base.as_os_str().is_empty() { PathBuf::from(".") } else { base };
        cfg.resolve_paths(&std::fs::canonicalize(&base)?);
        if let Some(seed) = c.seed {
            cfg.seed = seed;
        }
        if let Some(list) = suite {
            cfg.verify.suite = Some(parse_suite(list)?);
        }
        cfg.validate()?;
        let dir = c.out.clone().or_else(|| cfg.output.clone()).unwrap_or_else(|| PathBuf::from("out"));
        let out = OutputSet::create(&dir, command, &cfg.hash())?;
        out.echo_config(&cfg.to_toml())?;
        Ok(Run { cfg, base, out })
    }

    fn extra(&self, kind: &str) -> PathBuf {
        self.out.dir.join(format!("{}-{}-{kind}.csv", self.out.command, self.out.hash))
    }
}

#[derive(Serialize)]
struct SolveReport<'a> {
    system: &'a str,
    h: f64,
    nodes: usize,
    p: f64,
    q: f64,
    s: f64,
    beta: f64,
    seed: u64,
    compatibility_residual: f64,
    j: f64,
    grad_norm: f64,
    tolerance: f64,
    iterations: usize,
    delta_final: f64,
    converged: bool,
    max_energy_increase: f64,
    c_emp: f64,
    grad_norm_lp: f64,
    data_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    oracle: Option<OracleStudy>,
}

fn cmd_solve(c: &Common) -> Result<u8> {
    let run = Run::open(c, "solve", None)?;
    let setup = run.cfg.setup(&run.base)?;
    let prob = &setup.prob;
    let sol = solve(prob, &run.cfg.solve_options())?;
    let apr = apriori_estimate_ratio(prob, &sol)?;
    let oracle = run.cfg.oracle_study(&run.base)?;

    let file = std::fs::File::create(run.out.path("csv"))?;
    write_solution_csv(&setup.dom, &sol.u, std::io::BufWriter::new(file))?;
    let nodes = std::fs::File::create(run.extra("nodes"))?;
    setup.dom.write_csv(std::io::BufWriter::new(nodes))?;
    if let Some(study) = &oracle {
        let mut text = String::from("h,nodes,l2_error,max_error,iterations\n");
        for r in &study.rows {
            text += &format!("{},{},{},{},{}\n", fmt_f64(r.h), r.nodes, fmt_f64(r.l2_error), fmt_f64(r.max_error), r.iterations);
        }
        std::fs::write(run.extra("convergence"), text)?;
    }
    let report = SolveReport {
        system: &run.cfg.system,
        h: setup.dom.h(),
        nodes: setup.dom.num_nodes(),
        p: prob.p,
        q: prob.besov.q,
        s: prob.besov.s,
        beta: prob.besov.beta,
        seed: run.cfg.seed,
        compatibility_residual: prob.compat(),
        j: sol.j,
        grad_norm: sol.grad_norm,
        tolerance: sol.tolerance,
        iterations: sol.iterations,
        delta_final: sol.delta_final,
        converged: sol.converged,
        max_energy_increase: sol.max_energy_increase,
        c_emp: apr.ratio,
        grad_norm_lp: apr.grad_norm_lp,
        data_norm: apr.data_norm,
        oracle,
    };
    run.out.write_json("json", &report)?;

    println!("J = {}", fmt_f64(sol.j));
    println!("grad_norm = {}", fmt_f64(sol.grad_norm));
    println!("C_emp = {}", fmt_f64(apr.ratio));
    if let Some(study) = &report.oracle {
        println!("{:>12} {:>24} {:>24}", "h", "l2_error", "max_error");
        for r in &study.rows {
            println!("{:>12.6} {:>24} {:>24}", r.h, fmt_f64(r.l2_error), fmt_f64(r.max_error));
        }
        println!("l2_slope = {:.4}", study.l2_slope);
    }
    println!("wrote {}", run.out.path("csv").display());
    Ok(0)
}

fn cmd_verify(c: &Common, suite: Option<&str>) -> Result<u8> {
    let run = Run::open(c, "verify", suite)?;
    let setup = run.cfg.setup(&run.base)?;
    let names = run.cfg.verify.suite_names();
    let report = run_suite(&setup.prob, &run.cfg.solve_options(), &names, &run.cfg.suite_settings())?;
    run.out.write_json("json", &report)?;
    std::fs::write(run.extra("timings"), report.timings_csv())?;
    print!("{}", report.table());
    println!("wrote {}", run.out.path("json").display());
    Ok(if report.pass { 0 } else { CHECK_FAILURE })
}

#[derive(Serialize, Default)]
struct MetricReport {
    lattice_nodes: usize,
    edges: usize,
    distance: Vec<DistanceRow>,
    ball: Vec<BallRow>,
    q: Vec<QRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    ahlfors: Option<AhlforsRow>,
    boundary_diameter: Option<f64>,
}

#[derive(Serialize)]
struct DistanceRow {
    x: Vec<f64>,
    y: Vec<f64>,
    distance: f64,
}

#[derive(Serialize)]
struct BallRow {
    x: Vec<f64>,
    r: f64,
    volume: f64,
    exits_box: bool,
}

#[derive(Serialize)]
struct QRow {
    x: Vec<f64>,
    r_lo: f64,
    r_hi: f64,
    q: f64,
}

#[derive(Serialize)]
struct AhlforsRow {
    s: f64,
    max_ratio: f64,
    arg_boundary_sample: usize,
    arg_radius: f64,
    ratios: Vec<f64>,
    any_exits_box: bool,
}

fn cmd_metric(c: &Common) -> Result<u8> {
    let run = Run::open(c, "metric", None)?;
    let setup = run.cfg.setup(&run.base)?;
    let (sys, dom) = (&setup.sys, &setup.dom);
    let queries = &run.cfg.queries;
    let n = dom.dim();
    for x in queries.distance.iter().flatten().chain(queries.ball.iter().map(|b| &b.0)).chain(&queries.q_at) {
        if x.len() != n {
            return Err(Error::Config(format!("query point {x:?} is not in R^{n}")));
        }
    }
    let g = MetricGraph::build(sys, dom, &run.cfg.metric.options())?;
    let mut rep = MetricReport { lattice_nodes: g.num_nodes(), edges: g.num_edges(), ..MetricReport::default() };
    let mut rows: Vec<(String, usize, &str, f64)> = Vec::new();
    for (k, [x, y]) in queries.distance.iter().enumerate() {
        let d = cc_distance(&g, g.nearest_node(x), g.nearest_node(y))?;
        rows.push(("distance".into(), k, "d", d));
        rep.distance.push(DistanceRow { x: x.clone(), y: y.clone(), distance: d });
    }
    for (k, (x, r)) in queries.ball.iter().enumerate() {
        let b = ball_volume(&g, g.nearest_node(x), *r)?;
        rows.push(("ball".into(), k, "volume", b.volume));
        rep.ball.push(BallRow { x: x.clone(), r: *r, volume: b.volume, exits_box: b.exits_box });
    }
    let diam = dom.diam_euclidean();
    let [r_lo, r_hi] = queries.q_range.unwrap_or([0.15 * diam, 0.35 * diam]);
    for (k, x) in queries.q_at.iter().enumerate() {
        let q = estimate_q(&g, g.nearest_node(x), r_lo, r_hi)?;
        rows.push(("q".into(), k, "q", q));
        rep.q.push(QRow { x: x.clone(), r_lo, r_hi, q });
    }
    if !queries.ahlfors.is_empty() {
        let s = queries.ahlfors_s.unwrap_or(run.cfg.problem.s);
        for &(b, _) in &queries.ahlfors {
            if b >= dom.num_boundary() {
                return Err(Error::Config(format!("boundary sample {b} out of range (0..{})", dom.num_boundary())));
            }
        }
        let a = ahlfors_upper_check(&g, dom, s, &queries.ahlfors, dom.declared.r_o)?;
        for (k, r) in a.ratios.iter().enumerate() {
            rows.push(("ahlfors".into(), k, "ratio", *r));
        }
        rep.ahlfors = Some(AhlforsRow {
            s,
            max_ratio: a.max_ratio,
            arg_boundary_sample: a.arg_max.0,
            arg_radius: a.arg_max.1,
            ratios: a.ratios,
            any_exits_box: a.any_exits_box,
        });
    }
    if g.num_boundary() > 0 {
        let nodes: Vec<usize> = (0..g.num_boundary()).map(|b| g.boundary_node(b)).collect();
        let d = estimate_diameter(&g, &nodes)?;
        rows.push(("diameter".into(), 0, "boundary_diameter", d));
        rep.boundary_diameter = Some(d);
    }
    let mut text = String::from("query,index,quantity,value\n");
    for (q, k, name, v) in &rows {
        text += &format!("{q},{k},{name},{}\n", fmt_f64(*v));
    }
    run.out.write_text("csv", &text)?;
    run.out.write_json("json", &rep)?;
    for (q, k, name, v) in &rows {
        println!("{q}[{k}] {name} = {}", fmt_f64(*v));
    }
    println!("wrote {}", run.out.path("csv").display());
    Ok(0)
}

#[derive(Serialize)]
struct BesovReport {
    q: f64,
    s: f64,
    beta: f64,
    boundary_samples: usize,
    seminorm: f64,
    norm: f64,
}

fn cmd_besov(c: &Common) -> Result<u8> {
    let run = Run::open(c, "besov", None)?;
    let spec = run.cfg.besov_field.clone().ok_or_else(|| Error::Config("the besov command needs `besov_field`".into()))?;
    let setup = run.cfg.setup(&run.base)?;
    let dom = &setup.dom;
    let values = spec.evaluate(
        "besov_field",
        dom.dim(),
        (0..dom.num_boundary()).map(|b| dom.boundary_point(b)),
        dom.num_boundary(),
        &run.base,
    )?;
    let f = BoundaryValues::new(dom, values)?;
    let g = MetricGraph::build(&setup.sys, dom, &run.cfg.metric.options())?;
    let geom = BesovGeometry::new(&g, dom, None, run.cfg.metric.besov_cap)?;
    let params = setup.prob.besov;
    let rep = BesovReport {
        q: params.q,
        s: params.s,
        beta: params.beta,
        boundary_samples: dom.num_boundary(),
        seminorm: besov_seminorm(&geom, &f, &params)?,
        norm: besov_norm(&geom, &f, &params)?,
    };
    let mut text = String::new();
    let cols: Vec<String> = (1..=dom.dim()).map(|k| format!("x{k}")).collect();
    text += &format!("{},mu,value\n", cols.join(","));
    for b in 0..dom.num_boundary() {
        let xs: Vec<String> = dom.boundary_point(b).iter().map(|&x| fmt_f64(x)).collect();
        text += &format!("{},{},{}\n", xs.join(","), fmt_f64(dom.boundary().mu[b]), fmt_f64(f.values()[b]));
    }
    run.out.write_text("csv", &text)?;
    run.out.write_json("json", &rep)?;
    println!("seminorm = {}", fmt_f64(rep.seminorm));
    println!("norm = {}", fmt_f64(rep.norm));
    println!("wrote {}", run.out.path("json").display());
    Ok(0)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Solve(c) => cmd_solve(c),
        Command::Verify { common, suite } => cmd_verify(common, suite.as_deref()),
        Command::Metric(c) => cmd_metric(c),
        Command::Besov(c) => cmd_besov(c),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
