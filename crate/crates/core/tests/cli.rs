//! End-to-end runs of the `subneumann` binary: exit codes and output files.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const DISK: &str = r#"
system = "euclidean(2)"
[domain]
shape = "euclidean_ball"
center = [0.0, 0.0]
radius = 1.0
h = 0.125
"#;

fn run(dir: &Path, args: &[&str], toml: &str) -> Output {
    let cfg = dir.join("run.toml");
    std::fs::write(&cfg, toml).unwrap();
    Command::new(env!("CARGO_BIN_EXE_subneumann"))
        .args(args)
        .arg("--config")
        .arg(&cfg)
        .arg("--out")
        .arg(dir.join("out"))
        .output()
        .unwrap()
}

fn outputs(dir: &Path, prefix: &str, ext: &str) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir.join("out"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| {
            let name = p.file_name().unwrap().to_string_lossy().to_string();
            name.starts_with(prefix) && name.ends_with(ext)
        })
        .collect();
    v.sort();
    v
}

fn solution_csv(dir: &Path) -> Option<PathBuf> {
    outputs(dir, "solve-", ".csv").into_iter().find(|p| std::fs::read_to_string(p).unwrap().starts_with("x1,x2,u\n"))
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn solve_writes_report_solution_and_config_echo() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!("{DISK}[problem]\np = 3.0\n[data]\nf = {{ expr = \"x\" }}\ng = {{ expr = \"y\" }}\nbalance = \"shift\"\n");
    let o = run(dir.path(), &["solve"], &toml);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("C_emp = "));
    let json = outputs(dir.path(), "solve-", ".json");
    assert_eq!(json.len(), 1);
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&json[0]).unwrap()).unwrap();
    assert_eq!(rep["converged"], serde_json::Value::Bool(true));
    assert!(rep["compatibility_residual"].as_f64().unwrap().abs() < 1e-8);
    assert!(solution_csv(dir.path()).is_some());
    assert_eq!(outputs(dir.path(), "config-", ".toml").len(), 1);
}

#[test]
fn echoed_config_reproduces_the_hash() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!("seed = 9\n{DISK}[data]\nf = {{ random = 2 }}\ng = {{ expr = \"0\" }}\nbalance = \"shift\"\n");
    assert_eq!(run(dir.path(), &["solve"], &toml).status.code(), Some(0));
    let echo = outputs(dir.path(), "config-", ".toml").pop().unwrap();
    let again = tempfile::tempdir().unwrap();
    let o = run(again.path(), &["solve"], &std::fs::read_to_string(&echo).unwrap());
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let a = outputs(dir.path(), "solve-", ".json").pop().unwrap();
    let b = outputs(again.path(), "solve-", ".json").pop().unwrap();
    assert_eq!(a.file_name(), b.file_name());
    assert_eq!(std::fs::read(a).unwrap(), std::fs::read(b).unwrap());
}

#[test]
fn incompatible_data_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!("{DISK}[data]\nf = {{ expr = \"1\" }}\ng = {{ expr = \"0\" }}\n");
    let o = run(dir.path(), &["solve"], &toml);
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
}

#[test]
fn q_above_p_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!("{DISK}[problem]\np = 1.5\nq = 2.0\n");
    let o = run(dir.path(), &["solve"], &toml);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("1 < q ≤ p"), "{}", stderr(&o));
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["solve"], &format!("{DISK}[problem]\npp = 2.0\n"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn zero_data_gives_zero_solution() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!("{DISK}[data]\nf = {{ expr = \"0\" }}\ng = {{ expr = \"0\" }}\n");
    let o = run(dir.path(), &["solve"], &toml);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let sol = solution_csv(dir.path()).unwrap();
    for line in std::fs::read_to_string(sol).unwrap().lines().skip(1) {
        let u: f64 = line.rsplit(',').next().unwrap().parse().unwrap();
        assert_eq!(u, 0.0);
    }
}

#[test]
fn oracle_study_reports_second_order() {
    let dir = tempfile::tempdir().unwrap();
    let toml = r#"
system = "euclidean(1)"
[domain]
shape = "box"
lo = [0.0]
hi = [1.0]
h = 0.03125
[problem]
p = 2.0
[data]
f = { expr = "-pi*pi*cos(pi*x)" }
g = { expr = "0" }
balance = "shift"
[oracle]
exact = "cos(pi*x)"
"#;
    let o = run(dir.path(), &["solve"], toml);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let line = out.lines().find(|l| l.starts_with("l2_slope")).unwrap();
    let s: f64 = line.split('=').nth(1).unwrap().trim().parse().unwrap();
    assert!((1.8..=2.2).contains(&s), "{s}");
}

#[test]
fn verify_suite_selection_and_failures() {
    let dir = tempfile::tempdir().unwrap();
    let toml = format!("{DISK}[data]\nf = {{ expr = \"x*y\" }}\ng = {{ expr = \"0\" }}\nbalance = \"shift\"\n");
    let o = run(dir.path(), &["verify", "--suite", "adjoint_identity,projection_idempotent,solve"], &toml);
    assert_eq!(o.status.code(), Some(0), "{}{}", stdout(&o), stderr(&o));
    let json = outputs(dir.path(), "verify-", ".json").pop().unwrap();
    let rep: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(json).unwrap()).unwrap();
    let names: Vec<&str> = rep["checks"].as_array().unwrap().iter().map(|c| c["name"].as_str().unwrap()).collect();
    assert_eq!(names, ["adjoint_identity", "projection_idempotent", "solve"]);
    assert_eq!(outputs(dir.path(), "verify-", "-timings.csv").len(), 1);

    assert_eq!(run(dir.path(), &["verify", "--suite", ""], &toml).status.code(), Some(0));
    assert_eq!(run(dir.path(), &["verify", "--suite", "no_such_check"], &toml).status.code(), Some(2));
}

#[test]
fn metric_queries_and_radius_bound() {
    let dir = tempfile::tempdir().unwrap();
    let base = r#"
system = "heisenberg1"
[domain]
shape = "box"
lo = [-1.0, -1.0, -0.25]
hi = [1.0, 1.0, 0.25]
h = 0.125
"#;
    let toml = format!("{base}[queries]\ndistance = [[[0.0, 0.0, 0.0], [0.5, 0.0, 0.0]]]\nball = [[[0.0, 0.0, 0.0], 0.5]]\n");
    let o = run(dir.path(), &["metric"], &toml);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = outputs(dir.path(), "metric-", ".csv").pop().unwrap();
    let text = std::fs::read_to_string(csv).unwrap();
    assert!(text.starts_with("query,index,quantity,value\n"));
    let d: f64 = text
        .lines()
        .find(|l| l.starts_with("distance,0,"))
        .and_then(|l| l.rsplit(',').next())
        .unwrap()
        .parse()
        .unwrap();
    // Horizontal segment: the sub-Riemannian and Euclidean lengths agree.
    assert!((d - 0.5).abs() < 0.05, "{d}");

    let far = format!("{base}[queries]\nahlfors = [[4, 9.0]]\n");
    assert_eq!(run(dir.path(), &["metric"], &far).status.code(), Some(2));
}

#[test]
fn besov_command_requires_a_field() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["besov"], DISK).status.code(), Some(2));
    let toml = format!("besov_field = {{ expr = \"x\" }}\n{DISK}");
    let o = run(dir.path(), &["besov"], &toml);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let out = stdout(&o);
    let val = |key: &str| -> f64 {
        out.lines().find(|l| l.starts_with(key)).unwrap().split('=').nth(1).unwrap().trim().parse().unwrap()
    };
    let (semi, norm) = (val("seminorm"), val("norm"));
    assert!(semi > 0.0 && norm > semi);
}
