use std::ffi::{c_char, c_int, CStr, CString};
use std::ptr;

use subneumann_ffi::*;

const ORACLE_1D: &str = r#"
system = "euclidean(1)"
[domain]
shape = "box"
lo = [0.0]
hi = [1.0]
h = 0.03125
[data]
f = { expr = "-pi^2*cos(pi*x)" }
"#;

fn last_error() -> String {
    let mut needed = 0usize;
    unsafe {
        sn_last_error(ptr::null_mut(), 0, &mut needed);
        let mut buf = vec![0 as c_char; needed];
        assert_eq!(sn_last_error(buf.as_mut_ptr(), buf.len(), ptr::null_mut()), SnStatus::Ok);
        CStr::from_ptr(buf.as_ptr()).to_string_lossy().into_owned()
    }
}

fn problem(toml: &str) -> Result<*mut SnProblem, SnStatus> {
    let text = CString::new(toml).unwrap();
    let mut p = ptr::null_mut();
    let st = unsafe { sn_problem_new(text.as_ptr(), ptr::null(), -1, &mut p) };
    if st == SnStatus::Ok {
        Ok(p)
    } else {
        assert!(p.is_null());
        Err(st)
    }
}

#[test]
fn solve_through_the_abi() {
    let p = problem(ORACLE_1D).unwrap();
    unsafe {
        let (mut dim, mut nodes) = (0usize, 0usize);
        assert_eq!(sn_problem_shape(p, &mut dim, &mut nodes), SnStatus::Ok);
        assert_eq!((dim, nodes), (1, 33));
        let mut xs = vec![0.0; nodes];
        assert_eq!(sn_problem_nodes(p, xs.as_mut_ptr(), xs.len()), SnStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(sn_solve(p, &mut s), SnStatus::Ok);
        let mut info = SnSolveInfo::default();
        assert_eq!(sn_solution_info(s, &mut info), SnStatus::Ok);
        assert_eq!(info.converged, 1);
        let mut u = vec![0.0; nodes];
        assert_eq!(sn_solution_values(s, u.as_mut_ptr(), 3), SnStatus::BufferTooSmall);
        assert_eq!(sn_solution_values(s, u.as_mut_ptr(), u.len()), SnStatus::Ok);
        // Exact solution cos(πx) has mean zero on [0, 1].
        let err = xs.iter().zip(&u).map(|(x, v)| (v - (std::f64::consts::PI * x).cos()).abs()).fold(0.0, f64::max);
        assert!(err < 2e-3, "max error {err}");
        sn_solution_free(s);
        sn_problem_free(p);
    }
}

#[test]
fn error_codes_match_the_cli() {
    assert_eq!(problem("system = \"nope\"").unwrap_err(), SnStatus::Config);
    assert!(last_error().contains("nope"));
    let bad = ORACLE_1D.replace("[data]", "[problem]\np = 2.0\nq = 3.0\n[data]");
    assert_eq!(problem(&bad).unwrap_err(), SnStatus::Config);
    assert!(last_error().contains("1 < q ≤ p"));

    let incompatible = ORACLE_1D.replace("-pi^2*cos(pi*x)", "1");
    let p = problem(&incompatible).unwrap();
    unsafe {
        let mut r = 0.0;
        assert_eq!(sn_problem_compatibility(p, &mut r), SnStatus::Ok);
        assert!((r + 1.0).abs() < 1e-12);
        let mut s = ptr::null_mut();
        assert_eq!(sn_solve(p, &mut s), SnStatus::IncompatibleData);
        assert!(s.is_null());
        sn_problem_free(p);
    }
}

#[test]
fn null_arguments_are_rejected() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(sn_problem_new(ptr::null(), ptr::null(), -1, &mut p), SnStatus::NullPointer);
        assert_eq!(sn_solve(ptr::null(), ptr::null_mut()), SnStatus::NullPointer);
        let mut pass: c_int = 0;
        assert_eq!(sn_report_check(ptr::null(), 0, &mut pass), SnStatus::NullPointer);
        sn_problem_free(ptr::null_mut());
        sn_solution_free(ptr::null_mut());
        sn_report_free(ptr::null_mut());
        assert!(!CStr::from_ptr(sn_version()).to_bytes().is_empty());
    }
}

#[test]
fn verify_report_round_trip() {
    let p = problem(ORACLE_1D).unwrap();
    unsafe {
        let suite = CString::new("compatibility,solve,weak_solution").unwrap();
        let mut r = ptr::null_mut();
        assert_eq!(sn_verify(p, suite.as_ptr(), &mut r), SnStatus::Ok);
        let (mut total, mut passed) = (0usize, 0usize);
        assert_eq!(sn_report_counts(r, &mut total, &mut passed), SnStatus::Ok);
        assert_eq!((total, passed), (3, 3));
        let mut pass: c_int = 0;
        assert_eq!(sn_report_check(r, 3, &mut pass), SnStatus::OutOfRange);
        let mut needed = 0usize;
        assert_eq!(sn_report_json(r, ptr::null_mut(), 0, &mut needed), SnStatus::BufferTooSmall);
        let mut buf = vec![0 as c_char; needed];
        assert_eq!(sn_report_json(r, buf.as_mut_ptr(), buf.len(), ptr::null_mut()), SnStatus::Ok);
        let json: serde_json::Value = serde_json::from_str(&CStr::from_ptr(buf.as_ptr()).to_string_lossy()).unwrap();
        assert_eq!(json["pass"], serde_json::Value::Bool(true));
        sn_report_free(r);

        let bogus = CString::new("bogus").unwrap();
        let mut r = ptr::null_mut();
        assert_eq!(sn_verify(p, bogus.as_ptr(), &mut r), SnStatus::Config);
        assert!(r.is_null());
        sn_problem_free(p);
    }
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/subneumann.h")).unwrap();
    for name in [
        "sn_problem_new",
        "sn_problem_free",
        "sn_solve",
        "sn_solution_values",
        "sn_verify",
        "sn_report_json",
        "sn_last_error",
        "SN_STATUS_CHECK_FAILURE = 5",
        "typedef struct SnProblem SnProblem;",
    ] {
        assert!(header.contains(name), "header lacks {name}");
    }
}

/// Compiles and runs a C program against the header and static library
/// when a C compiler is available.
#[test]
fn c_program_links_and_runs() {
    let Ok(cc) = std::process::Command::new("cc").arg("--version").output() else {
        eprintln!("no C compiler; skipped");
        return;
    };
    assert!(cc.status.success());
    let exe = std::env::current_exe().unwrap();
    let profile_dir = exe.parent().and_then(|d| d.parent()).unwrap();
    let lib = profile_dir.join("libsubneumann_ffi.a");
    if !lib.exists() {
        eprintln!("static library not built at {}; skipped", lib.display());
        return;
    }
    let dir = env!("CARGO_MANIFEST_DIR");
    let out = tempfile_path("sn_smoke");
    let status = std::process::Command::new("cc")
        .args([&format!("{dir}/tests/c/smoke.c"), "-I", &format!("{dir}/include"), "-o"])
        .arg(&out)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl"])
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = std::process::Command::new(&out).output().unwrap();
    let stdout = String::from_utf8_lossy(&run.stdout);
    assert!(run.status.success(), "C program failed: {stdout}");
    assert!(stdout.contains("converged=1"), "{stdout}");
    assert!(stdout.contains("status=2"), "{stdout}");
    let _ = std::fs::remove_file(out);
}

fn tempfile_path(stem: &str) -> std::path::PathBuf {
    std::env::temp_dir().join(format!("{stem}-{}", std::process::id()))
}
