use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use scatterflow_ffi::*;

const PINNED: &str = include_str!("../../core/tests/data/pinned.toml");
const CHAIN: &str = include_str!("../../core/tests/data/chain.toml");

struct Handles {
    problem: *mut ScfProblem,
    system: *mut ScfSystem,
}

impl Drop for Handles {
    fn drop(&mut self) {
        unsafe {
            scf_system_free(self.system);
            scf_problem_free(self.problem);
        }
    }
}

fn build(src: &str) -> Handles {
    let text = CString::new(src).unwrap();
    let mut h = Handles { problem: ptr::null_mut(), system: ptr::null_mut() };
    unsafe {
        assert_eq!(scf_problem_parse(text.as_ptr(), &mut h.problem), ScfStatus::Ok);
        assert_eq!(scf_system_assemble(h.problem, &mut h.system), ScfStatus::Ok);
    }
    h
}

fn last_error() -> String {
    let p = scf_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn solve_pinned() {
    let h = build(PINNED);
    unsafe {
        assert_eq!(scf_problem_dim(h.problem), 2);
        let mut sol = ptr::null_mut();
        assert_eq!(scf_system_solve(h.system, ptr::null(), &mut sol), ScfStatus::Ok);
        assert_eq!(scf_solution_status(sol), ScfRunStatus::Converged);
        assert!(scf_solution_iterations(sol) > 0);

        let mut len = 0;
        assert_eq!(scf_solution_primal(sol, ptr::null_mut(), 0, &mut len), ScfStatus::Ok);
        assert_eq!(len, 2);
        let mut a = [0.0; 2];
        let mut b = [0.0; 2];
        assert_eq!(scf_solution_primal(sol, a.as_mut_ptr(), 2, &mut len), ScfStatus::Ok);
        assert_eq!(scf_solution_dual(sol, b.as_mut_ptr(), 2, &mut len), ScfStatus::Ok);
        assert!((a[0] - 3.0).abs() < 1e-6 && (a[1] - 3.0).abs() < 1e-6);
        assert!((b[0] - 6.0).abs() < 1e-6 && (b[1] + 6.0).abs() < 1e-6);

        let (mut primal, mut dual, mut gap) = (0.0, 0.0, 0.0);
        assert_eq!(scf_solution_costs(sol, &mut primal, &mut dual, &mut gap), ScfStatus::Ok);
        assert!((primal - 9.0).abs() < 1e-6 && (dual - 9.0).abs() < 1e-6 && gap.abs() < 1e-6);

        let (mut rp, mut rd) = (1.0, 1.0);
        assert_eq!(scf_solution_residuals(sol, &mut rp, &mut rd), ScfStatus::Ok);
        assert!(rp < 1e-8 && rd < 1e-8);
        scf_solution_free(sol);
    }
}

#[test]
fn async_options_and_waves() {
    let h = build(CHAIN);
    let opts = ScfSolveOptions {
        mode: ScfMode::Asynchronous,
        p: 0.25,
        seed: 9,
        ..scf_solve_options_default()
    };
    unsafe {
        let mut sol = ptr::null_mut();
        assert_eq!(scf_system_solve(h.system, &opts, &mut sol), ScfStatus::Ok);
        assert_eq!(scf_solution_status(sol), ScfRunStatus::Converged);
        let mut a = [0.0; 5];
        let mut len = 0;
        assert_eq!(scf_solution_primal(sol, a.as_mut_ptr(), 5, &mut len), ScfStatus::Ok);
        assert!((a[0] - 3.5 / 6.5).abs() < 1e-6);
        let (mut c, mut d) = ([0.0; 5], [0.0; 5]);
        assert_eq!(scf_solution_waves(sol, c.as_mut_ptr(), d.as_mut_ptr(), 5, &mut len), ScfStatus::Ok);
        assert_eq!(len, 5);
        let r2 = std::f64::consts::SQRT_2;
        assert!((a[0] - (c[0] + d[0]) / r2).abs() < 1e-6);
        scf_solution_free(sol);
    }
}

#[test]
fn max_iters_is_reported_on_the_solution() {
    let h = build(PINNED);
    let opts = ScfSolveOptions { max_iters: 3, ..scf_solve_options_default() };
    unsafe {
        let mut sol = ptr::null_mut();
        assert_eq!(scf_system_solve(h.system, &opts, &mut sol), ScfStatus::Ok);
        assert_eq!(scf_solution_status(sol), ScfRunStatus::MaxIters);
        assert_eq!(scf_solution_iterations(sol), 3);
        scf_solution_free(sol);
    }
}

#[test]
fn errors_set_codes_and_messages() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(scf_problem_parse(ptr::null(), &mut p), ScfStatus::NullPointer);
        assert!(last_error().contains("text"));

        let bad = CString::new("n = 2\n[[cr]]\nkind = \"zero\"\nindices = [0]\n").unwrap();
        assert_eq!(scf_problem_parse(bad.as_ptr(), &mut p), ScfStatus::Validation);
        assert!(p.is_null());
        assert!(!last_error().is_empty());

        let invalid = [0xffu8, 0];
        assert_eq!(scf_problem_parse(invalid.as_ptr().cast(), &mut p), ScfStatus::InvalidUtf8);

        let clash = CString::new(
            "n = 2\n[[cr]]\nkind = \"constant\"\nindices = [0]\nvalue = 1.0\n[[cr]]\nkind = \"constant\"\nindices = [1]\nvalue = 2.0\n[[li]]\nkind = \"equality\"\ninputs = [0]\noutputs = [1]\n",
        )
        .unwrap();
        assert_eq!(scf_problem_parse(clash.as_ptr(), &mut p), ScfStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(scf_system_assemble(p, &mut s), ScfStatus::Numerical);
        assert!(s.is_null());
        scf_problem_free(p);

        let mut sol = ptr::null_mut();
        assert_eq!(scf_system_solve(ptr::null(), ptr::null(), &mut sol), ScfStatus::NullPointer);
    }
}

#[test]
fn successful_call_clears_error() {
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(scf_problem_parse(ptr::null(), &mut p), ScfStatus::NullPointer);
        let ok = CString::new(PINNED).unwrap();
        assert_eq!(scf_problem_parse(ok.as_ptr(), &mut p), ScfStatus::Ok);
        assert!(scf_last_error_message().is_null());
        scf_problem_free(p);
    }
}

#[test]
fn small_buffer() {
    let h = build(PINNED);
    unsafe {
        let mut sol = ptr::null_mut();
        assert_eq!(scf_system_solve(h.system, ptr::null(), &mut sol), ScfStatus::Ok);
        let mut a = [0.0; 1];
        let mut len = 0;
        assert_eq!(scf_solution_primal(sol, a.as_mut_ptr(), 1, &mut len), ScfStatus::BufferTooSmall);
        assert_eq!(len, 2);
        scf_solution_free(sol);
    }
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn c_program_links_against_header() {
    let Ok(cc) = which_cc() else {
        eprintln!("no C compiler found, skipping");
        return;
    };
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let lib = target_dir().join("libscatterflow_ffi.a");
    if !lib.exists() {
        eprintln!("{} not built, skipping", lib.display());
        return;
    }
    let out = tempfile_path("smoke");
    let status = Command::new(&cc)
        .arg(manifest.join("tests/c/smoke.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&out)
        .status()
        .unwrap();
    assert!(status.success(), "C compile failed");
    let run = Command::new(&out).output().unwrap();
    let _ = std::fs::remove_file(&out);
    assert!(run.status.success(), "smoke exited with {:?}", run.status.code());
    assert!(String::from_utf8_lossy(&run.stdout).starts_with("a = 3.0000"));
}

fn which_cc() -> Result<String, ()> {
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    match Command::new(&cc).arg("--version").output() {
        Ok(o) if o.status.success() => Ok(cc),
        _ => Err(()),
    }
}

fn tempfile_path(stem: &str) -> PathBuf {
    std::env::temp_dir().join(format!("scatterflow-{stem}-{}", std::process::id()))
}
