//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero when any criterion fails.

use std::f64::consts::SQRT_2;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use scatterflow::cr::{catalog_cr, classify_map, Battery, FnMap};
use scatterflow::executor::verify_fixed_point;
use scatterflow::li::verify_behavior;
use scatterflow::recovery::stationarity_report;
use scatterflow::{
    assemble, build_scattering, forward_transform, grid_solve, kkt_solve, parse_problem_file, recover, run,
    CatalogCr, Classification, GridProblem, LiBlock, ProblemFile, QuadraticProblem, RunStatus, Schedule,
    Solution, SystemGraph, TransformConvention,
};

// pinned tolerances
const ORTHO_TOL: f64 = 1e-10;
const ORTHO_TIME: Duration = Duration::from_secs(5);
const BEHAVIOR_TOL: f64 = 1e-9;
const CONSERVATION_TOL: f64 = 1e-9;
const SWEEP_TOL: f64 = 1e-9;
const GAIN_TOL: f64 = 1e-9;
const NEUTRAL_TOL: f64 = 1e-12;
const ORACLE_TOL: f64 = 1e-6;
const GRID_RESOLUTION: f64 = 1e-3;
const SOLVE_TIME: Duration = Duration::from_secs(1);
const SOLVE_MAX_ITERS: u64 = 100_000;
const ASYNC_TOL: f64 = 1e-6;
const FIXED_POINT_FACTOR: f64 = 10.0;
const MIN_SLOPE: f64 = 1.9;

const ASYNC_PROBS: [f64; 3] = [0.25, 0.5, 0.9];
const ASYNC_SEEDS: [u64; 5] = [1, 2, 3, 4, 5];

struct Canned {
    name: &'static str,
    src: &'static str,
    /// Nonsmooth problems are checked against the grid oracle.
    grid: bool,
}

const CANNED: [Canned; 6] = [
    Canned { name: "pinned", src: include_str!("data/pinned.toml"), grid: false },
    Canned { name: "consensus", src: include_str!("data/consensus.toml"), grid: false },
    Canned { name: "soft-threshold", src: include_str!("data/soft_threshold.toml"), grid: true },
    Canned { name: "box", src: include_str!("data/box.toml"), grid: true },
    Canned { name: "chain", src: include_str!("data/chain.toml"), grid: false },
    Canned { name: "nonnegative", src: include_str!("data/nonnegative.toml"), grid: true },
];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn max_dev(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn random_block(rng: &mut ChaCha8Rng) -> LiBlock {
    let m = rng.random_range(1..=8);
    let n = rng.random_range(1..=8);
    LiBlock::new(DMatrix::from_fn(m, n, |_, _| StandardNormal.sample(rng)))
}

fn load(c: &Canned) -> (ProblemFile, SystemGraph) {
    let pf = parse_problem_file(c.src).unwrap_or_else(|e| panic!("{}: {e}", c.name));
    let sg = assemble(&pf.problem, &pf.convention).unwrap_or_else(|e| panic!("{}: {e}", c.name));
    (pf, sg)
}

fn solve(sg: &SystemGraph, schedule: &Schedule) -> (Solution, scatterflow::StateVector, scatterflow::Trace) {
    let (state, trace) = run(sg, schedule, None).expect("run");
    let sol = recover(sg, &state).expect("recover");
    (sol, state, trace)
}

fn c1_orthonormality() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let t = TransformConvention::standard();
    let mut worst_ortho: f64 = 0.0;
    let mut worst_invol: f64 = 0.0;
    for _ in 0..200 {
        let li = random_block(&mut rng);
        let ports: Vec<usize> = (0..li.n_in() + li.n_out()).collect();
        let sb = build_scattering(&li, &ports, &t).expect("scattering");
        let n = sb.n_ports();
        worst_ortho = worst_ortho.max(sb.orthonormality_error());
        worst_invol = worst_invol.max((&sb.g_matrix * &sb.g_matrix - DMatrix::identity(n, n)).amax());
    }
    let elapsed = start.elapsed();
    outcome(
        worst_ortho <= ORTHO_TOL && worst_invol <= ORTHO_TOL && elapsed < ORTHO_TIME,
        format!(
            "200 blocks, max |GtG - I| = {worst_ortho:.2e}, max |G^2 - I| = {worst_invol:.2e} (bound {ORTHO_TOL:.0e}), {:.3} s (bound {} s)",
            elapsed.as_secs_f64(),
            ORTHO_TIME.as_secs()
        ),
    )
}

fn c2_behavior() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let t = TransformConvention::standard();
    let mut worst: f64 = 0.0;
    for k in 0..50 {
        let li = random_block(&mut rng);
        let ports: Vec<usize> = (0..li.n_in() + li.n_out()).collect();
        let sb = build_scattering(&li, &ports, &t).expect("scattering");
        worst = worst.max(verify_behavior(&sb, 1000, 7000 + k).max_deviation);
    }
    outcome(
        worst <= BEHAVIOR_TOL,
        format!("50 blocks x 1000 samples, max |d - Gc| = {worst:.2e} (bound {BEHAVIOR_TOL:.0e})"),
    )
}

fn c3_conservation() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let t = TransformConvention::standard();
    let mut worst_ab: f64 = 0.0;
    let mut worst_cd: f64 = 0.0;
    for _ in 0..1000 {
        let li = random_block(&mut rng);
        let a_mat = &li.a_matrix;
        let x: Vec<f64> = (0..li.n_in()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let y: Vec<f64> = (0..li.n_out()).map(|_| StandardNormal.sample(&mut rng)).collect();
        let xv = nalgebra::DVector::from_vec(x.clone());
        let yv = nalgebra::DVector::from_vec(y.clone());
        let a: Vec<f64> = x.iter().copied().chain((a_mat * &xv).iter().copied()).collect();
        let b: Vec<f64> = (-(a_mat.transpose() * &yv)).iter().copied().chain(y).collect();
        let ab: f64 = a.iter().zip(&b).map(|(p, q)| p * q).sum();
        let s = forward_transform(&a, &b, &t).expect("transform");
        worst_ab = worst_ab.max(ab.abs());
        worst_cd = worst_cd.max(s.pseudopower().abs());
    }
    outcome(
        worst_ab <= CONSERVATION_TOL && worst_cd <= CONSERVATION_TOL,
        format!(
            "1000 vectors, max |sum ab| = {worst_ab:.2e}, max |sum c^2 - d^2| = {worst_cd:.2e} (bound {CONSERVATION_TOL:.0e})"
        ),
    )
}

fn c4_set_equivalence() -> Outcome {
    let elements = [
        CatalogCr::Quadratic { q: 0.0, linear: 0.0 },
        CatalogCr::Quadratic { q: 0.5, linear: -1.0 },
        CatalogCr::Quadratic { q: 1.0, linear: 0.0 },
        CatalogCr::Quadratic { q: 3.0, linear: 2.0 },
        CatalogCr::Linear { slope: 0.75 },
        CatalogCr::Constant { value: -1.5 },
        CatalogCr::AbsoluteValue { weight: 1.0 },
        CatalogCr::NonNegative,
        CatalogCr::Box { lo: -1.0, hi: 2.0 },
        CatalogCr::Zero,
    ];
    let grid: Vec<f64> = (0..1000).map(|j| -10.0 + 20.0 * j as f64 / 999.0).collect();
    let mut worst: f64 = 0.0;
    let mut worst_name = "";
    let mut knee_points = 0;
    for el in elements {
        let (cr, m) = catalog_cr(el, 1, false).expect("catalog");
        let mut ys = grid.clone();
        // knees in d sit at y = √2·d for the piecewise elements
        for k in el.knees() {
            ys.push(k * SQRT_2);
            knee_points += 1;
        }
        for y in ys {
            let f = cr.eval_f(&[y])[0];
            let g = cr.eval_g(&[y])[0];
            let (c, d) = ((f - g) / SQRT_2, (f + g) / SQRT_2);
            let dev = (m.eval(&[d])[0] - c).abs();
            if dev > worst {
                worst = dev;
                worst_name = el.name();
            }
        }
    }
    outcome(
        worst <= SWEEP_TOL,
        format!(
            "{} elements x 1000 points + {knee_points} knees, max |m(d) - c| = {worst:.2e}{} (bound {SWEEP_TOL:.0e})",
            elements.len(),
            if worst > 0.0 { format!(" at {worst_name}") } else { String::new() }
        ),
    )
}

fn c5_classification() -> Outcome {
    let (_, quad) = catalog_cr(CatalogCr::Quadratic { q: 1.0, linear: 0.0 }, 1, true).expect("quadratic");
    let rq = classify_map(quad.map.as_ref(), &Battery::default());
    let quad_ok = rq.incremental_gain <= GAIN_TOL && matches!(rq.class, Classification::DissipativeEverywhere { .. });

    let abs = FnMap::new(1, |d: &[f64], c: &mut [f64]| c[0] = d[0].abs());
    let ra = classify_map(&abs, &Battery::default().with_knees(&[0.0]));
    let abs_ok = ra.neutral_deviation <= NEUTRAL_TOL && ra.class == Classification::Neutral;

    let (_, cst) = catalog_cr(CatalogCr::Constant { value: 1.0 }, 1, true).expect("constant");
    let rc = classify_map(cst.map.as_ref(), &Battery::default());
    let (s_ok, s_val) = match &rc.class {
        Classification::Source { s, .. } => (s[(0, 0)] == -1.0, s[(0, 0)]),
        _ => (false, f64::NAN),
    };
    outcome(
        quad_ok && abs_ok && s_ok,
        format!(
            "quadratic q=1 gain {:.2e} (bound {GAIN_TOL:.0e}, {}), |d| neutral deviation {:.2e} (bound {NEUTRAL_TOL:.0e}, {}), constant source S = {s_val} ({})",
            rq.incremental_gain,
            rq.class.label(),
            ra.neutral_deviation,
            ra.class.label(),
            rc.class.label()
        ),
    )
}

fn oracle_a_b(pf: &ProblemFile, grid: bool) -> (Vec<f64>, Option<Vec<f64>>, f64) {
    if grid {
        let gp = GridProblem::from_problem(&pf.problem, 5.0).expect("grid problem");
        (grid_solve(&gp, GRID_RESOLUTION).a, None, GRID_RESOLUTION)
    } else {
        let k = kkt_solve(&QuadraticProblem::from_problem(&pf.problem).expect("quadratic")).expect("kkt");
        (k.a, Some(k.b), ORACLE_TOL)
    }
}

struct Runs {
    /// Converged runs for the fixed-point and flatness checks.
    converged: Vec<(&'static str, SystemGraph, scatterflow::StateVector, Solution)>,
}

fn c6_oracle(runs: &mut Runs) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in &CANNED {
        let (pf, sg) = load(c);
        let start = Instant::now();
        let (sol, state, trace) = solve(&sg, &Schedule::synchronous());
        let elapsed = start.elapsed();
        let (a_ref, b_ref, bound) = oracle_a_b(&pf, c.grid);
        let da = max_dev(&sol.a_star, &a_ref);
        let db = b_ref.as_ref().map_or(0.0, |b| max_dev(&sol.b_star, b));
        let ok = trace.status == RunStatus::Converged
            && da <= bound
            && db <= bound
            && elapsed < SOLVE_TIME
            && trace.iterations() < SOLVE_MAX_ITERS;
        pass &= ok;
        parts.push(format!(
            "{} {} it {:.3} ms da {da:.1e}{}",
            c.name,
            trace.iterations(),
            elapsed.as_secs_f64() * 1e3,
            b_ref.map_or(String::new(), |_| format!(" db {db:.1e}"))
        ));
        if trace.status == RunStatus::Converged {
            runs.converged.push((c.name, sg, state, sol));
        }
    }
    outcome(
        pass,
        format!(
            "{} (bounds kkt {ORACLE_TOL:.0e}, grid {GRID_RESOLUTION:.0e}, {} s, {SOLVE_MAX_ITERS} it)",
            parts.join("; "),
            SOLVE_TIME.as_secs()
        ),
    )
}

fn c7_async(runs: &mut Runs) -> Outcome {
    let mut pass = true;
    let mut worst: f64 = 0.0;
    let mut count = 0;
    let mut failures = Vec::new();
    for c in &CANNED {
        let (_, sg) = load(c);
        let (reference, _, _) = solve(&sg, &Schedule::synchronous());
        for &p in &ASYNC_PROBS {
            for &seed in &ASYNC_SEEDS {
                let (sol, state, trace) = solve(&sg, &Schedule::asynchronous(p, seed));
                let dev = max_dev(&sol.a_star, &reference.a_star).max(max_dev(&sol.b_star, &reference.b_star));
                count += 1;
                worst = worst.max(dev);
                if trace.status != RunStatus::Converged || dev > ASYNC_TOL {
                    pass = false;
                    failures.push(format!("{} p={p} seed={seed}", c.name));
                } else {
                    runs.converged.push((c.name, sg.clone(), state, sol));
                }
            }
        }
    }
    outcome(
        pass,
        format!(
            "{count} async runs, max deviation from sync {worst:.2e} (bound {ASYNC_TOL:.0e}){}",
            if failures.is_empty() { String::new() } else { format!(", failed: {}", failures.join(", ")) }
        ),
    )
}

fn c8_fixed_point(runs: &Runs) -> Outcome {
    let bound = FIXED_POINT_FACTOR * Schedule::synchronous().tol;
    let mut worst_t: f64 = 0.0;
    let mut worst_u: f64 = 0.0;
    let mut pass = true;
    for (name, sg, state, sol) in &runs.converged {
        let r = verify_fixed_point(sg, state).expect("verify");
        let st = stationarity_report(sol, &sg.problem).expect("report");
        worst_t = worst_t.max(r.max_transformed());
        worst_u = worst_u.max(r.max_untransformed()).max(st.max_residual());
        if !r.passes(bound) || st.max_residual() > bound {
            pass = false;
            eprintln!("  fixed-point check failed for {name}: {r:?}");
        }
    }
    outcome(
        pass && !runs.converged.is_empty(),
        format!(
            "{} converged runs, max transformed {worst_t:.2e}, max untransformed {worst_u:.2e} (bound {bound:.0e})",
            runs.converged.len()
        ),
    )
}

fn c9_flatness(runs: &Runs) -> Outcome {
    let mut pass = true;
    let mut min_slope = f64::INFINITY;
    let mut probed = 0;
    let mut flat = 0;
    for (name, sg, _, sol) in runs.converged.iter() {
        let st = stationarity_report(sol, &sg.problem).expect("report");
        let Some(f) = st.flatness else {
            pass = false;
            eprintln!("  no flatness probe for {name}");
            continue;
        };
        probed += 1;
        match f.min_slope() {
            Some(s) => min_slope = min_slope.min(s),
            None => flat += 1,
        }
        pass &= f.passed();
    }
    outcome(
        pass,
        format!(
            "{probed} solutions x 32 directions, min log-log slope {min_slope:.3} (bound {MIN_SLOPE}), {flat} solutions flat to rounding"
        ),
    )
}

fn c10_determinism() -> Outcome {
    let mut pass = true;
    let mut bytes = 0;
    for c in &CANNED {
        let (_, sg) = load(c);
        for sched in [Schedule::synchronous(), Schedule::asynchronous(0.5, 42)] {
            let mut traces = Vec::new();
            for _ in 0..2 {
                let (_, trace) = run(&sg, &sched, None).expect("run");
                let mut buf = Vec::new();
                trace.write_csv(&mut buf).expect("csv");
                traces.push(buf);
            }
            bytes += traces[0].len();
            pass &= traces[0] == traces[1] && !traces[0].is_empty();
        }
    }
    outcome(
        pass,
        format!("{} problems x (sync, async p=0.5 seed 42), {bytes} trace bytes compared byte for byte", CANNED.len()),
    )
}

fn main() -> ExitCode {
    let mut runs = Runs { converged: Vec::new() };
    let results = [
        ("orthonormality", c1_orthonormality()),
        ("behavioral equivalence", c2_behavior()),
        ("conservation", c3_conservation()),
        ("CR set equivalence", c4_set_equivalence()),
        ("classification battery", c5_classification()),
        ("oracle equivalence", c6_oracle(&mut runs)),
        ("sync/async agreement", c7_async(&mut runs)),
        ("fixed-point residuals", c8_fixed_point(&runs)),
        ("first-order flatness", c9_flatness(&runs)),
        ("determinism", c10_determinism()),
    ];
    let mut failed = 0;
    for (i, (name, o)) in results.iter().enumerate() {
        println!("criterion {:>2} {:<24} {}  {}", i + 1, name, if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed += 1;
        }
    }
    println!("{} of {} criteria passed", results.len() - failed, results.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
