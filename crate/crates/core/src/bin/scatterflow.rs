use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use scatterflow::executor::DEFAULT_TOL;
use scatterflow::format::parse_state;
use scatterflow::recovery::diagnose;
use scatterflow::{
    assemble, grid_solve, kkt_solve, parse_problem_file, recover, run, Error, GridProblem, ProblemFile,
    QuadraticProblem, RunStatus, Schedule, SolutionFile,
};

const EXIT_VALIDATION: u8 = 2;
const EXIT_MAX_ITERS: u8 = 3;
const EXIT_NUMERICAL: u8 = 4;

#[derive(Parser)]
#[command(name = "scatterflow", version, about = "Scattering fixed-point solver for primal/dual stationarity")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Sync,
    Async,
}

#[derive(clap::Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value = "sync")]
    mode: ModeArg,
    /// Firing probability of every delay in async mode.
    #[arg(long, default_value_t = 0.5)]
    p: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    tol: f64,
    #[arg(long, default_value_t = scatterflow::executor::DEFAULT_MAX_ITERS)]
    max_iters: u64,
}

impl RunArgs {
    fn schedule(&self) -> Schedule {
        let base = match self.mode {
            ModeArg::Sync => Schedule::synchronous(),
            ModeArg::Async => Schedule::asynchronous(self.p, self.seed),
        };
        Schedule {
            seed: self.seed,
            tol: self.tol,
            max_iters: self.max_iters,
            ..base
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Check partition coverage and block parameters.
    Validate { file: PathBuf },
    /// Print scattering matrices, CR classifications and source reductions.
    Derive { file: PathBuf },
    /// Run to a fixed point and write the solution.
    Solve {
        file: PathBuf,
        #[command(flatten)]
        run: RunArgs,
        /// Per-iteration CSV trace.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Snapshot stride; snapshots go next to the trace.
        #[arg(long, requires = "trace")]
        snapshots: Option<u64>,
        /// Solution file; stdout when absent.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Check a saved state against the fixed-point and stationarity conditions.
    Verify {
        file: PathBuf,
        #[arg(long)]
        state: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
    },
    /// Solve synchronously and compare with a reference solver.
    Compare {
        file: PathBuf,
        #[arg(long, default_value_t = DEFAULT_TOL)]
        tol: f64,
        /// Grid spacing for nonsmooth problems.
        #[arg(long, default_value_t = 1e-3)]
        resolution: f64,
        /// Half-width of the grid search box.
        #[arg(long, default_value_t = 10.0)]
        radius: f64,
    },
}

enum Failure {
    Io(String),
    Model(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Model(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Self {
        Failure::Io(e.to_string())
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Derivation { source, .. } | Error::Located { source, .. } => exit_code(source),
        Error::SingularLoop { .. }
        | Error::NonFiniteState { .. }
        | Error::SingularKkt
        | Error::NonInvertibleParametrization { .. } => EXIT_NUMERICAL,
        _ => EXIT_VALIDATION,
    }
}

fn load(path: &Path) -> Result<ProblemFile, Failure> {
    let src = fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))?;
    Ok(parse_problem_file(&src)?)
}

fn fmt_vec(v: &[f64]) -> String {
    let items: Vec<String> = v.iter().map(|x| format!("{x:.6e}")).collect();
    format!("[{}]", items.join(", "))
}

fn validate(file: &Path) -> Result<u8, Failure> {
    let pf = load(file)?;
    let p = &pf.problem;
    println!("ok: n = {}, {} CR blocks, {} LI blocks", p.n(), p.crs.len(), p.lis.len());
    Ok(0)
}

fn derive(file: &Path) -> Result<u8, Failure> {
    let pf = load(file)?;
    let sg = assemble(&pf.problem, &pf.convention)?;
    let part = &pf.problem.partition;
    let mut out = io::stdout().lock();
    for (l, sb) in sg.scattering.iter().enumerate() {
        writeln!(
            out,
            "LI {l}: inputs {:?} outputs {:?}, orthonormality error {:.3e}",
            part.li_inputs(l),
            part.li_outputs(l),
            sb.orthonormality_error()
        )?;
        write!(out, "G ={}", sb.g_matrix)?;
    }
    for (k, m) in sg.cr_maps.iter().enumerate() {
        let name = match &pf.problem.crs[k] {
            scatterflow::CrElement::Catalog(c) => c.name(),
            _ => "custom",
        };
        let role = if m.is_source() { "source" } else { "delayed" };
        writeln!(
            out,
            "CR {k} {name} {:?}: {} ({role}, {:?})",
            part.cr_blocks[k],
            m.classification.label(),
            m.kind
        )?;
    }
    for (l, rb) in sg.reduced.iter().enumerate() {
        if rb.sources.is_empty() {
            continue;
        }
        writeln!(out, "reduction of LI {l}: delayed {:?}, sources {:?}", rb.delayed, rb.sources)?;
        write!(out, "G_hat ={}", rb.g_hat)?;
        writeln!(out, "e_hat = {}", fmt_vec(rb.e_hat.as_slice()))?;
    }
    Ok(0)
}

fn snapshot_path(trace: &Path) -> PathBuf {
    let stem = trace.file_stem().map_or("trace".into(), |s| s.to_string_lossy().into_owned());
    trace.with_file_name(format!("{stem}.snapshots.csv"))
}

fn solve(file: &Path, args: &RunArgs, trace: Option<&Path>, snapshots: Option<u64>, output: Option<&Path>) -> Result<u8, Failure> {
    let pf = load(file)?;
    let sg = assemble(&pf.problem, &pf.convention)?;
    let schedule = Schedule {
        snapshot_stride: snapshots,
        ..args.schedule()
    };
    let (state, tr) = run(&sg, &schedule, None)?;
    if let Some(path) = trace {
        tr.write_csv(fs::File::create(path)?)?;
        if snapshots.is_some() {
            tr.write_snapshots_csv(fs::File::create(snapshot_path(path))?)?;
        }
    }
    let sol = recover(&sg, &state)?;
    let text = SolutionFile::new(&sol, &state, tr.status, tr.iterations()).to_toml();
    match output {
        Some(path) => fs::write(path, text)?,
        None => print!("{text}"),
    }
    log::info!("{} after {} iterations", tr.status.as_str(), tr.iterations());
    Ok(match tr.status {
        RunStatus::Converged => 0,
        RunStatus::MaxIters => EXIT_MAX_ITERS,
        RunStatus::Diverged => EXIT_NUMERICAL,
    })
}

fn verify(file: &Path, state: &Path, tol: f64) -> Result<u8, Failure> {
    let pf = load(file)?;
    let sg = assemble(&pf.problem, &pf.convention)?;
    let src = fs::read_to_string(state).map_err(|e| Failure::Io(format!("{}: {e}", state.display())))?;
    let state = parse_state(&src)?;
    let (sol, fp, st) = diagnose(&sg, &state)?;
    println!("transformed LI residuals   {}", fmt_vec(&fp.li_transformed));
    println!("transformed CR residuals   {}", fmt_vec(&fp.cr_transformed));
    println!("primal feasibility         {}", fmt_vec(&st.primal_feasibility));
    println!("dual feasibility           {}", fmt_vec(&st.dual_feasibility));
    let opt = |v: &[Option<f64>]| v.iter().map(|x| x.map_or("n/a".into(), |x| format!("{x:.6e}"))).collect::<Vec<_>>().join(", ");
    println!("CR primal consistency      [{}]", opt(&st.cr_primal));
    println!("CR dual consistency        [{}]", opt(&st.cr_dual));
    if let Some(gap) = sol.gap {
        println!("duality gap                {gap:.6e}");
    }
    let flat_ok = match &st.flatness {
        Some(f) => {
            let slope = f.min_slope().map_or("flat".into(), |s| format!("{s:.3}"));
            println!("flatness: {} directions, min slope {slope}", f.slopes.len());
            f.passed()
        }
        None => true,
    };
    let bound = 10.0 * tol;
    let ok = fp.passes(bound) && st.max_residual() <= bound && flat_ok;
    println!("{} (bound {bound:.1e})", if ok { "fixed point verified" } else { "not a fixed point" });
    Ok(if ok { 0 } else { EXIT_NUMERICAL })
}

fn compare(file: &Path, tol: f64, resolution: f64, radius: f64) -> Result<u8, Failure> {
    let pf = load(file)?;
    let sg = assemble(&pf.problem, &pf.convention)?;
    let schedule = Schedule { tol, ..Schedule::synchronous() };
    let (state, tr) = run(&sg, &schedule, None)?;
    let sol = recover(&sg, &state)?;
    println!("solver: {} after {} iterations", tr.status.as_str(), tr.iterations());
    let dev = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    match QuadraticProblem::from_problem(&pf.problem) {
        Ok(qp) => {
            let k = kkt_solve(&qp)?;
            println!("oracle: kkt");
            println!("max |a - a_kkt| = {:.3e}", dev(&sol.a_star, &k.a));
            println!("max |b - b_kkt| = {:.3e}", dev(&sol.b_star, &k.b));
        }
        Err(_) => {
            let gp = GridProblem::from_problem(&pf.problem, radius)?;
            let g = grid_solve(&gp, resolution);
            println!("oracle: grid (dimension {}, resolution {resolution:e})", gp.dim());
            println!("max |a - a_grid| = {:.3e}", dev(&sol.a_star, &g.a));
        }
    }
    Ok(match tr.status {
        RunStatus::Converged => 0,
        RunStatus::MaxIters => EXIT_MAX_ITERS,
        RunStatus::Diverged => EXIT_NUMERICAL,
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Validate { file } => validate(file),
        Command::Derive { file } => derive(file),
        Command::Solve {
            file,
            run,
            trace,
            snapshots,
            output,
        } => solve(file, run, trace.as_deref(), *snapshots, output.as_deref()),
        Command::Verify { file, state, tol } => verify(file, state, *tol),
        Command::Compare {
            file,
            tol,
            resolution,
            radius,
        } => compare(file, *tol, *resolution, *radius),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(Failure::Io(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_VALIDATION)
        }
        Err(Failure::Model(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
