//! Fixed-point iteration of an assembled system.
//!
//! One tick is a two-phase update. First every delay that fires latches
//! `Ĝ c + ê` at its port, reading the previous `c`. Then every delayed CR
//! maps its held `d` to a new `c`, and source ports are re-expanded.
//! Bernoulli draws come from a counter-based generator keyed on
//! `(seed, tick, port)`, so a run does not depend on evaluation order.

use std::io::Write;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::assembly::{gather, SystemGraph};
use crate::error::{Error, Result};
use crate::partition::{inverse_transform, StateVector};
use crate::recovery::recover_parameters;

pub const DEFAULT_TOL: f64 = 1e-9;
pub const DEFAULT_MAX_ITERS: u64 = 1_000_000;
/// Runs halt as diverged once `‖d‖∞` exceeds this.
pub const DIVERGENCE_BOUND: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Synchronous,
    Asynchronous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub mode: Mode,
    /// Firing probability shared by every delay.
    pub p: f64,
    /// Optional per-port probabilities, indexed by global index.
    pub per_port: Option<Vec<f64>>,
    pub seed: u64,
    pub max_iters: u64,
    pub tol: f64,
    /// Keep a full state snapshot every this many ticks.
    pub snapshot_stride: Option<u64>,
}

impl Default for Schedule {
    fn default() -> Self {
        Self::synchronous()
    }
}

impl Schedule {
    pub fn synchronous() -> Self {
        Self {
            mode: Mode::Synchronous,
            p: 1.0,
            per_port: None,
            seed: 0,
            max_iters: DEFAULT_MAX_ITERS,
            tol: DEFAULT_TOL,
            snapshot_stride: None,
        }
    }

    pub fn asynchronous(p: f64, seed: u64) -> Self {
        Self {
            mode: Mode::Asynchronous,
            p,
            seed,
            ..Self::synchronous()
        }
    }

    pub fn validate(&self, n: usize) -> Result<()> {
        let ok = |p: f64| p > 0.0 && p <= 1.0;
        if !ok(self.p) {
            return Err(Error::InvalidSchedule(format!("probability {} outside (0, 1]", self.p)));
        }
        if let Some(pp) = &self.per_port {
            if pp.len() != n {
                return Err(Error::InvalidSchedule(format!(
                    "{} per-port probabilities for {n} ports",
                    pp.len()
                )));
            }
            if let Some(bad) = pp.iter().find(|&&p| !ok(p)) {
                return Err(Error::InvalidSchedule(format!("probability {bad} outside (0, 1]")));
            }
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(Error::InvalidSchedule("tolerance must be positive".into()));
        }
        Ok(())
    }

    pub fn prob(&self, port: usize) -> f64 {
        match self.mode {
            Mode::Synchronous => 1.0,
            Mode::Asynchronous => self.per_port.as_ref().map_or(self.p, |pp| pp[port]),
        }
    }

    /// Ticks the update residual must stay below `tol` before stopping.
    pub fn window(&self, delay_ports: &[usize]) -> u64 {
        match self.mode {
            Mode::Synchronous => 1,
            Mode::Asynchronous => {
                let pmin = delay_ports.iter().map(|&i| self.prob(i)).fold(1.0, f64::min);
                (1.0 / pmin).ceil() as u64 * 4
            }
        }
    }

    pub fn fires(&self, tick: u64, port: usize) -> bool {
        let p = self.prob(port);
        if p >= 1.0 {
            return true;
        }
        bernoulli(self.seed, tick, port, p)
    }
}

/// Counter-based Bernoulli draw for `(seed, tick, port)`.
pub fn bernoulli(seed: u64, tick: u64, port: usize, p: f64) -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(port as u64);
    rng.set_word_pos(u128::from(tick) * 2);
    rng.random::<f64>() < p
}

/// Advances `state` by one tick.
pub fn step(sg: &SystemGraph, state: &StateVector, schedule: &Schedule, tick: u64) -> Result<StateVector> {
    let n = sg.n();
    if state.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: state.len() });
    }
    let mut next = state.clone();
    for rb in &sg.reduced {
        if rb.delayed.is_empty() {
            continue;
        }
        let proposal = rb.propose(&state.c);
        for (j, &port) in rb.delayed.iter().enumerate() {
            if schedule.fires(tick, port) {
                next.d[port] = proposal[j];
            }
        }
    }
    for (k, m) in sg.cr_maps.iter().enumerate() {
        if m.is_source() {
            continue;
        }
        let idx = sg.problem.cr_indices(k);
        let d: Vec<f64> = idx.iter().map(|&i| next.d[i]).collect();
        let c = m.eval(&d);
        for (&i, v) in idx.iter().zip(c) {
            next.c[i] = v;
        }
    }
    expand_sources(sg, &mut next);
    if let Some(port) = (0..n).find(|&i| !next.c[i].is_finite() || !next.d[i].is_finite()) {
        return Err(Error::NonFiniteState { tick, port });
    }
    Ok(next)
}

/// Overwrites source-port waves with the values implied by the delayed `c`.
pub fn expand_sources(sg: &SystemGraph, state: &mut StateVector) {
    for rb in &sg.reduced {
        if rb.sources.is_empty() {
            continue;
        }
        let (cs, ds) = rb.expand(&state.c);
        for (j, &port) in rb.sources.iter().enumerate() {
            state.c[port] = cs[j];
            state.d[port] = ds[j];
        }
    }
}

/// `max(‖Ĝ c + ê − d‖∞ over delayed ports, ‖m(d) − c‖∞ over delayed CRs)`.
pub fn stationarity_residual(sg: &SystemGraph, state: &StateVector) -> f64 {
    let mut r: f64 = 0.0;
    for rb in &sg.reduced {
        let prop = rb.propose(&state.c);
        for (j, &port) in rb.delayed.iter().enumerate() {
            r = r.max((prop[j] - state.d[port]).abs());
        }
    }
    for (k, m) in sg.cr_maps.iter().enumerate() {
        if m.is_source() {
            continue;
        }
        let idx = sg.problem.cr_indices(k);
        let d: Vec<f64> = idx.iter().map(|&i| state.d[i]).collect();
        for (&i, v) in idx.iter().zip(m.eval(&d)) {
            r = r.max((v - state.c[i]).abs());
        }
    }
    r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Converged,
    MaxIters,
    Diverged,
}

impl RunStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIters => "max-iters",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub iteration: u64,
    pub residual: f64,
    pub stationarity_residual: f64,
    pub conservation_residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    pub rows: Vec<TraceRow>,
    pub snapshots: Vec<(u64, StateVector)>,
    pub status: RunStatus,
}

impl Trace {
    pub fn iterations(&self) -> u64 {
        self.rows.last().map_or(0, |r| r.iteration)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        for row in &self.rows {
            wtr.serialize(row)?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Snapshot rows `(iteration, port, c, d)`.
    pub fn write_snapshots_csv<W: Write>(&self, w: W) -> csv::Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["iteration", "port", "c", "d"])?;
        for (it, s) in &self.snapshots {
            for i in 0..s.len() {
                wtr.serialize((it, i, s.c[i], s.d[i]))?;
            }
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Iterates from `init` (zeros by default) until the stopping rule holds.
///
/// The update residual `‖d[n] − d[n−1]‖∞` must stay within `tol` for the
/// schedule's window and the stationarity residual must also be within
/// `tol` at the final tick.
pub fn run(sg: &SystemGraph, schedule: &Schedule, init: Option<StateVector>) -> Result<(StateVector, Trace)> {
    let n = sg.n();
    schedule.validate(n)?;
    let mut state = init.unwrap_or_else(|| StateVector::zeros(n));
    if state.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: state.len() });
    }
    let window = schedule.window(&sg.delay_ports);
    let mut rows = Vec::new();
    let mut snapshots = Vec::new();
    let mut streak = 0;
    let mut status = RunStatus::MaxIters;
    for tick in 1..=schedule.max_iters {
        let next = step(sg, &state, schedule, tick)?;
        let residual = next
            .d
            .iter()
            .zip(&state.d)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let stat = stationarity_residual(sg, &next);
        rows.push(TraceRow {
            iteration: tick,
            residual,
            stationarity_residual: stat,
            conservation_residual: next.pseudopower(),
        });
        state = next;
        if let Some(stride) = schedule.snapshot_stride {
            if stride > 0 && tick % stride == 0 {
                snapshots.push((tick, state.clone()));
            }
        }
        if state.d.iter().any(|v| v.abs() > DIVERGENCE_BOUND) {
            status = RunStatus::Diverged;
            break;
        }
        streak = if residual <= schedule.tol { streak + 1 } else { 0 };
        if streak >= window && stat <= schedule.tol {
            status = RunStatus::Converged;
            break;
        }
    }
    Ok((state, Trace { rows, snapshots, status }))
}

/// Transformed and untransformed stationarity residuals, `∞`-norms.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedPointReport {
    /// `‖G_ℓ c − d‖` per LI block, before reduction.
    pub li_transformed: Vec<f64>,
    /// `‖m_k(d) − c‖` per CR block, sources included.
    pub cr_transformed: Vec<f64>,
    /// `‖a_o − A a_i‖` per LI block.
    pub primal_feasibility: Vec<f64>,
    /// `‖b_i + Aᵀ b_o‖` per LI block.
    pub dual_feasibility: Vec<f64>,
    /// `max(‖a − f(y)‖, ‖b − g(y)‖)` per CR block where `y` is recoverable.
    pub cr_untransformed: Vec<Option<f64>>,
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

impl FixedPointReport {
    pub fn max_transformed(&self) -> f64 {
        max_of(&self.li_transformed).max(max_of(&self.cr_transformed))
    }

    pub fn max_untransformed(&self) -> f64 {
        let cr = self.cr_untransformed.iter().flatten().copied().fold(0.0, f64::max);
        max_of(&self.primal_feasibility).max(max_of(&self.dual_feasibility)).max(cr)
    }

    pub fn max_residual(&self) -> f64 {
        self.max_transformed().max(self.max_untransformed())
    }

    pub fn passes(&self, bound: f64) -> bool {
        let all = self
            .li_transformed
            .iter()
            .chain(&self.cr_transformed)
            .chain(&self.primal_feasibility)
            .chain(&self.dual_feasibility)
            .chain(self.cr_untransformed.iter().flatten());
        all.clone().all(|v| v.is_finite()) && self.max_residual() <= bound
    }
}

pub fn verify_fixed_point(sg: &SystemGraph, state: &StateVector) -> Result<FixedPointReport> {
    let n = sg.n();
    if state.len() != n {
        return Err(Error::LengthMismatch { expected: n, got: state.len() });
    }
    let part = &sg.problem.partition;
    let li_transformed = sg
        .scattering
        .iter()
        .zip(&part.li_blocks)
        .map(|(sb, ports)| (&sb.g_matrix * gather(&state.c, ports) - gather(&state.d, ports)).amax())
        .collect();
    let cr_transformed = sg
        .cr_maps
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let idx = &part.cr_blocks[k];
            let d: Vec<f64> = idx.iter().map(|&i| state.d[i]).collect();
            (DVector::from_vec(m.eval(&d)) - gather(&state.c, idx)).amax()
        })
        .collect();
    let (a, b) = inverse_transform(state, &sg.convention)?;
    let mut primal_feasibility = Vec::new();
    let mut dual_feasibility = Vec::new();
    for (l, li) in sg.problem.lis.iter().enumerate() {
        let ai = gather(&a, part.li_inputs(l));
        let ao = gather(&a, part.li_outputs(l));
        let bi = gather(&b, part.li_inputs(l));
        let bo = gather(&b, part.li_outputs(l));
        primal_feasibility.push((ao - &li.a_matrix * ai).amax());
        dual_feasibility.push((bi + li.a_matrix.transpose() * bo).amax());
    }
    let ys = recover_parameters(sg, state);
    let cr_untransformed = ys
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let y = y.as_ref()?;
            let cr = sg.problem.crs[k].canonical(y.len())?;
            let idx = &part.cr_blocks[k];
            let f = cr.eval_f(y);
            let g = cr.eval_g(y);
            Some(idx.iter().enumerate().fold(0.0f64, |acc, (j, &i)| {
                acc.max((a[i] - f[j]).abs()).max((b[i] - g[j]).abs())
            }))
        })
        .collect();
    Ok(FixedPointReport {
        li_transformed,
        cr_transformed,
        primal_feasibility,
        dual_feasibility,
        cr_untransformed,
    })
}
