//! Primal/dual recovery at a fixed point and stationarity diagnostics.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::assembly::{gather, SystemGraph};
use crate::error::Result;
use crate::executor::{verify_fixed_point, FixedPointReport};
use crate::partition::{inverse_transform, StateVector};
use crate::problem::Problem;

/// Internal parameters per CR block, where the block's map can invert its
/// parametrization.
pub fn recover_parameters(sg: &SystemGraph, state: &StateVector) -> Vec<Option<Vec<f64>>> {
    sg.cr_maps
        .iter()
        .enumerate()
        .map(|(k, m)| {
            let d: Vec<f64> = sg.problem.cr_indices(k).iter().map(|&i| state.d[i]).collect();
            m.parameter(&d).filter(|y| y.iter().all(|v| v.is_finite()))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Solution {
    pub a_star: Vec<f64>,
    pub b_star: Vec<f64>,
    /// Per CR block.
    pub y_star: Vec<Option<Vec<f64>>>,
    /// `Σ Q_k(y_k)`, when every block's parameter is known.
    pub primal_cost: Option<f64>,
    /// `−Σ R_k(y_k)`.
    pub dual_cost: Option<f64>,
    pub gap: Option<f64>,
    /// `max ‖a_o − A a_i‖∞` over LI blocks.
    pub primal_residual: f64,
    /// `max ‖b_i + Aᵀ b_o‖∞` over LI blocks.
    pub dual_residual: f64,
}

impl Solution {
    /// `y★` in global index order, when every block's parameter is known.
    pub fn y_global(&self, p: &Problem) -> Option<Vec<f64>> {
        let mut y = vec![0.0; p.n()];
        for (k, yk) in self.y_star.iter().enumerate() {
            for (&i, &v) in p.cr_indices(k).iter().zip(yk.as_ref()?) {
                y[i] = v;
            }
        }
        Some(y)
    }
}

fn feasibility(p: &Problem, a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let part = &p.partition;
    p.lis
        .iter()
        .enumerate()
        .map(|(l, li)| {
            let ai = gather(a, part.li_inputs(l));
            let ao = gather(a, part.li_outputs(l));
            let bi = gather(b, part.li_inputs(l));
            let bo = gather(b, part.li_outputs(l));
            ((ao - &li.a_matrix * ai).amax(), (bi + li.a_matrix.transpose() * bo).amax())
        })
        .unzip()
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(0.0, f64::max)
}

pub fn recover(sg: &SystemGraph, state: &StateVector) -> Result<Solution> {
    let (a, b) = inverse_transform(state, &sg.convention)?;
    let y_star = recover_parameters(sg, state);
    let (pf, df) = feasibility(&sg.problem, &a, &b);
    let mut sol = Solution {
        a_star: a,
        b_star: b,
        y_star,
        primal_cost: None,
        dual_cost: None,
        gap: None,
        primal_residual: max_of(&pf),
        dual_residual: max_of(&df),
    };
    if let Some(y) = sol.y_global(&sg.problem) {
        let primal = sg.problem.eval_primal_cost(&y).ok();
        let dual = sg.problem.eval_dual_cost(&y).ok();
        sol.primal_cost = primal;
        sol.dual_cost = dual;
        sol.gap = primal.zip(dual).map(|(p, d)| p - d);
    }
    Ok(sol)
}

pub const FLATNESS_DIRECTIONS: usize = 32;
pub const FLATNESS_STEPS: [f64; 4] = [1e-2, 1e-3, 1e-4, 1e-5];
pub const FLATNESS_MIN_SLOPE: f64 = 1.9;

/// Cost change along random feasible directions.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatnessReport {
    /// Fitted log-log slope per direction; `None` when the change stays at
    /// the rounding floor for all but one step.
    pub slopes: Vec<Option<f64>>,
    /// Dimension of the feasible direction space.
    pub null_dim: usize,
}

impl FlatnessReport {
    pub fn min_slope(&self) -> Option<f64> {
        self.slopes.iter().flatten().copied().reduce(f64::min)
    }

    pub fn passed(&self) -> bool {
        self.min_slope().is_none_or(|s| s >= FLATNESS_MIN_SLOPE)
    }
}

/// Rows `A a_i − a_o` of every LI block, over global indices.
pub fn constraint_matrix(p: &Problem) -> DMatrix<f64> {
    let part = &p.partition;
    let rows: usize = p.lis.iter().map(|li| li.n_out()).sum();
    let mut c = DMatrix::zeros(rows, p.n());
    let mut r0 = 0;
    for (l, li) in p.lis.iter().enumerate() {
        for r in 0..li.n_out() {
            for (j, &i) in part.li_inputs(l).iter().enumerate() {
                c[(r0 + r, i)] += li.a_matrix[(r, j)];
            }
            c[(r0 + r, part.li_outputs(l)[r])] -= 1.0;
        }
        r0 += li.n_out();
    }
    c
}

/// Orthonormal basis of the null space of `m`.
pub fn null_space(m: &DMatrix<f64>, n: usize) -> DMatrix<f64> {
    if m.nrows() == 0 {
        return DMatrix::identity(n, n);
    }
    let gram = m.transpose() * m;
    let eig = SymmetricEigen::new(gram);
    let top = eig.eigenvalues.amax().max(1.0);
    let keep: Vec<usize> = (0..n).filter(|&j| eig.eigenvalues[j] <= 1e-12 * top).collect();
    DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])])
}

/// Probes `|P(y★ + tδ) − P(y★)|` for `δ` in the null space of `C J_f(y★)`.
pub fn flatness_probe(p: &Problem, y: &[f64], seed: u64) -> Result<FlatnessReport> {
    let n = p.n();
    let mut jf = DMatrix::zeros(n, n);
    for (k, el) in p.crs.iter().enumerate() {
        let idx = p.cr_indices(k);
        let cr = el.canonical(idx.len()).ok_or(crate::Error::NotCanonical { block: k })?;
        let yk: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
        let jk = cr.jacobian(&yk);
        for (r, &i) in idx.iter().enumerate() {
            for (s, &j) in idx.iter().enumerate() {
                jf[(i, j)] = jk[(r, s)];
            }
        }
    }
    let z = null_space(&(constraint_matrix(p) * jf), n);
    let base = p.eval_primal_cost(y)?;
    let floor = 1e-12 * (1.0 + base.abs());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut slopes = Vec::with_capacity(FLATNESS_DIRECTIONS);
    if z.ncols() == 0 {
        return Ok(FlatnessReport { slopes, null_dim: 0 });
    }
    for _ in 0..FLATNESS_DIRECTIONS {
        let w = DVector::from_fn(z.ncols(), |_, _| StandardNormal.sample(&mut rng));
        let dir = &z * w;
        let dir = &dir / dir.norm();
        let mut pts = Vec::new();
        for &t in &FLATNESS_STEPS {
            let moved: Vec<f64> = y.iter().zip(dir.iter()).map(|(a, b)| a + t * b).collect();
            let delta = (p.eval_primal_cost(&moved)? - base).abs();
            if delta > floor {
                pts.push((t.ln(), delta.ln()));
            }
        }
        slopes.push(if pts.len() < 2 { None } else { Some(fit_slope(&pts)) });
    }
    Ok(FlatnessReport { slopes, null_dim: z.ncols() })
}

fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}

#[derive(Debug, Clone, PartialEq)]
pub struct StationarityReport {
    pub primal_feasibility: Vec<f64>,
    pub dual_feasibility: Vec<f64>,
    /// `‖a_k − f_k(y_k)‖∞` per CR block.
    pub cr_primal: Vec<Option<f64>>,
    /// `‖b_k − g_k(y_k)‖∞` per CR block.
    pub cr_dual: Vec<Option<f64>>,
    pub flatness: Option<FlatnessReport>,
}

impl StationarityReport {
    pub fn max_residual(&self) -> f64 {
        let cr = self.cr_primal.iter().chain(&self.cr_dual).flatten().copied().fold(0.0, f64::max);
        max_of(&self.primal_feasibility).max(max_of(&self.dual_feasibility)).max(cr)
    }
}

pub fn stationarity_report(sol: &Solution, p: &Problem) -> Result<StationarityReport> {
    let (primal_feasibility, dual_feasibility) = feasibility(p, &sol.a_star, &sol.b_star);
    let mut cr_primal = Vec::new();
    let mut cr_dual = Vec::new();
    for (k, el) in p.crs.iter().enumerate() {
        let idx = p.cr_indices(k);
        let pair = sol.y_star[k].as_ref().zip(el.canonical(idx.len())).map(|(y, cr)| {
            let f = cr.eval_f(y);
            let g = cr.eval_g(y);
            let rp = idx.iter().zip(&f).map(|(&i, v)| (sol.a_star[i] - v).abs()).fold(0.0, f64::max);
            let rd = idx.iter().zip(&g).map(|(&i, v)| (sol.b_star[i] - v).abs()).fold(0.0, f64::max);
            (rp, rd)
        });
        cr_primal.push(pair.map(|x| x.0));
        cr_dual.push(pair.map(|x| x.1));
    }
    let flatness = match sol.y_global(p) {
        Some(y) => Some(flatness_probe(p, &y, 0xf1a7)?),
        None => None,
    };
    Ok(StationarityReport {
        primal_feasibility,
        dual_feasibility,
        cr_primal,
        cr_dual,
        flatness,
    })
}

/// Both residual reports for a state.
pub fn diagnose(sg: &SystemGraph, state: &StateVector) -> Result<(Solution, FixedPointReport, StationarityReport)> {
    let sol = recover(sg, state)?;
    let fp = verify_fixed_point(sg, state)?;
    let st = stationarity_report(&sol, &sg.problem)?;
    Ok((sol, fp, st))
}
