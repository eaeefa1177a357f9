//! Reference solvers that share no code with the scattering path.
//!
//! `kkt_solve` handles separable quadratics under linear equality
//! constraints by a dense LU solve of the first-order system. `grid_solve`
//! brute-forces small nonsmooth problems over a parametrization of the
//! constraint set.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::catalog::CatalogCr;
use crate::error::{Error, Result};
use crate::problem::{CrElement, Problem};

/// `min Σ q_i a_i²/2 + λ_i a_i` subject to `C a = r`.
#[derive(Debug, Clone, PartialEq)]
pub struct QuadraticProblem {
    pub q: Vec<f64>,
    pub lin: Vec<f64>,
    pub constraints: DMatrix<f64>,
    pub rhs: DVector<f64>,
    /// Leading rows of `constraints` that come from LI blocks. Their
    /// multipliers give the dual variables.
    pub li_rows: usize,
}

/// LI rows `A a_i − a_o = 0` in global indices.
fn li_rows(p: &Problem) -> DMatrix<f64> {
    let part = &p.partition;
    let m: usize = p.lis.iter().map(|li| li.n_out()).sum();
    let mut c = DMatrix::zeros(m, p.n());
    let mut row = 0;
    for (l, li) in p.lis.iter().enumerate() {
        let ins = part.li_inputs(l);
        for (r, &o) in part.li_outputs(l).iter().enumerate() {
            for (j, &i) in ins.iter().enumerate() {
                c[(row, i)] += li.a_matrix[(r, j)];
            }
            c[(row, o)] -= 1.0;
            row += 1;
        }
    }
    c
}

/// Pins `a_i = v` from constant and zero elements.
fn pins(p: &Problem) -> Vec<(usize, f64)> {
    let mut out = Vec::new();
    for (k, el) in p.crs.iter().enumerate() {
        let v = match el {
            CrElement::Catalog(CatalogCr::Constant { value }) => *value,
            CrElement::Catalog(CatalogCr::Zero) => 0.0,
            _ => continue,
        };
        out.extend(p.cr_indices(k).iter().map(|&i| (i, v)));
    }
    out
}

fn stack(c: DMatrix<f64>, pins: &[(usize, f64)], n: usize) -> (DMatrix<f64>, DVector<f64>) {
    let m = c.nrows();
    let mut full = DMatrix::zeros(m + pins.len(), n);
    full.view_mut((0, 0), (m, n)).copy_from(&c);
    let mut rhs = DVector::zeros(m + pins.len());
    for (r, &(i, v)) in pins.iter().enumerate() {
        full[(m + r, i)] = 1.0;
        rhs[m + r] = v;
    }
    (full, rhs)
}

impl QuadraticProblem {
    /// Extracts the quadratic data of a problem built from quadratic,
    /// linear, constant and zero elements.
    pub fn from_problem(p: &Problem) -> Result<Self> {
        let n = p.n();
        let mut q = vec![0.0; n];
        let mut lin = vec![0.0; n];
        for (k, el) in p.crs.iter().enumerate() {
            let (qk, lk) = match el {
                CrElement::Catalog(CatalogCr::Quadratic { q, linear }) => (*q, *linear),
                CrElement::Catalog(CatalogCr::Linear { slope }) => (0.0, *slope),
                CrElement::Catalog(CatalogCr::Constant { .. } | CatalogCr::Zero) => (0.0, 0.0),
                _ => return Err(Error::Unsupported(format!("CR block {k} is not quadratic"))),
            };
            for &i in p.cr_indices(k) {
                q[i] = qk;
                lin[i] = lk;
            }
        }
        let c = li_rows(p);
        let li_rows = c.nrows();
        let (constraints, rhs) = stack(c, &pins(p), n);
        Ok(Self { q, lin, constraints, rhs, li_rows })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KktSolution {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub multipliers: Vec<f64>,
}

/// Solves `[H Cᵀ; C 0] [a; ν] = [−λ; r]`.
///
/// With rows `A a_i − a_o` the LI multipliers `ν` give `b_o = ν` and
/// `b_i = −Aᵀ ν`, so `b = −C_LIᵀ ν_LI`.
pub fn kkt_solve(qp: &QuadraticProblem) -> Result<KktSolution> {
    let n = qp.q.len();
    let m = qp.constraints.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    for i in 0..n {
        k[(i, i)] = qp.q[i];
    }
    k.view_mut((0, n), (n, m)).copy_from(&qp.constraints.transpose());
    k.view_mut((n, 0), (m, n)).copy_from(&qp.constraints);
    let mut rhs = DVector::zeros(n + m);
    for i in 0..n {
        rhs[i] = -qp.lin[i];
    }
    rhs.rows_mut(n, m).copy_from(&qp.rhs);
    let sv = k.clone().svd(false, false).singular_values;
    if sv.min() <= 1e-12 * sv.max().max(1.0) {
        return Err(Error::SingularKkt);
    }
    let sol = k.lu().solve(&rhs).ok_or(Error::SingularKkt)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return Err(Error::SingularKkt);
    }
    let a: Vec<f64> = sol.rows(0, n).iter().copied().collect();
    let nu = sol.rows(n, qp.li_rows).into_owned();
    let b = -(qp.constraints.rows(0, qp.li_rows).transpose() * &nu);
    Ok(KktSolution {
        a,
        b: b.iter().copied().collect(),
        multipliers: sol.rows(n, m).iter().copied().collect(),
    })
}

pub type Objective = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

/// Box-bounded search problem of dimension at most 3. The objective returns
/// `+∞` at infeasible points.
#[derive(Clone)]
pub struct GridProblem {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub objective: Objective,
    /// Maps a search point `z` to decision variables `a`.
    pub lift: Option<(DVector<f64>, DMatrix<f64>)>,
}

impl GridProblem {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>, objective: impl Fn(&[f64]) -> f64 + Send + Sync + 'static) -> Self {
        Self { lo, hi, objective: Arc::new(objective), lift: None }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    /// Parametrizes `{a : C a = r}` as `a₀ + Z z` and searches `z` in
    /// `[−radius, radius]^k`. Pinned elements are enforced by the
    /// constraints, and every other block contributes its reduced cost.
    pub fn from_problem(p: &Problem, radius: f64) -> Result<Self> {
        let n = p.n();
        let pinned: Vec<(usize, f64)> = pins(p);
        let (c, r) = stack(li_rows(p), &pinned, n);
        let (a0, z) = if c.nrows() == 0 {
            (DVector::zeros(n), DMatrix::identity(n, n))
        } else {
            let svd = c.clone().svd(true, true);
            let a0 = svd
                .solve(&r, 1e-12)
                .map_err(|e| Error::Unsupported(e.to_string()))?;
            let eig = SymmetricEigen::new(c.transpose() * &c);
            let top = eig.eigenvalues.amax().max(1.0);
            let keep: Vec<usize> = (0..n).filter(|&j| eig.eigenvalues[j] <= 1e-12 * top).collect();
            (a0, DMatrix::from_fn(n, keep.len(), |i, j| eig.eigenvectors[(i, keep[j])]))
        };
        if z.ncols() > 3 {
            return Err(Error::Unsupported(format!("{}-dimensional search space", z.ncols())));
        }
        let mut terms: Vec<(usize, CatalogCr)> = Vec::new();
        for (k, el) in p.crs.iter().enumerate() {
            match el {
                CrElement::Catalog(CatalogCr::Constant { .. } | CatalogCr::Zero) => {}
                CrElement::Catalog(c) => terms.extend(p.cr_indices(k).iter().map(|&i| (i, *c))),
                _ => return Err(Error::Unsupported(format!("CR block {k} has no catalog reduced form"))),
            }
        }
        let (a0c, zc) = (a0.clone(), z.clone());
        let objective = move |x: &[f64]| {
            let a = &a0c + &zc * DVector::from_column_slice(x);
            terms.iter().map(|&(i, el)| el.reduced_cost(a[i])).sum()
        };
        let k = z.ncols();
        Ok(Self {
            lo: vec![-radius; k],
            hi: vec![radius; k],
            objective: Arc::new(objective),
            lift: Some((a0, z)),
        })
    }

    /// Decision variables for a search point.
    pub fn lift(&self, z: &[f64]) -> Vec<f64> {
        match &self.lift {
            Some((a0, m)) => (a0 + m * DVector::from_column_slice(z)).iter().copied().collect(),
            None => z.to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridSolution {
    pub z: Vec<f64>,
    pub a: Vec<f64>,
    pub value: f64,
}

/// Full grids up to this many points; larger searches zoom in.
pub const FULL_GRID_POINTS: f64 = 2e6;

fn scan(gp: &GridProblem, lo: &[f64], hi: &[f64], counts: &[usize]) -> (Vec<f64>, f64) {
    let k = lo.len();
    let total: usize = counts.iter().product();
    let mut best = (vec![0.0; k], f64::INFINITY);
    let mut x = vec![0.0; k];
    for flat in 0..total {
        let mut rem = flat;
        for j in 0..k {
            let i = rem % counts[j];
            rem /= counts[j];
            x[j] = if counts[j] == 1 {
                0.5 * (lo[j] + hi[j])
            } else {
                lo[j] + (hi[j] - lo[j]) * i as f64 / (counts[j] - 1) as f64
            };
        }
        let v = (gp.objective)(&x);
        if v < best.1 {
            best = (x.clone(), v);
        }
    }
    best
}

/// Best grid point at spacing `resolution`.
pub fn grid_solve(gp: &GridProblem, resolution: f64) -> GridSolution {
    let k = gp.dim();
    let counts: Vec<usize> = (0..k)
        .map(|j| ((gp.hi[j] - gp.lo[j]) / resolution).ceil() as usize + 1)
        .collect();
    let total: f64 = counts.iter().map(|&c| c as f64).product();
    let (z, value) = if total <= FULL_GRID_POINTS {
        scan(gp, &gp.lo, &gp.hi, &counts)
    } else {
        // zoom: coarse scan, shrink to two cells around the best point
        let per = if k <= 2 { 201 } else { 101 };
        let (mut lo, mut hi) = (gp.lo.clone(), gp.hi.clone());
        loop {
            let counts = vec![per; k];
            let (best, v) = scan(gp, &lo, &hi, &counts);
            let cell = (0..k).map(|j| (hi[j] - lo[j]) / (per - 1) as f64).fold(0.0, f64::max);
            if cell <= resolution || !v.is_finite() {
                break (best, v);
            }
            for j in 0..k {
                let w = 2.0 * (hi[j] - lo[j]) / (per - 1) as f64;
                lo[j] = (best[j] - w).max(gp.lo[j]);
                hi[j] = (best[j] + w).min(gp.hi[j]);
            }
        }
    };
    GridSolution { a: gp.lift(&z), z, value }
}
