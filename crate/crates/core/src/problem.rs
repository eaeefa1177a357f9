//! Canonical- and reduced-form problem statements, the canonical dual, and
//! cost evaluation.
//!
//! A canonical block is a triple `(f, g, Q)` over an internal parameter `y`
//! with `∇Q(y) = J_f(y)ᵀ g(y)`; the primal value is `a = f(y)` and the dual
//! value is `b = g(y)`. A reduced block states the same relation directly in
//! `a` as a cost `Q̂` over a feasible set `𝒜`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::catalog::CatalogCr;
use crate::error::{Error, Result};
use crate::partition::IndexPartition;

pub type VecFn = Arc<dyn Fn(&[f64]) -> Vec<f64> + Send + Sync>;
pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
pub type MatFn = Arc<dyn Fn(&[f64]) -> DMatrix<f64> + Send + Sync>;

/// Central-difference step used throughout.
pub fn fd_step(y: f64) -> f64 {
    1e-6 * (1.0 + y.abs())
}

#[derive(Clone)]
pub struct CanonicalCr {
    pub dim: usize,
    pub f: VecFn,
    pub g: VecFn,
    pub q: ScalarFn,
    pub jacobian_f: Option<MatFn>,
    /// Coordinate `j` of `f` and `g` depends only on `y_j`.
    pub separable: bool,
}

impl fmt::Debug for CanonicalCr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CanonicalCr")
            .field("dim", &self.dim)
            .field("separable", &self.separable)
            .field("jacobian_f", &self.jacobian_f.is_some())
            .finish_non_exhaustive()
    }
}

impl CanonicalCr {
    pub fn new(
        dim: usize,
        f: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        g: impl Fn(&[f64]) -> Vec<f64> + Send + Sync + 'static,
        q: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            dim,
            f: Arc::new(f),
            g: Arc::new(g),
            q: Arc::new(q),
            jacobian_f: None,
            separable: dim == 1,
        }
    }

    /// Scalar block from scalar functions.
    pub fn scalar(
        f: impl Fn(f64) -> f64 + Send + Sync + 'static,
        g: impl Fn(f64) -> f64 + Send + Sync + 'static,
        q: impl Fn(f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self::new(1, move |y| vec![f(y[0])], move |y| vec![g(y[0])], move |y| q(y[0]))
    }

    pub fn with_jacobian(
        mut self,
        j: impl Fn(&[f64]) -> DMatrix<f64> + Send + Sync + 'static,
    ) -> Self {
        self.jacobian_f = Some(Arc::new(j));
        self
    }

    pub fn separable(mut self) -> Self {
        self.separable = true;
        self
    }

    /// Applies a catalog element coordinatewise.
    pub fn from_catalog(el: CatalogCr, dim: usize) -> Self {
        let mut cr = Self::new(
            dim,
            move |y| y.iter().map(|&v| el.f(v)).collect(),
            move |y| y.iter().map(|&v| el.g(v)).collect(),
            move |y| y.iter().map(|&v| el.cost(v)).sum(),
        )
        .with_jacobian(move |y| {
            DMatrix::from_diagonal(&DVector::from_iterator(y.len(), y.iter().map(|&v| el.f_prime(v))))
        });
        cr.separable = true;
        cr
    }

    pub fn eval_f(&self, y: &[f64]) -> Vec<f64> {
        (self.f)(y)
    }

    pub fn eval_g(&self, y: &[f64]) -> Vec<f64> {
        (self.g)(y)
    }

    pub fn eval_q(&self, y: &[f64]) -> f64 {
        (self.q)(y)
    }

    /// Dual cost `R(y) = ⟨f(y), g(y)⟩ − Q(y)`.
    pub fn eval_r(&self, y: &[f64]) -> f64 {
        let f = self.eval_f(y);
        let g = self.eval_g(y);
        dot(&f, &g) - self.eval_q(y)
    }

    /// Closed-form Jacobian when present, central differences otherwise.
    pub fn jacobian(&self, y: &[f64]) -> DMatrix<f64> {
        if let Some(j) = &self.jacobian_f {
            return j(y);
        }
        let n = self.dim;
        let mut jac = DMatrix::zeros(n, n);
        let mut yp = y.to_vec();
        for col in 0..n {
            let h = fd_step(y[col]);
            yp[col] = y[col] + h;
            let fp = self.eval_f(&yp);
            yp[col] = y[col] - h;
            let fm = self.eval_f(&yp);
            yp[col] = y[col];
            for row in 0..n {
                jac[(row, col)] = (fp[row] - fm[row]) / (2.0 * h);
            }
        }
        jac
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// One coordinate interval with open/closed ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_open: bool,
    pub hi_open: bool,
}

impl Interval {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_open: false,
            hi_open: false,
        }
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_open: true,
            hi_open: true,
        }
    }

    pub fn contains(&self, x: f64) -> bool {
        let above = if self.lo_open { x > self.lo } else { x >= self.lo };
        let below = if self.hi_open { x < self.hi } else { x <= self.hi };
        above && below
    }

    fn distance(&self, x: f64) -> f64 {
        if x < self.lo {
            self.lo - x
        } else if x > self.hi {
            x - self.hi
        } else {
            0.0
        }
    }
}

/// Feasible sets supported by reduced-form blocks. Projections go onto the
/// closure of the set.
#[derive(Debug, Clone, PartialEq)]
pub enum FeasibleSet {
    Whole,
    Box { lo: Vec<f64>, hi: Vec<f64> },
    /// `{ a : ⟨normal, a⟩ ≤ offset }`.
    HalfSpace { normal: Vec<f64>, offset: f64 },
    /// `{ a : matrix·a = rhs }`; rows must be independent.
    Affine { matrix: DMatrix<f64>, rhs: DVector<f64> },
    /// Finite union of intervals per coordinate.
    Intervals(Vec<Vec<Interval>>),
}

impl FeasibleSet {
    pub fn contains(&self, a: &[f64], tol: f64) -> bool {
        match self {
            FeasibleSet::Whole => true,
            FeasibleSet::Box { lo, hi } => a
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(&x, (&l, &h))| x >= l - tol && x <= h + tol),
            FeasibleSet::HalfSpace { normal, offset } => dot(normal, a) <= offset + tol,
            FeasibleSet::Affine { matrix, rhs } => {
                let r = matrix * DVector::from_column_slice(a) - rhs;
                r.amax() <= tol
            }
            FeasibleSet::Intervals(per) => a.iter().zip(per).all(|(&x, ivs)| {
                ivs.iter().any(|iv| {
                    if tol == 0.0 {
                        iv.contains(x)
                    } else {
                        iv.distance(x) <= tol
                    }
                })
            }),
        }
    }

    pub fn project(&self, a: &[f64]) -> Vec<f64> {
        match self {
            FeasibleSet::Whole => a.to_vec(),
            FeasibleSet::Box { lo, hi } => a
                .iter()
                .zip(lo.iter().zip(hi))
                .map(|(&x, (&l, &h))| x.clamp(l, h))
                .collect(),
            FeasibleSet::HalfSpace { normal, offset } => {
                let excess = dot(normal, a) - offset;
                if excess <= 0.0 {
                    return a.to_vec();
                }
                let nn = dot(normal, normal);
                a.iter()
                    .zip(normal)
                    .map(|(x, n)| x - excess / nn * n)
                    .collect()
            }
            FeasibleSet::Affine { matrix, rhs } => {
                let x = DVector::from_column_slice(a);
                let r = matrix * &x - rhs;
                let gram = matrix * matrix.transpose();
                match gram.lu().solve(&r) {
                    Some(w) => (x - matrix.transpose() * w).as_slice().to_vec(),
                    None => a.to_vec(),
                }
            }
            FeasibleSet::Intervals(per) => a
                .iter()
                .zip(per)
                .map(|(&x, ivs)| {
                    ivs.iter()
                        .map(|iv| x.clamp(iv.lo, iv.hi))
                        .min_by(|p, q| (p - x).abs().total_cmp(&(q - x).abs()))
                        .unwrap_or(x)
                })
                .collect(),
        }
    }
}

#[derive(Clone)]
pub struct ReducedCr {
    pub dim: usize,
    pub q_hat: ScalarFn,
    pub feasible: FeasibleSet,
}

impl fmt::Debug for ReducedCr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReducedCr")
            .field("dim", &self.dim)
            .field("feasible", &self.feasible)
            .finish_non_exhaustive()
    }
}

impl ReducedCr {
    pub fn new(
        dim: usize,
        q_hat: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
        feasible: FeasibleSet,
    ) -> Self {
        Self {
            dim,
            q_hat: Arc::new(q_hat),
            feasible,
        }
    }

    /// Reduced primal form of a catalog element.
    pub fn from_catalog(el: CatalogCr, dim: usize) -> Self {
        let feasible = match el {
            CatalogCr::Constant { value } => FeasibleSet::Box {
                lo: vec![value; dim],
                hi: vec![value; dim],
            },
            CatalogCr::Zero => FeasibleSet::Box {
                lo: vec![0.0; dim],
                hi: vec![0.0; dim],
            },
            CatalogCr::NonNegative => FeasibleSet::Box {
                lo: vec![0.0; dim],
                hi: vec![f64::INFINITY; dim],
            },
            CatalogCr::Box { lo, hi } => FeasibleSet::Box {
                lo: vec![lo; dim],
                hi: vec![hi; dim],
            },
            _ => FeasibleSet::Whole,
        };
        let cost = move |a: &[f64]| -> f64 {
            a.iter()
                .map(|&x| match el {
                    CatalogCr::Quadratic { .. }
                    | CatalogCr::Linear { .. }
                    | CatalogCr::AbsoluteValue { .. } => el.reduced_cost(x),
                    _ => 0.0,
                })
                .sum()
        };
        Self::new(dim, cost, feasible)
    }

    pub fn eval(&self, a: &[f64]) -> f64 {
        (self.q_hat)(a)
    }
}

/// The canonical dual of a block: `R = ⟨f, g⟩ − Q`, with a reduced form
/// `(R̂, ℬ)` when one is known.
#[derive(Clone, Debug)]
pub struct DualCr {
    pub dim: usize,
    pub canonical: CanonicalCr,
    pub reduced: Option<ReducedCr>,
}

impl DualCr {
    pub fn eval_r(&self, y: &[f64]) -> f64 {
        self.canonical.eval_q(y)
    }
}

/// Primal linear constraint `a_out = A a_in` (dual: `b_in = −Aᵀ b_out`).
#[derive(Debug, Clone, PartialEq)]
pub struct LiBlock {
    pub a_matrix: DMatrix<f64>,
}

impl LiBlock {
    pub fn new(a_matrix: DMatrix<f64>) -> Self {
        Self { a_matrix }
    }

    pub fn n_in(&self) -> usize {
        self.a_matrix.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.a_matrix.nrows()
    }

    pub fn validate(&self, inputs: usize, outputs: usize) -> Result<()> {
        if self.a_matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::BadParams("LI matrix has non-finite entries".into()));
        }
        if self.n_in() != inputs || self.n_out() != outputs {
            return Err(Error::DimMismatch(format!(
                "LI matrix is {}x{} but ports are {outputs} outputs x {inputs} inputs",
                self.n_out(),
                self.n_in()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub enum CrElement {
    Catalog(CatalogCr),
    Canonical(CanonicalCr),
    Reduced(ReducedCr),
}

impl CrElement {
    /// Canonical data, when this block has a parametric representation.
    pub fn canonical(&self, dim: usize) -> Option<CanonicalCr> {
        match self {
            CrElement::Catalog(el) => Some(CanonicalCr::from_catalog(*el, dim)),
            CrElement::Canonical(cr) => Some(cr.clone()),
            CrElement::Reduced(_) => None,
        }
    }

    pub fn dim(&self) -> Option<usize> {
        match self {
            CrElement::Catalog(_) => None,
            CrElement::Canonical(cr) => Some(cr.dim),
            CrElement::Reduced(cr) => Some(cr.dim),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Problem {
    pub partition: IndexPartition,
    pub crs: Vec<CrElement>,
    pub lis: Vec<LiBlock>,
}

impl Problem {
    /// Builds and validates a problem from CR blocks `(indices, element)` and
    /// LI blocks `(inputs, outputs, block)`.
    pub fn new(
        n: usize,
        crs: Vec<(Vec<usize>, CrElement)>,
        lis: Vec<(Vec<usize>, Vec<usize>, LiBlock)>,
    ) -> Result<Self> {
        let mut cr_blocks = Vec::with_capacity(crs.len());
        let mut elements = Vec::with_capacity(crs.len());
        for (idx, el) in crs {
            cr_blocks.push(idx);
            elements.push(el);
        }
        let mut li_blocks = Vec::with_capacity(lis.len());
        let mut splits = Vec::with_capacity(lis.len());
        let mut blocks = Vec::with_capacity(lis.len());
        for (inputs, outputs, li) in lis {
            splits.push((inputs.len(), outputs.len()));
            li_blocks.push(inputs.into_iter().chain(outputs).collect());
            blocks.push(li);
        }
        let p = Self {
            partition: IndexPartition::new(n, cr_blocks, li_blocks, splits),
            crs: elements,
            lis: blocks,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        self.partition.validate()?;
        if self.crs.len() != self.partition.num_cr() || self.lis.len() != self.partition.num_li() {
            return Err(Error::DimMismatch("block count differs from partition".into()));
        }
        for (k, el) in self.crs.iter().enumerate() {
            let len = self.partition.cr_blocks[k].len();
            if let Some(dim) = el.dim() {
                if dim != len {
                    return Err(Error::DimMismatch(format!(
                        "CR block {k} has dimension {dim} but houses {len} indices"
                    )));
                }
            }
            if let CrElement::Catalog(c) = el {
                c.validate(false).map_err(|e| e.in_block(k))?;
            }
        }
        for (l, li) in self.lis.iter().enumerate() {
            let (i, o) = self.partition.li_io_split[l];
            li.validate(i, o)?;
        }
        Ok(())
    }

    pub fn n(&self) -> usize {
        self.partition.n_total
    }

    pub fn cr_indices(&self, k: usize) -> &[usize] {
        &self.partition.cr_blocks[k]
    }

    /// `Σ_k Q_k(y_k)` for canonical blocks, with `y` laid out in global index
    /// order.
    pub fn eval_primal_cost(&self, y: &[f64]) -> Result<f64> {
        self.sum_blocks(y, |cr, yk| cr.eval_q(yk))
    }

    /// `−Σ_k R_k(y_k)`.
    pub fn eval_dual_cost(&self, y: &[f64]) -> Result<f64> {
        Ok(-self.sum_blocks(y, |cr, yk| cr.eval_r(yk))?)
    }

    /// `Σ_k Q̂_k(a_k)` for a reduced-form statement; `+∞` when some block is
    /// infeasible.
    pub fn eval_reduced_primal_cost(&self, a: &[f64]) -> Result<f64> {
        self.check_len(a)?;
        let mut total = 0.0;
        for (k, el) in self.crs.iter().enumerate() {
            let ak: Vec<f64> = self.cr_indices(k).iter().map(|&i| a[i]).collect();
            let cost = match el {
                CrElement::Catalog(c) => ak.iter().map(|&x| c.reduced_cost(x)).sum(),
                CrElement::Reduced(r) => {
                    if r.feasible.contains(&ak, 0.0) {
                        r.eval(&ak)
                    } else {
                        f64::INFINITY
                    }
                }
                CrElement::Canonical(_) => return Err(Error::NotCanonical { block: k }),
            };
            total += cost;
        }
        Ok(total)
    }

    fn check_len(&self, v: &[f64]) -> Result<()> {
        if v.len() != self.n() {
            return Err(Error::DimMismatch(format!(
                "expected a length-{} vector, got {}",
                self.n(),
                v.len()
            )));
        }
        Ok(())
    }

    fn sum_blocks(&self, y: &[f64], f: impl Fn(&CanonicalCr, &[f64]) -> f64) -> Result<f64> {
        self.check_len(y)?;
        let mut total = 0.0;
        for (k, el) in self.crs.iter().enumerate() {
            let idx = self.cr_indices(k);
            let cr = el.canonical(idx.len()).ok_or(Error::NotCanonical { block: k })?;
            let yk: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
            total += f(&cr, &yk);
        }
        Ok(total)
    }
}

/// Dual block of a canonical block: `(f, g, Q) ↦ (g, f, R)`. The swap keeps
/// the gradient coupling, since `∇R = J_gᵀ f`.
pub fn dual_block(cr: &CanonicalCr) -> CanonicalCr {
    let f = cr.f.clone();
    let g = cr.g.clone();
    let inner = cr.clone();
    CanonicalCr {
        dim: cr.dim,
        f: g,
        g: f,
        q: Arc::new(move |y| inner.eval_r(y)),
        jacobian_f: None,
        separable: cr.separable,
    }
}

pub fn dual_cr(el: &CrElement, dim: usize) -> Option<DualCr> {
    let canonical = dual_block(&el.canonical(dim)?);
    let reduced = match el {
        CrElement::Catalog(c) => {
            let c = *c;
            let feasible = match c {
                CatalogCr::Quadratic { q: 0.0, linear } => FeasibleSet::Box {
                    lo: vec![linear; dim],
                    hi: vec![linear; dim],
                },
                CatalogCr::Linear { slope } => FeasibleSet::Box {
                    lo: vec![slope; dim],
                    hi: vec![slope; dim],
                },
                CatalogCr::AbsoluteValue { weight } => FeasibleSet::Box {
                    lo: vec![-weight; dim],
                    hi: vec![weight; dim],
                },
                CatalogCr::NonNegative => FeasibleSet::Box {
                    lo: vec![f64::NEG_INFINITY; dim],
                    hi: vec![0.0; dim],
                },
                // b > 0 needs a finite upper wall, b < 0 a finite lower wall
                CatalogCr::Box { lo, hi } => FeasibleSet::Box {
                    lo: vec![if lo.is_finite() { f64::NEG_INFINITY } else { 0.0 }; dim],
                    hi: vec![if hi.is_finite() { f64::INFINITY } else { 0.0 }; dim],
                },
                _ => FeasibleSet::Whole,
            };
            Some(ReducedCr::new(
                dim,
                move |b: &[f64]| {
                    b.iter()
                        .map(|&v| {
                            let r = c.reduced_dual_cost(v);
                            if r.is_finite() {
                                r
                            } else {
                                0.0
                            }
                        })
                        .sum()
                },
                feasible,
            ))
        }
        _ => None,
    };
    Some(DualCr {
        dim,
        canonical,
        reduced,
    })
}

/// Canonical dual problem: blocks `(g, f, R)` and constraints
/// `b_in = −Aᵀ b_out`, written with the roles of inputs and outputs swapped
/// so that it is again of the form `x_out = A' x_in` with `A' = −Aᵀ`.
pub fn build_dual(p: &Problem) -> Result<Problem> {
    let mut crs = Vec::with_capacity(p.crs.len());
    for (k, el) in p.crs.iter().enumerate() {
        let idx = p.cr_indices(k).to_vec();
        let cr = el.canonical(idx.len()).ok_or(Error::NotCanonical { block: k })?;
        crs.push((idx, CrElement::Canonical(dual_block(&cr))));
    }
    let lis = p
        .lis
        .iter()
        .enumerate()
        .map(|(l, li)| {
            let inputs = p.partition.li_outputs(l).to_vec();
            let outputs = p.partition.li_inputs(l).to_vec();
            (inputs, outputs, LiBlock::new(-li.a_matrix.transpose()))
        })
        .collect();
    Problem::new(p.n(), crs, lis)
}

#[derive(Debug, Clone)]
pub struct CouplingReport {
    /// Relative error `‖∇Q − J_fᵀ g‖ / max(1, ‖J_fᵀ g‖)` per sample.
    pub errors: Vec<f64>,
    pub tolerance: f64,
}

impl CouplingReport {
    pub fn passed(&self) -> bool {
        self.errors.iter().all(|&e| e <= self.tolerance)
    }

    pub fn max_error(&self) -> f64 {
        self.errors.iter().copied().fold(0.0, f64::max)
    }

    pub fn failures(&self) -> Vec<usize> {
        (0..self.errors.len())
            .filter(|&i| self.errors[i] > self.tolerance)
            .collect()
    }
}

/// Compares a central-difference gradient of `Q` with `J_fᵀ g` at each sample.
pub fn check_gradient_coupling(cr: &CanonicalCr, samples: &[Vec<f64>]) -> CouplingReport {
    let errors = samples
        .iter()
        .map(|y| {
            let n = cr.dim;
            let mut grad = vec![0.0; n];
            let mut yp = y.clone();
            for j in 0..n {
                let h = fd_step(y[j]);
                yp[j] = y[j] + h;
                let qp = cr.eval_q(&yp);
                yp[j] = y[j] - h;
                let qm = cr.eval_q(&yp);
                yp[j] = y[j];
                grad[j] = (qp - qm) / (2.0 * h);
            }
            let jt_g = cr.jacobian(y).transpose() * DVector::from_vec(cr.eval_g(y));
            let diff: f64 = grad
                .iter()
                .zip(jt_g.iter())
                .map(|(a, b)| (a - b).powi(2))
                .sum::<f64>()
                .sqrt();
            diff / jt_g.norm().max(1.0)
        })
        .collect();
    CouplingReport {
        errors,
        tolerance: 1e-5,
    }
}

/// Sweep used by [`reduce_form`].
#[derive(Debug, Clone, Copy)]
pub struct Sweep {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for Sweep {
    fn default() -> Self {
        Self {
            lo: -10.0,
            hi: 10.0,
            points: 1000,
        }
    }
}

impl Sweep {
    pub fn grid(&self) -> Vec<f64> {
        let n = self.points.max(2);
        (0..n)
            .map(|j| self.lo + (self.hi - self.lo) * j as f64 / (n - 1) as f64)
            .collect()
    }
}

/// Reduced form of a scalar canonical block obtained by sweeping `y`.
///
/// The returned `Q̂` interpolates the swept `(f(y), Q(y))` pairs piecewise
/// linearly, so every sweep point lies on its graph. The feasible interval is
/// the image of `f`: ends reached at the sweep boundary while `f` is still
/// moving are unbounded, ends where `f` saturates are open at the
/// extrapolated limit, and interior extrema are closed.
pub fn reduce_form(cr: &CanonicalCr, sweep: Sweep) -> Result<ReducedCr> {
    if cr.dim != 1 {
        return Err(Error::Unsupported(
            "sweep-based reduction handles scalar blocks; use a catalog element".into(),
        ));
    }
    let ys = sweep.grid();
    let pts: Vec<(f64, f64)> = ys
        .iter()
        .map(|&y| (cr.eval_f(&[y])[0], cr.eval_q(&[y])))
        .collect();
    if pts.iter().any(|(a, q)| !a.is_finite() || !q.is_finite()) {
        return Err(Error::NotReducible("non-finite values on the sweep".into()));
    }

    let runs = monotone_runs(&pts);
    // overlapping branches must agree on Q
    for (i, ra) in runs.iter().enumerate() {
        for rb in runs.iter().skip(i + 1) {
            for &(a, q) in &pts[rb.0..=rb.1] {
                if let Some(qa) = interpolate_run(&pts[ra.0..=ra.1], a) {
                    let tol = 1e-3 * (1.0 + q.abs().max(qa.abs()));
                    if (qa - q).abs() > tol {
                        return Err(Error::NotReducible(format!(
                            "two cost values ({qa:.6}, {q:.6}) for a = {a:.6}"
                        )));
                    }
                }
            }
        }
    }

    let mut table = pts.clone();
    table.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut merged: Vec<(f64, f64)> = Vec::with_capacity(table.len());
    for (a, q) in table {
        match merged.last() {
            Some(&(pa, pq)) if (a - pa).abs() <= 1e-12 * (1.0 + a.abs()) => {
                if (q - pq).abs() > 1e-9 * (1.0 + q.abs()) {
                    return Err(Error::NotReducible(format!(
                        "two cost values ({pq:.6}, {q:.6}) for a = {a:.6}"
                    )));
                }
            }
            _ => merged.push((a, q)),
        }
    }

    let lower = image_end(&pts, &ys, End::Lower);
    let upper = image_end(&pts, &ys, End::Upper);
    let feasible = FeasibleSet::Intervals(vec![vec![Interval {
        lo: lower.0,
        hi: upper.0,
        lo_open: lower.1,
        hi_open: upper.1,
    }]]);
    let table = Arc::new(merged);
    Ok(ReducedCr::new(
        1,
        move |a| interpolate_table(&table, a[0]),
        feasible,
    ))
}

fn monotone_runs(pts: &[(f64, f64)]) -> Vec<(usize, usize)> {
    let dir = |i: usize| {
        let da = pts[i + 1].0 - pts[i].0;
        if da.abs() <= 1e-14 * (1.0 + pts[i].0.abs()) {
            0
        } else if da > 0.0 {
            1
        } else {
            -1
        }
    };
    let mut runs = Vec::new();
    let mut start = 0;
    for i in 1..pts.len() - 1 {
        if dir(i) != dir(start) {
            runs.push((start, i));
            start = i;
        }
    }
    runs.push((start, pts.len() - 1));
    runs
}

fn interpolate_run(run: &[(f64, f64)], a: f64) -> Option<f64> {
    for w in run.windows(2) {
        let (a0, q0) = w[0];
        let (a1, q1) = w[1];
        let (lo, hi) = if a0 < a1 { (a0, a1) } else { (a1, a0) };
        if a > lo && a < hi {
            return Some(q0 + (q1 - q0) * (a - a0) / (a1 - a0));
        }
    }
    None
}

fn interpolate_table(table: &[(f64, f64)], a: f64) -> f64 {
    if table.len() == 1 {
        return table[0].1;
    }
    let pos = table.partition_point(|p| p.0 < a);
    let j = pos.clamp(1, table.len() - 1);
    let (a0, q0) = table[j - 1];
    let (a1, q1) = table[j];
    if a == a1 {
        return q1;
    }
    q0 + (q1 - q0) * (a - a0) / (a1 - a0)
}

enum End {
    Lower,
    Upper,
}

/// Bound of the image of `f` and whether it is open.
fn image_end(pts: &[(f64, f64)], ys: &[f64], end: End) -> (f64, bool) {
    let better = |x: f64, y: f64| match end {
        End::Lower => x < y,
        End::Upper => x > y,
    };
    let mut best = 0;
    for i in 1..pts.len() {
        if better(pts[i].0, pts[best].0) {
            best = i;
        }
    }
    let last = pts.len() - 1;
    if best != 0 && best != last {
        return (pts[best].0, false);
    }
    // extremum at the sweep boundary: still moving or saturating?
    let (i0, i1, i2) = if best == 0 { (2, 1, 0) } else { (last - 2, last - 1, last) };
    let (f0, f1, f2) = (pts[i0].0, pts[i1].0, pts[i2].0);
    let span = (pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)
        - pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min))
    .max(f64::MIN_POSITIVE);
    let mean_slope = span / (ys[last] - ys[0]).abs();
    let edge_slope = ((f2 - f1) / (ys[i2] - ys[i1])).abs();
    if edge_slope > 1e-6 * mean_slope {
        let inf = match end {
            End::Lower => f64::NEG_INFINITY,
            End::Upper => f64::INFINITY,
        };
        return (inf, true);
    }
    // geometric approach to a limit: Aitken extrapolation
    let denom = (f2 - f1) - (f1 - f0);
    let limit = if denom.abs() > 0.0 {
        f2 - (f2 - f1).powi(2) / denom
    } else {
        f2
    };
    (limit, true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn quad(q: f64) -> CanonicalCr {
        CanonicalCr::scalar(|y| y, move |y| q * y, move |y| 0.5 * q * y * y)
    }

    #[test]
    fn dual_cost_identity_examples() {
        let cr = CanonicalCr::scalar(|y| y, |y| y, |y| 0.5 * y * y);
        for y in [-2.0, 0.0, 0.5, 3.0] {
            assert!((cr.eval_r(&[y]) - 0.5 * y * y).abs() < 1e-12);
        }
        let zero = CanonicalCr::scalar(|y| y, |_| 0.0, |_| 0.0);
        assert_eq!(zero.eval_r(&[1.7]), 0.0);
        let q = 2.5;
        for y in [-1.0, 0.3, 4.0] {
            assert!((quad(q).eval_r(&[y]) - 0.5 * q * y * y).abs() < 1e-12);
        }
    }

    #[test]
    fn gradient_coupling_examples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let samples: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.random_range(-10.0..10.0)]).collect();
        assert!(check_gradient_coupling(&quad(1.3), &samples).passed());

        let bad = CanonicalCr::scalar(|y| y, |y| 1.3 * y, |y| 0.65 * y * y + 0.01 * y * y * y);
        let report = check_gradient_coupling(&bad, &[vec![0.0], vec![10.0], vec![-10.0]]);
        assert!(!report.passed());
        assert_eq!(report.failures(), vec![1, 2]);

        let flat = CanonicalCr::scalar(|y| y, |_| 0.0, |_| 4.0);
        assert!(check_gradient_coupling(&flat, &samples).passed());
    }

    #[test]
    fn build_dual_examples() {
        let p = Problem::new(
            2,
            vec![
                (vec![0], CrElement::Canonical(quad(1.0))),
                (vec![1], CrElement::Catalog(CatalogCr::Constant { value: 1.0 })),
            ],
            vec![(vec![0], vec![1], LiBlock::new(DMatrix::from_element(1, 1, 3.0)))],
        )
        .unwrap();
        let d = build_dual(&p).unwrap();
        assert_eq!(d.partition.li_inputs(0), &[1]);
        assert_eq!(d.partition.li_outputs(0), &[0]);
        assert_eq!(d.lis[0].a_matrix[(0, 0)], -3.0);
        let dd = build_dual(&d).unwrap();
        assert_eq!(dd.lis[0].a_matrix, p.lis[0].a_matrix);
        assert_eq!(dd.partition, p.partition);
        // the dual block's cost is R, and its dual's cost is Q again
        for y in [-1.0, 0.5, 2.0] {
            assert!((d.eval_primal_cost(&[y, y]).unwrap() + p.eval_dual_cost(&[y, y]).unwrap()).abs() < 1e-12);
            assert!((dd.eval_primal_cost(&[y, y]).unwrap() - p.eval_primal_cost(&[y, y]).unwrap()).abs() < 1e-12);
        }
        let reduced = Problem::new(
            1,
            vec![(vec![0], CrElement::Reduced(ReducedCr::new(1, |a| a[0].abs(), FeasibleSet::Whole)))],
            vec![(vec![0], vec![], LiBlock::new(DMatrix::zeros(0, 1)))],
        )
        .unwrap();
        assert!(matches!(build_dual(&reduced), Err(Error::NotCanonical { block: 0 })));
    }

    #[test]
    fn cost_examples() {
        let p = Problem::new(
            2,
            vec![(vec![0, 1], CrElement::Catalog(CatalogCr::Quadratic { q: 1.0, linear: 0.0 }))],
            vec![(vec![0], vec![1], LiBlock::new(DMatrix::from_element(1, 1, 1.0)))],
        )
        .unwrap();
        assert_eq!(p.eval_primal_cost(&[0.0, 0.0]).unwrap(), 0.0);
        assert!((p.eval_primal_cost(&[2.0, 0.0]).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(p.eval_primal_cost(&[1.0]), Err(Error::DimMismatch(_))));
        // primal - dual = Σ <f, g>
        let y = [1.5, -0.5];
        let gap = p.eval_primal_cost(&y).unwrap() - p.eval_dual_cost(&y).unwrap();
        assert!((gap - (1.5 * 1.5 + 0.25)).abs() < 1e-12);
    }

    #[test]
    fn reduce_identity() {
        let r = reduce_form(&CanonicalCr::scalar(|y| y, |y| y, |y| 0.5 * y * y), Sweep::default()).unwrap();
        match &r.feasible {
            FeasibleSet::Intervals(iv) => {
                assert_eq!(iv[0][0].lo, f64::NEG_INFINITY);
                assert_eq!(iv[0][0].hi, f64::INFINITY);
            }
            other => panic!("{other:?}"),
        }
        for y in Sweep::default().grid() {
            assert!((r.eval(&[y]) - 0.5 * y * y).abs() < 1e-9);
        }
    }

    #[test]
    fn reduce_tanh_detects_open_interval() {
        let cr = CanonicalCr::scalar(f64::tanh, |y| y, |y| y * y.tanh() - y.cosh().ln());
        let r = reduce_form(&cr, Sweep::default()).unwrap();
        let FeasibleSet::Intervals(iv) = &r.feasible else { panic!() };
        let iv = iv[0][0];
        assert!(iv.lo_open && iv.hi_open);
        assert!((iv.lo + 1.0).abs() < 1e-8 && (iv.hi - 1.0).abs() < 1e-8, "{iv:?}");
        assert!(!r.feasible.contains(&[1.0], 0.0));
        assert!(r.feasible.contains(&[0.999], 0.0));
        for y in Sweep::default().grid() {
            let (a, q) = (y.tanh(), y * y.tanh() - y.cosh().ln());
            assert!((r.eval(&[a]) - q).abs() < 1e-9);
        }
    }

    #[test]
    fn reduce_detects_multivalued() {
        let cr = CanonicalCr::scalar(|y| y * y, |_| 0.0, |y| y);
        assert!(matches!(reduce_form(&cr, Sweep::default()), Err(Error::NotReducible(_))));
        // even in f but consistent in Q: reducible, image closed at the interior minimum
        let ok = CanonicalCr::scalar(|y| y * y, |_| 0.0, |y| y * y);
        let r = reduce_form(&ok, Sweep::default()).unwrap();
        let FeasibleSet::Intervals(iv) = &r.feasible else { panic!() };
        assert!(!iv[0][0].lo_open);
    }

    #[test]
    fn feasible_set_projection_is_idempotent() {
        let sets = vec![
            FeasibleSet::Whole,
            FeasibleSet::Box { lo: vec![0.0, -1.0], hi: vec![1.0, f64::INFINITY] },
            FeasibleSet::HalfSpace { normal: vec![1.0, 2.0], offset: 0.5 },
            FeasibleSet::Affine {
                matrix: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
                rhs: DVector::from_element(1, 0.25),
            },
            FeasibleSet::Intervals(vec![
                vec![Interval::closed(-2.0, -1.0), Interval::closed(1.0, 2.0)],
                vec![Interval::open(0.0, 1.0)],
            ]),
        ];
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for s in &sets {
            for _ in 0..200 {
                let x = vec![rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
                let p = s.project(&x);
                assert!(s.contains(&p, 1e-12), "{s:?} {x:?} {p:?}");
                let pp = s.project(&p);
                for (u, v) in p.iter().zip(&pp) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn catalog_dual_reduced_forms() {
        let el = CrElement::Catalog(CatalogCr::AbsoluteValue { weight: 2.0 });
        let d = dual_cr(&el, 1).unwrap();
        let red = d.reduced.as_ref().unwrap();
        assert!(red.feasible.contains(&[1.5], 0.0));
        assert!(!red.feasible.contains(&[2.5], 0.0));
        for y in [-5.0, -1.0, 0.0, 3.0] {
            let cr = el.canonical(1).unwrap();
            assert!((d.eval_r(&[y]) - cr.eval_r(&[y])).abs() < 1e-12);
        }
        let nn = dual_cr(&CrElement::Catalog(CatalogCr::NonNegative), 1).unwrap();
        let red = nn.reduced.unwrap();
        assert!(red.feasible.contains(&[-3.0], 0.0));
        assert!(!red.feasible.contains(&[0.5], 0.0));
    }
}
