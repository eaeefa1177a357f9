//! Constitutive-relation maps `c = m(d)` and their classification.
//!
//! A map is derived from a canonical block by tracing the parametric curve
//! `y ↦ (c(y), d(y))` obtained from `(f(y), g(y))` through the per-index
//! transform and solving it for `y` given `d`. Catalog elements use closed
//! forms; other separable blocks are inverted numerically per coordinate.

use std::f64::consts::SQRT_2;
use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{CatalogClass, CatalogCr};
use crate::error::{Error, Result};
use crate::partition::{Orientation, TransformConvention};
use crate::problem::{CanonicalCr, CrElement, Sweep};

pub trait ConstitutiveMap: Send + Sync {
    fn dim(&self) -> usize;

    fn apply(&self, d: &[f64], c: &mut [f64]);

    /// The internal parameter `y` whose transformed image has incident wave
    /// `d`, when the map knows it.
    fn parameter(&self, _d: &[f64]) -> Option<Vec<f64>> {
        None
    }

    fn eval(&self, d: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; d.len()];
        self.apply(d, &mut c);
        c
    }
}

/// A map given by a closure.
pub struct FnMap<F> {
    dim: usize,
    f: F,
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> FnMap<F> {
    pub fn new(dim: usize, f: F) -> Self {
        Self { dim, f }
    }
}

impl<F: Fn(&[f64], &mut [f64]) + Send + Sync> ConstitutiveMap for FnMap<F> {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, d: &[f64], c: &mut [f64]) {
        (self.f)(d, c)
    }
}

/// Catalog element applied coordinatewise under the standard transform.
#[derive(Debug, Clone, Copy)]
pub struct CatalogMap {
    pub element: CatalogCr,
    pub dim: usize,
}

impl ConstitutiveMap for CatalogMap {
    fn dim(&self) -> usize {
        self.dim
    }

    fn apply(&self, d: &[f64], c: &mut [f64]) {
        for (ci, &di) in c.iter_mut().zip(d) {
            *ci = self.element.wave_map(di);
        }
    }

    fn parameter(&self, d: &[f64]) -> Option<Vec<f64>> {
        Some(d.iter().map(|&v| self.element.parameter(v)).collect())
    }
}

/// Tolerance and iteration cap for inverting a parametrization.
pub const ROOT_TOL: f64 = 1e-12;
pub const ROOT_MAX_ITERS: usize = 200;

/// Separable canonical block inverted numerically per coordinate.
pub struct ImplicitMap {
    canonical: CanonicalCr,
    transforms: Vec<Matrix2<f64>>,
}

impl ImplicitMap {
    /// `(c_j(t), d_j(t))` with every coordinate of `y` set to `t`.
    fn waves(&self, j: usize, t: f64) -> (f64, f64) {
        let y = vec![t; self.canonical.dim];
        let f = self.canonical.eval_f(&y)[j];
        let g = self.canonical.eval_g(&y)[j];
        let m = &self.transforms[j];
        (m[(0, 0)] * f + m[(0, 1)] * g, m[(1, 0)] * f + m[(1, 1)] * g)
    }

    fn solve(&self, j: usize, target: f64) -> f64 {
        let phi = |t: f64| self.waves(j, t).1 - target;
        let (mut lo, mut hi) = (-1.0, 1.0);
        let (mut flo, mut fhi) = (phi(lo), phi(hi));
        while flo.signum() == fhi.signum() && flo != 0.0 && fhi != 0.0 {
            lo *= 2.0;
            hi *= 2.0;
            if hi > 1e15 {
                return f64::NAN;
            }
            flo = phi(lo);
            fhi = phi(hi);
        }
        if flo == 0.0 {
            return lo;
        }
        if fhi == 0.0 {
            return hi;
        }
        let tol = ROOT_TOL * (1.0 + target.abs());
        let mut t = 0.5 * (lo + hi);
        for _ in 0..ROOT_MAX_ITERS {
            let ft = phi(t);
            if ft.abs() <= tol {
                return t;
            }
            if ft.signum() == flo.signum() {
                lo = t;
                flo = ft;
            } else {
                hi = t;
            }
            let h = 1e-7 * (1.0 + t.abs());
            let slope = (phi(t + h) - phi(t - h)) / (2.0 * h);
            let newton = t - ft / slope;
            t = if slope.is_finite() && slope != 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if (hi - lo).abs() <= ROOT_TOL * (1.0 + t.abs()) {
                return t;
            }
        }
        t
    }
}

impl ConstitutiveMap for ImplicitMap {
    fn dim(&self) -> usize {
        self.canonical.dim
    }

    fn apply(&self, d: &[f64], c: &mut [f64]) {
        for j in 0..d.len() {
            let t = self.solve(j, d[j]);
            c[j] = self.waves(j, t).0;
        }
    }

    fn parameter(&self, d: &[f64]) -> Option<Vec<f64>> {
        Some((0..d.len()).map(|j| self.solve(j, d[j])).collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum MapKind {
    ClosedForm,
    ImplicitParametric,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Classification {
    Neutral,
    PassiveEverywhere,
    DissipativeEverywhere { margin: f64 },
    /// `m(d) = S d + e` with `‖S‖ ≤ 1`.
    Source { s: DMatrix<f64>, e: DVector<f64> },
    Unclassified,
}

impl Classification {
    pub fn label(&self) -> &'static str {
        match self {
            Classification::Neutral => "neutral",
            Classification::PassiveEverywhere => "passive",
            Classification::DissipativeEverywhere { .. } => "dissipative",
            Classification::Source { .. } => "source",
            Classification::Unclassified => "unclassified",
        }
    }
}

/// Affine part of a CR wired as a source: `c_j = s_j d_j + e_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineSource {
    pub s_diag: Vec<f64>,
    pub e: Vec<f64>,
}

#[derive(Clone)]
pub struct CrMap {
    pub dim: usize,
    pub map: Arc<dyn ConstitutiveMap>,
    pub kind: MapKind,
    pub classification: Classification,
    /// Present when the block is wired directly to the interconnection and
    /// removed by algebraic reduction instead of being delayed.
    pub source: Option<AffineSource>,
    /// Incident-wave values where the map changes branch, per coordinate.
    pub knees: Vec<f64>,
}

impl fmt::Debug for CrMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CrMap")
            .field("dim", &self.dim)
            .field("kind", &self.kind)
            .field("classification", &self.classification)
            .field("source", &self.source)
            .field("knees", &self.knees)
            .finish_non_exhaustive()
    }
}

impl CrMap {
    pub fn apply(&self, d: &[f64], c: &mut [f64]) {
        self.map.apply(d, c)
    }

    pub fn eval(&self, d: &[f64]) -> Vec<f64> {
        self.map.eval(d)
    }

    pub fn parameter(&self, d: &[f64]) -> Option<Vec<f64>> {
        self.map.parameter(d)
    }

    pub fn is_source(&self) -> bool {
        self.source.is_some()
    }
}

fn catalog_classification(el: CatalogCr, dim: usize) -> Classification {
    match el.class() {
        CatalogClass::Neutral => Classification::Neutral,
        CatalogClass::Passive => Classification::PassiveEverywhere,
        CatalogClass::Dissipative { margin } => Classification::DissipativeEverywhere { margin },
        CatalogClass::Source => {
            let (s, e) = el.source_params().expect("source elements carry affine data");
            Classification::Source {
                s: DMatrix::from_diagonal_element(dim, dim, s),
                e: DVector::from_element(dim, e),
            }
        }
        CatalogClass::Expansive => Classification::Unclassified,
    }
}

/// Derives the wave map of a block housing `indices`.
pub fn derive_cr(el: &CrElement, indices: &[usize], t: &TransformConvention) -> Result<CrMap> {
    let dim = indices.len();
    let standard = Orientation::Standard.matrix();
    let uniform = indices.iter().all(|&i| t.matrix(i) == standard);
    match el {
        CrElement::Catalog(c) if uniform => {
            c.validate(false)?;
            Ok(CrMap {
                dim,
                map: Arc::new(CatalogMap { element: *c, dim }),
                kind: MapKind::ClosedForm,
                classification: catalog_classification(*c, dim),
                source: c.source_params().map(|(s, e)| AffineSource {
                    s_diag: vec![s; dim],
                    e: vec![e; dim],
                }),
                knees: c.knees(),
            })
        }
        CrElement::Catalog(c) => {
            c.validate(false)?;
            let mut m = derive_implicit(&CanonicalCr::from_catalog(*c, dim), indices, t)?;
            if c.source_params().is_some() {
                // affine by construction: read off the slope and offset
                let zero = m.eval(&vec![0.0; dim]);
                let one = m.eval(&vec![1.0; dim]);
                let s_diag: Vec<f64> = one.iter().zip(&zero).map(|(a, b)| a - b).collect();
                m.classification = Classification::Source {
                    s: DMatrix::from_diagonal(&DVector::from_vec(s_diag.clone())),
                    e: DVector::from_vec(zero.clone()),
                };
                m.source = Some(AffineSource { s_diag, e: zero });
            }
            Ok(m)
        }
        CrElement::Canonical(cr) => derive_implicit(cr, indices, t),
        CrElement::Reduced(_) => Err(Error::NotCanonical { block: 0 }),
    }
}

fn derive_implicit(cr: &CanonicalCr, indices: &[usize], t: &TransformConvention) -> Result<CrMap> {
    if cr.dim != indices.len() {
        return Err(Error::DimMismatch(format!(
            "block of dimension {} houses {} indices",
            cr.dim,
            indices.len()
        )));
    }
    if !cr.separable {
        return Err(Error::Unsupported(
            "numerical inversion needs a separable block".into(),
        ));
    }
    let map = ImplicitMap {
        canonical: cr.clone(),
        transforms: indices.iter().map(|&i| t.matrix(i)).collect(),
    };
    // the incident wave must be strictly monotone in y on the sweep
    let grid = Sweep::default().grid();
    for j in 0..cr.dim {
        let ds: Vec<f64> = grid.iter().map(|&y| map.waves(j, y).1).collect();
        let rising = ds[ds.len() - 1] > ds[0];
        for w in 0..ds.len() - 1 {
            let step = ds[w + 1] - ds[w];
            if step == 0.0 || (step > 0.0) != rising {
                return Err(Error::NonInvertibleParametrization {
                    coordinate: j,
                    lo: grid[w],
                    hi: grid[w + 1],
                });
            }
        }
    }
    let m = CrMap {
        dim: cr.dim,
        map: Arc::new(map),
        kind: MapKind::ImplicitParametric,
        classification: Classification::Unclassified,
        source: None,
        knees: Vec::new(),
    };
    let report = classify_map(m.map.as_ref(), &Battery::default());
    Ok(CrMap {
        classification: report.class,
        ..m
    })
}

/// Random pairs used to probe a map.
#[derive(Debug, Clone)]
pub struct Battery {
    pub pairs: usize,
    pub half_width: f64,
    pub seed: u64,
    /// Points near which extra pairs are drawn, applied to every coordinate.
    pub knees: Vec<f64>,
}

impl Default for Battery {
    fn default() -> Self {
        Self {
            pairs: 10_000,
            half_width: 100.0,
            seed: 0x5eed,
            knees: Vec::new(),
        }
    }
}

impl Battery {
    pub fn with_knees(mut self, knees: &[f64]) -> Self {
        self.knees = knees.to_vec();
        self
    }
}

/// Increments shorter than this (relative to the base point) are skipped.
pub const GAIN_FLOOR: f64 = 1e-6;
/// Slack on the sampled incremental gain.
pub const GAIN_TOL: f64 = 1e-7;

/// Battery-based classification plus the measurements behind it.
#[derive(Debug, Clone)]
pub struct ClassReport {
    pub class: Classification,
    /// Largest sampled `‖m(x + x′) − m(x′)‖ / ‖x‖`.
    pub incremental_gain: f64,
    /// Largest sampled `|‖m(x)‖ − ‖x‖|`.
    pub neutral_deviation: f64,
    pub affine: Option<(DMatrix<f64>, DVector<f64>)>,
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn detect_affine(m: &dyn ConstitutiveMap, probes: &[Vec<f64>]) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let n = m.dim();
    let zero = vec![0.0; n];
    let e = m.eval(&zero);
    let mut s = DMatrix::zeros(n, n);
    let mut unit = zero.clone();
    for j in 0..n {
        unit[j] = 1.0;
        let plus = m.eval(&unit);
        unit[j] = -1.0;
        let minus = m.eval(&unit);
        unit[j] = 0.0;
        for i in 0..n {
            // three collinear points
            if (plus[i] + minus[i] - 2.0 * e[i]).abs() > 1e-12 * (1.0 + e[i].abs() + plus[i].abs()) {
                return None;
            }
            s[(i, j)] = plus[i] - e[i];
        }
    }
    let e = DVector::from_vec(e);
    let scale = 1.0 + s.amax() + e.amax();
    for x in probes {
        let pred = &s * DVector::from_column_slice(x) + &e;
        let got = m.eval(x);
        let err = pred.iter().zip(&got).map(|(p, g)| (p - g).abs()).fold(0.0, f64::max);
        if err > 1e-12 * scale * (1.0 + norm(x)) {
            return None;
        }
    }
    Some((s, e))
}

/// Classifies a map from samples.
///
/// Order of tests: an exactly affine map with nonzero offset and passive
/// linear part is a source; otherwise a norm-preserving map is neutral; then
/// the sampled incremental gain decides between dissipative (`< 1`) and
/// passive (`≤ 1`). Affine maps without offset use the exact spectral norm.
pub fn classify_map(m: &dyn ConstitutiveMap, battery: &Battery) -> ClassReport {
    let n = m.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(battery.seed);
    let w = battery.half_width;
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..n).map(|_| rng.random_range(-w..w)).collect() };

    let mut pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..battery.pairs)
        .map(|_| {
            let base = draw(&mut rng);
            let mut step = draw(&mut rng);
            // mix of large and small increments
            let scale = 10f64.powf(rng.random_range(-6.0..0.0));
            step.iter_mut().for_each(|v| *v *= scale);
            (step, base)
        })
        .collect();
    for &k in &battery.knees {
        for j in 0..n {
            for &(off, len) in &[(-1e-4, 2e-4), (-0.5, 1.0), (1e-9, -2e-4), (0.0, 1e-3), (0.0, -1e-3)] {
                let mut base = vec![0.0; n];
                base[j] = k + off;
                let mut step = vec![0.0; n];
                step[j] = len;
                pairs.push((step, base));
            }
        }
    }

    let mut gain: f64 = 0.0;
    let mut neutral_deviation: f64 = 0.0;
    for (step, base) in &pairs {
        let moved: Vec<f64> = base.iter().zip(step).map(|(b, s)| b + s).collect();
        let m1 = m.eval(&moved);
        let m0 = m.eval(base);
        let diff: Vec<f64> = m1.iter().zip(&m0).map(|(a, b)| a - b).collect();
        // actual increment; below the floor roundoff dominates the quotient
        let actual: Vec<f64> = moved.iter().zip(base).map(|(a, b)| a - b).collect();
        let len = norm(&actual);
        if len > GAIN_FLOOR * (1.0 + norm(base)) {
            gain = gain.max(norm(&diff) / len);
        }
        neutral_deviation = neutral_deviation.max((norm(&m0) - norm(base)).abs());
        neutral_deviation = neutral_deviation.max((norm(&m1) - norm(&moved)).abs());
    }

    let probes: Vec<Vec<f64>> = pairs.iter().take(64).map(|p| p.1.clone()).collect();
    let affine = detect_affine(m, &probes);
    let class = match &affine {
        Some((s, e)) => {
            let spectral = s.clone().svd(false, false).singular_values.amax();
            if e.amax() > 0.0 && spectral <= 1.0 + 1e-9 {
                Classification::Source {
                    s: s.clone(),
                    e: e.clone(),
                }
            } else if e.amax() == 0.0 && neutral_deviation <= 1e-9 {
                Classification::Neutral
            } else if spectral < 1.0 - 1e-9 {
                Classification::DissipativeEverywhere {
                    margin: 1.0 - spectral,
                }
            } else if spectral <= 1.0 + 1e-9 {
                Classification::PassiveEverywhere
            } else {
                Classification::Unclassified
            }
        }
        None => {
            if neutral_deviation <= 1e-9 * (1.0 + w) {
                Classification::Neutral
            } else if gain < 1.0 - GAIN_TOL {
                Classification::DissipativeEverywhere { margin: 1.0 - gain }
            } else if gain <= 1.0 + GAIN_TOL {
                Classification::PassiveEverywhere
            } else {
                Classification::Unclassified
            }
        }
    };
    ClassReport {
        class,
        incremental_gain: gain,
        neutral_deviation,
        affine,
    }
}

/// Canonical data and derived map of a catalog element.
pub fn catalog_cr(el: CatalogCr, dim: usize, require_passive: bool) -> Result<(CanonicalCr, CrMap)> {
    el.validate(require_passive)?;
    if dim == 0 {
        return Err(Error::BadParams("catalog element needs a positive dimension".into()));
    }
    let indices: Vec<usize> = (0..dim).collect();
    let map = derive_cr(&CrElement::Catalog(el), &indices, &TransformConvention::standard())?;
    Ok((CanonicalCr::from_catalog(el, dim), map))
}

/// Transformed image `(c, d)` of a parametric point under the standard
/// transform.
pub fn standard_waves(a: f64, b: f64) -> (f64, f64) {
    ((a - b) / SQRT_2, (a + b) / SQRT_2)
}
