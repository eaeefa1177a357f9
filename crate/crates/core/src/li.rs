//! Orthonormal interconnections built from linear constraints.
//!
//! An LI block with matrix `A` admits port values `a = [x; A x]`,
//! `b = [−Aᵀ y; y]`. After the per-port transform these pairs are exactly
//! the graph `d = G c` of an orthonormal `G`. Under the standard transform,
//! eliminating `(x, y)` gives
//!
//! ```text
//! G = [ (I + AᵀA)⁻¹(I − AᵀA)    2(I + AᵀA)⁻¹Aᵀ      ]
//!     [ 2A(I + AᵀA)⁻¹           (I + AAᵀ)⁻¹(AAᵀ − I) ]
//! ```
//!
//! which is symmetric and squares to the identity.

use nalgebra::{DMatrix, DVector, Matrix2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::partition::{Orientation, TransformConvention};
use crate::problem::LiBlock;

#[derive(Debug, Clone, PartialEq)]
pub struct ScatteringBlock {
    pub g_matrix: DMatrix<f64>,
    pub source_block: LiBlock,
    /// Per-port transform, in port order (inputs then outputs).
    pub transforms: Vec<Matrix2<f64>>,
}

impl ScatteringBlock {
    pub fn n_ports(&self) -> usize {
        self.g_matrix.nrows()
    }

    /// `max |GᵀG − I|`.
    pub fn orthonormality_error(&self) -> f64 {
        let n = self.n_ports();
        (self.g_matrix.transpose() * &self.g_matrix - DMatrix::identity(n, n)).amax()
    }
}

/// Builds `G` for an LI block whose ports carry the given global indices.
///
/// Uses the closed form when every port has the standard transform, and
/// otherwise solves `G C = D` by QR, where the columns of `C` and `D` are the
/// transformed images of a basis of the block's behavior.
pub fn build_scattering(
    li: &LiBlock,
    ports: &[usize],
    t: &TransformConvention,
) -> Result<ScatteringBlock> {
    let n = li.n_in() + li.n_out();
    if ports.len() != n {
        return Err(Error::LengthMismatch {
            expected: n,
            got: ports.len(),
        });
    }
    let transforms: Vec<Matrix2<f64>> = ports.iter().map(|&i| t.matrix(i)).collect();
    let standard = Orientation::Standard.matrix();
    let g_matrix = if transforms.iter().all(|m| *m == standard) {
        closed_form(&li.a_matrix)
    } else {
        from_behavior(&li.a_matrix, &transforms)?
    };
    Ok(ScatteringBlock {
        g_matrix,
        source_block: li.clone(),
        transforms,
    })
}

fn closed_form(a: &DMatrix<f64>) -> DMatrix<f64> {
    let (n_out, n_in) = a.shape();
    let n = n_in + n_out;
    let ata = a.transpose() * a;
    let aat = a * a.transpose();
    let i_in = DMatrix::<f64>::identity(n_in, n_in);
    let i_out = DMatrix::<f64>::identity(n_out, n_out);
    // I + AᵀA and I + AAᵀ are symmetric positive definite
    let inv_in = (&i_in + &ata).cholesky().expect("I + AᵀA is SPD").inverse();
    let inv_out = (&i_out + &aat).cholesky().expect("I + AAᵀ is SPD").inverse();

    let mut g = DMatrix::zeros(n, n);
    g.view_mut((0, 0), (n_in, n_in))
        .copy_from(&(&inv_in * (&i_in - &ata)));
    g.view_mut((0, n_in), (n_in, n_out))
        .copy_from(&(&inv_in * a.transpose() * 2.0));
    g.view_mut((n_in, 0), (n_out, n_in))
        .copy_from(&(a * &inv_in * 2.0));
    g.view_mut((n_in, n_in), (n_out, n_out))
        .copy_from(&(&inv_out * (&aat - &i_out)));
    g
}

fn from_behavior(a: &DMatrix<f64>, transforms: &[Matrix2<f64>]) -> Result<DMatrix<f64>> {
    let (n_out, n_in) = a.shape();
    let n = n_in + n_out;
    // columns: behavior generated by unit x (first n_in) and unit y (rest)
    let mut pa = DMatrix::zeros(n, n);
    let mut pb = DMatrix::zeros(n, n);
    pa.view_mut((0, 0), (n_in, n_in))
        .copy_from(&DMatrix::identity(n_in, n_in));
    pa.view_mut((n_in, 0), (n_out, n_in)).copy_from(a);
    pb.view_mut((0, n_in), (n_in, n_out))
        .copy_from(&(-a.transpose()));
    pb.view_mut((n_in, n_in), (n_out, n_out))
        .copy_from(&DMatrix::identity(n_out, n_out));
    let mut c = DMatrix::zeros(n, n);
    let mut d = DMatrix::zeros(n, n);
    for (i, m) in transforms.iter().enumerate() {
        for j in 0..n {
            c[(i, j)] = m[(0, 0)] * pa[(i, j)] + m[(0, 1)] * pb[(i, j)];
            d[(i, j)] = m[(1, 0)] * pa[(i, j)] + m[(1, 1)] * pb[(i, j)];
        }
    }
    // G C = D  <=>  Cᵀ Gᵀ = Dᵀ
    let qr = c.transpose().qr();
    let r_diag_min = qr.r().diagonal().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if n > 0 && r_diag_min < 1e-12 * c.amax().max(1.0) {
        return Err(Error::Unsupported(
            "transform convention leaves the LI behavior without a graph form".into(),
        ));
    }
    let gt = qr
        .solve(&d.transpose())
        .ok_or_else(|| Error::Unsupported("singular behavior basis".into()))?;
    Ok(gt.transpose())
}

#[derive(Debug, Clone, Copy)]
pub struct BehaviorReport {
    pub trials: usize,
    /// `max |d − G c|` over all trials and ports.
    pub max_deviation: f64,
}

/// Samples `(a_in, b_out) ~ N(0, I)`, forms the constrained port values, and
/// measures how far the transformed pair is from `d = G c`.
pub fn verify_behavior(sb: &ScatteringBlock, trials: usize, seed: u64) -> BehaviorReport {
    let a = &sb.source_block.a_matrix;
    let (n_out, n_in) = a.shape();
    let n = n_in + n_out;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut max_deviation: f64 = 0.0;
    for _ in 0..trials {
        let x = DVector::<f64>::from_fn(n_in, |_, _| StandardNormal.sample(&mut rng));
        let y = DVector::<f64>::from_fn(n_out, |_, _| StandardNormal.sample(&mut rng));
        let ao = a * &x;
        let bi = -(a.transpose() * &y);
        let mut c = DVector::zeros(n);
        let mut d = DVector::zeros(n);
        for i in 0..n {
            let (ai, bi_) = if i < n_in { (x[i], bi[i]) } else { (ao[i - n_in], y[i - n_in]) };
            let m = &sb.transforms[i];
            c[i] = m[(0, 0)] * ai + m[(0, 1)] * bi_;
            d[i] = m[(1, 0)] * ai + m[(1, 1)] * bi_;
        }
        let dev = (&d - &sb.g_matrix * &c).amax();
        max_deviation = max_deviation.max(dev);
    }
    BehaviorReport {
        trials,
        max_deviation,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LiKind {
    /// `a_out = a_in`, `dim` ports on each side.
    EqualityChain { dim: usize },
    /// One input fanned out to `outputs` ports.
    Replicator { outputs: usize },
    /// `a_out = −a_in`.
    Negator { dim: usize },
    General(DMatrix<f64>),
}

pub fn catalog_li(kind: LiKind) -> Result<LiBlock> {
    let a = match kind {
        LiKind::EqualityChain { dim } => {
            nonzero(dim, "equality-chain")?;
            DMatrix::identity(dim, dim)
        }
        LiKind::Replicator { outputs } => {
            nonzero(outputs, "replicator")?;
            DMatrix::from_element(outputs, 1, 1.0)
        }
        LiKind::Negator { dim } => {
            nonzero(dim, "negator")?;
            -DMatrix::<f64>::identity(dim, dim)
        }
        LiKind::General(m) => {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(Error::BadParams("general LI matrix must be finite".into()));
            }
            if m.nrows() + m.ncols() == 0 {
                return Err(Error::BadParams("general LI matrix has no ports".into()));
            }
            m
        }
    };
    Ok(LiBlock::new(a))
}

fn nonzero(n: usize, what: &str) -> Result<()> {
    if n == 0 {
        Err(Error::BadParams(format!("{what}: dimension must be positive")))
    } else {
        Ok(())
    }
}
