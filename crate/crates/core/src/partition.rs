//! Index bookkeeping and the per-index coordinate change.
//!
//! A length-`N` vector is partitioned twice: once into `K` constitutive-relation
//! (CR) blocks and once into `L` linear-interconnection (LI) blocks, each LI
//! block further split into an input part followed by an output part. Blocks
//! are stored as explicit lists of global indices so the two partitionings can
//! order the indices differently.
//!
//! The coordinate change pairs each primal value `a_i` with its dual `b_i` and
//! maps them to `(c_i, d_i) = M_i (a_i, b_i)`.

use std::collections::BTreeMap;

use nalgebra::Matrix2;

use crate::error::{Error, Result};

/// Uniform scale of the default transform, making each `M_i` orthogonal.
pub const DEFAULT_SCALE: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[derive(Debug, Clone, PartialEq)]
pub struct IndexPartition {
    pub n_total: usize,
    pub cr_blocks: Vec<Vec<usize>>,
    /// Each LI block lists its inputs first, then its outputs.
    pub li_blocks: Vec<Vec<usize>>,
    /// `(inputs, outputs)` lengths per LI block.
    pub li_io_split: Vec<(usize, usize)>,
}

impl IndexPartition {
    pub fn new(
        n_total: usize,
        cr_blocks: Vec<Vec<usize>>,
        li_blocks: Vec<Vec<usize>>,
        li_io_split: Vec<(usize, usize)>,
    ) -> Self {
        Self {
            n_total,
            cr_blocks,
            li_blocks,
            li_io_split,
        }
    }

    pub fn num_cr(&self) -> usize {
        self.cr_blocks.len()
    }

    pub fn num_li(&self) -> usize {
        self.li_blocks.len()
    }

    pub fn li_inputs(&self, block: usize) -> &[usize] {
        &self.li_blocks[block][..self.li_io_split[block].0]
    }

    pub fn li_outputs(&self, block: usize) -> &[usize] {
        &self.li_blocks[block][self.li_io_split[block].0..]
    }

    /// Checks that both partitionings cover every index exactly once and that
    /// the LI splits are consistent.
    pub fn validate(&self) -> Result<()> {
        if self.n_total == 0 {
            return Err(Error::Coverage("partition has no indices".into()));
        }
        if self.li_io_split.len() != self.li_blocks.len() {
            return Err(Error::Coverage(format!(
                "{} LI blocks but {} i/o splits",
                self.li_blocks.len(),
                self.li_io_split.len()
            )));
        }
        check_cover(self.n_total, &self.cr_blocks, "CR")?;
        check_cover(self.n_total, &self.li_blocks, "LI")?;
        for (block, (ports, &(inputs, outputs))) in
            self.li_blocks.iter().zip(&self.li_io_split).enumerate()
        {
            if inputs + outputs != ports.len() {
                return Err(Error::Split {
                    block,
                    len: ports.len(),
                    inputs,
                    outputs,
                });
            }
        }
        Ok(())
    }

    /// For every global index, the CR block that houses it.
    pub fn cr_owner(&self) -> Vec<usize> {
        owner(self.n_total, &self.cr_blocks)
    }

    /// For every global index, the LI block that houses it.
    pub fn li_owner(&self) -> Vec<usize> {
        owner(self.n_total, &self.li_blocks)
    }
}

fn owner(n: usize, blocks: &[Vec<usize>]) -> Vec<usize> {
    let mut out = vec![usize::MAX; n];
    for (k, block) in blocks.iter().enumerate() {
        for &i in block {
            if i < n {
                out[i] = k;
            }
        }
    }
    out
}

fn check_cover(n: usize, blocks: &[Vec<usize>], what: &str) -> Result<()> {
    let mut seen = vec![false; n];
    for (k, block) in blocks.iter().enumerate() {
        for &i in block {
            if i >= n {
                return Err(Error::Coverage(format!(
                    "{what} block {k} references index {i} but N = {n}"
                )));
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(Error::Coverage(format!(
                    "index {i} appears in more than one {what} block"
                )));
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Coverage(format!(
            "index {i} is not housed by any {what} block"
        )));
    }
    Ok(())
}

/// Named orientations of the per-index transform. All satisfy
/// `c^2 - d^2 = -2ab`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Orientation {
    /// `c = (a - b)/sqrt2`, `d = (a + b)/sqrt2`.
    Standard,
    /// `c = (b - a)/sqrt2`, `d = (a + b)/sqrt2`.
    Flipped,
}

impl Orientation {
    pub fn matrix(self) -> Matrix2<f64> {
        let s = DEFAULT_SCALE;
        match self {
            Orientation::Standard => Matrix2::new(s, -s, s, s),
            Orientation::Flipped => Matrix2::new(-s, s, s, s),
        }
    }
}

/// The per-index 2x2 maps. Indices without an override use
/// [`Orientation::Standard`].
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TransformConvention {
    overrides: BTreeMap<usize, Matrix2<f64>>,
}

impl TransformConvention {
    pub fn standard() -> Self {
        Self::default()
    }

    /// Replaces the map at `index`. The matrix must carry `-2ab` onto
    /// `c^2 - d^2`, i.e. `M^T diag(1,-1) M = -[[0,1],[1,0]]`.
    pub fn with_override(mut self, index: usize, m: Matrix2<f64>) -> Result<Self> {
        if !preserves_form(&m) {
            return Err(Error::InvalidTransform { index });
        }
        self.overrides.insert(index, m);
        Ok(self)
    }

    pub fn with_orientation(self, index: usize, o: Orientation) -> Result<Self> {
        self.with_override(index, o.matrix())
    }

    pub fn is_uniform_standard(&self) -> bool {
        self.overrides
            .values()
            .all(|m| *m == Orientation::Standard.matrix())
    }

    pub fn has_override(&self, index: usize) -> bool {
        self.overrides.contains_key(&index)
    }

    pub fn matrix(&self, index: usize) -> Matrix2<f64> {
        self.overrides
            .get(&index)
            .copied()
            .unwrap_or_else(|| Orientation::Standard.matrix())
    }

    pub fn validate(&self) -> Result<()> {
        for (&index, m) in &self.overrides {
            if m.determinant().abs() < 1e-14 {
                return Err(Error::SingularTransform { index });
            }
            if !preserves_form(m) {
                return Err(Error::InvalidTransform { index });
            }
        }
        Ok(())
    }
}

fn preserves_form(m: &Matrix2<f64>) -> bool {
    let j = Matrix2::new(1.0, 0.0, 0.0, -1.0);
    let target = Matrix2::new(0.0, -1.0, -1.0, 0.0);
    let scale = 1.0 + m.norm_squared();
    (m.transpose() * j * m - target).amax() <= 1e-12 * scale
}

/// Transformed variables: `c` are CR outputs / LI inputs, `d` are LI outputs /
/// CR inputs.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct StateVector {
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl StateVector {
    pub fn zeros(n: usize) -> Self {
        Self {
            c: vec![0.0; n],
            d: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.c.len()
    }

    pub fn is_empty(&self) -> bool {
        self.c.is_empty()
    }

    /// `sum_i c_i^2 - d_i^2`.
    pub fn pseudopower(&self) -> f64 {
        self.c
            .iter()
            .zip(&self.d)
            .map(|(c, d)| c * c - d * d)
            .sum()
    }
}

pub fn forward_transform(a: &[f64], b: &[f64], t: &TransformConvention) -> Result<StateVector> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            got: b.len(),
        });
    }
    let mut s = StateVector::zeros(a.len());
    for i in 0..a.len() {
        let m = t.matrix(i);
        s.c[i] = m[(0, 0)] * a[i] + m[(0, 1)] * b[i];
        s.d[i] = m[(1, 0)] * a[i] + m[(1, 1)] * b[i];
    }
    Ok(s)
}

pub fn inverse_transform(s: &StateVector, t: &TransformConvention) -> Result<(Vec<f64>, Vec<f64>)> {
    if s.c.len() != s.d.len() {
        return Err(Error::LengthMismatch {
            expected: s.c.len(),
            got: s.d.len(),
        });
    }
    let n = s.c.len();
    let mut a = vec![0.0; n];
    let mut b = vec![0.0; n];
    for i in 0..n {
        let inv = t
            .matrix(i)
            .try_inverse()
            .ok_or(Error::SingularTransform { index: i })?;
        a[i] = inv[(0, 0)] * s.c[i] + inv[(0, 1)] * s.d[i];
        b[i] = inv[(1, 0)] * s.c[i] + inv[(1, 1)] * s.d[i];
    }
    Ok((a, b))
}
