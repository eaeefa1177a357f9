//! Wiring of CR blocks to LI blocks, delay placement and source reduction.
//!
//! Every global index carries one CR port and one LI port. The LI side maps
//! the reflected waves `c` to incident waves `d = G c`; the CR side maps `d`
//! back to `c = m(d)`. Delays sit on the `d` lines into non-source CRs.
//! Source CRs are affine and are eliminated algebraically per LI block.

use log::warn;
use nalgebra::{DMatrix, DVector};

use crate::cr::{derive_cr, CrMap};
use crate::error::{Error, Result};
use crate::li::{build_scattering, ScatteringBlock};
use crate::partition::TransformConvention;
use crate::problem::Problem;

/// Loop matrices with a condition estimate above this are rejected.
pub const SINGULAR_LOOP_CONDITION: f64 = 1e14;
/// Loop matrices with a condition estimate above this are logged.
pub const WARN_LOOP_CONDITION: f64 = 1e12;

/// Source-eliminated map of one LI block.
///
/// Delayed ports receive `d_D = Ĝ c_D + ê`. Source ports are recovered as
/// `d_S = K c_D + k` and `c_S = S d_S + e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReducedBlock {
    /// Global indices of delayed ports, in block port order.
    pub delayed: Vec<usize>,
    /// Global indices of source ports, in block port order.
    pub sources: Vec<usize>,
    pub g_hat: DMatrix<f64>,
    pub e_hat: DVector<f64>,
    pub src_gain: DMatrix<f64>,
    pub src_offset: DVector<f64>,
    pub s_diag: DVector<f64>,
    pub e_src: DVector<f64>,
}

impl ReducedBlock {
    /// `Ĝ c_D + ê` for the block, reading `c` in global order.
    pub fn propose(&self, c: &[f64]) -> DVector<f64> {
        let cd = gather(c, &self.delayed);
        &self.g_hat * cd + &self.e_hat
    }

    /// Source-port waves `(c_S, d_S)` consistent with the delayed `c`.
    pub fn expand(&self, c: &[f64]) -> (DVector<f64>, DVector<f64>) {
        let cd = gather(c, &self.delayed);
        let ds = &self.src_gain * cd + &self.src_offset;
        let cs = self.s_diag.component_mul(&ds) + &self.e_src;
        (cs, ds)
    }
}

pub(crate) fn gather(v: &[f64], idx: &[usize]) -> DVector<f64> {
    DVector::from_iterator(idx.len(), idx.iter().map(|&i| v[i]))
}

#[derive(Debug, Clone)]
pub struct SystemGraph {
    pub problem: Problem,
    pub convention: TransformConvention,
    pub scattering: Vec<ScatteringBlock>,
    pub cr_maps: Vec<CrMap>,
    /// Global indices carrying a delay, ascending.
    pub delay_ports: Vec<usize>,
    pub is_source: Vec<bool>,
    /// Per-LI reduced maps. Empty until `reduce_sources` runs.
    pub reduced: Vec<ReducedBlock>,
    /// Position in LI order to global index.
    pub li_order: Vec<usize>,
    /// Position in CR order to global index.
    pub cr_order: Vec<usize>,
}

impl SystemGraph {
    pub fn n(&self) -> usize {
        self.problem.n()
    }

    /// Aggregate `G` in global index order.
    pub fn aggregate_g(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut g = DMatrix::zeros(n, n);
        for (l, sb) in self.scattering.iter().enumerate() {
            let ports = &self.problem.partition.li_blocks[l];
            for (i, &pi) in ports.iter().enumerate() {
                for (j, &pj) in ports.iter().enumerate() {
                    g[(pi, pj)] = sb.g_matrix[(i, j)];
                }
            }
        }
        g
    }

    /// Aggregate `G` as it acts in LI order, before the index permutation.
    pub fn block_diagonal_g(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut g = DMatrix::zeros(n, n);
        let mut off = 0;
        for sb in &self.scattering {
            let k = sb.n_ports();
            g.view_mut((off, off), (k, k)).copy_from(&sb.g_matrix);
            off += k;
        }
        g
    }

    pub fn num_sources(&self) -> usize {
        self.is_source.iter().filter(|&&s| s).count()
    }

    pub fn is_reduced(&self) -> bool {
        self.reduced.len() == self.scattering.len()
    }
}

/// Builds the interconnection and eliminates sources.
pub fn assemble(p: &Problem, t: &TransformConvention) -> Result<SystemGraph> {
    p.validate()?;
    t.validate()?;
    let part = &p.partition;
    if part.n_total == 0 {
        return Err(Error::Coverage("problem has no indices".into()));
    }
    let mut cr_maps = Vec::with_capacity(part.num_cr());
    let mut is_source = vec![false; part.n_total];
    for (k, el) in p.crs.iter().enumerate() {
        let idx = &part.cr_blocks[k];
        let m = derive_cr(el, idx, t).map_err(|e| e.in_block(k))?;
        if m.is_source() {
            for &i in idx {
                is_source[i] = true;
            }
        }
        cr_maps.push(m);
    }
    let scattering = p
        .lis
        .iter()
        .zip(&part.li_blocks)
        .map(|(li, ports)| build_scattering(li, ports, t))
        .collect::<Result<Vec<_>>>()?;
    let delay_ports = (0..part.n_total).filter(|&i| !is_source[i]).collect();
    let sg = SystemGraph {
        problem: p.clone(),
        convention: t.clone(),
        scattering,
        cr_maps,
        delay_ports,
        is_source,
        reduced: Vec::new(),
        li_order: part.li_blocks.concat(),
        cr_order: part.cr_blocks.concat(),
    };
    reduce_sources(sg)
}

/// Computes `(Ĝ, ê)` for every LI block.
pub fn reduce_sources(mut sg: SystemGraph) -> Result<SystemGraph> {
    let n = sg.n();
    let mut s_all = vec![0.0; n];
    let mut e_all = vec![0.0; n];
    for (k, m) in sg.cr_maps.iter().enumerate() {
        if let Some(src) = &m.source {
            for (j, &i) in sg.problem.partition.cr_blocks[k].iter().enumerate() {
                s_all[i] = src.s_diag[j];
                e_all[i] = src.e[j];
            }
        }
    }
    let mut reduced = Vec::with_capacity(sg.scattering.len());
    for (l, sb) in sg.scattering.iter().enumerate() {
        let ports = &sg.problem.partition.li_blocks[l];
        let (dl, sl): (Vec<usize>, Vec<usize>) = (0..ports.len()).partition(|&j| !sg.is_source[ports[j]]);
        let s: Vec<f64> = sl.iter().map(|&j| s_all[ports[j]]).collect();
        let e: Vec<f64> = sl.iter().map(|&j| e_all[ports[j]]).collect();
        let mut rb = reduce_block(&sb.g_matrix, &dl, &sl, &s, &e).map_err(|err| match err {
            Error::SingularLoop { condition, .. } => Error::SingularLoop { block: l, condition },
            other => other,
        })?;
        rb.delayed = dl.iter().map(|&j| ports[j]).collect();
        rb.sources = sl.iter().map(|&j| ports[j]).collect();
        reduced.push(rb);
    }
    sg.reduced = reduced;
    Ok(sg)
}

fn sub(g: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| g[(rows[i], cols[j])])
}

/// Eliminates the source ports `sl` of one block with local matrix `g`.
///
/// The returned block carries local port positions in `delayed`/`sources`.
pub fn reduce_block(
    g: &DMatrix<f64>,
    dl: &[usize],
    sl: &[usize],
    s: &[f64],
    e: &[f64],
) -> Result<ReducedBlock> {
    let s_diag = DVector::from_column_slice(s);
    let e_src = DVector::from_column_slice(e);
    let g_dd = sub(g, dl, dl);
    if sl.is_empty() {
        return Ok(ReducedBlock {
            delayed: dl.to_vec(),
            sources: Vec::new(),
            e_hat: DVector::zeros(dl.len()),
            g_hat: g_dd,
            src_gain: DMatrix::zeros(0, dl.len()),
            src_offset: DVector::zeros(0),
            s_diag,
            e_src,
        });
    }
    let g_ss = sub(g, sl, sl);
    let g_sd = sub(g, sl, dl);
    let g_ds = sub(g, dl, sl);
    let ns = sl.len();
    let loop_m = DMatrix::identity(ns, ns) - &g_ss * DMatrix::from_diagonal(&s_diag);
    let sv = loop_m.clone().svd(false, false).singular_values;
    let condition = if sv.min() > 0.0 { sv.max() / sv.min() } else { f64::INFINITY };
    if condition.is_nan() || condition >= SINGULAR_LOOP_CONDITION {
        return Err(Error::SingularLoop { block: 0, condition });
    }
    if condition > WARN_LOOP_CONDITION {
        warn!("source loop is ill-conditioned (condition estimate {condition:e})");
    }
    let lu = loop_m.lu();
    let solve = |rhs: DMatrix<f64>| lu.solve(&rhs).ok_or(Error::SingularLoop { block: 0, condition });
    let src_gain = solve(g_sd)?;
    let src_offset = solve(DMatrix::from_column_slice(ns, 1, (&g_ss * &e_src).as_slice()))?.column(0).into_owned();
    let s_mat = DMatrix::from_diagonal(&s_diag);
    let g_hat = g_dd + &g_ds * &s_mat * &src_gain;
    let e_hat = &g_ds * (&s_mat * &src_offset + &e_src);
    Ok(ReducedBlock {
        delayed: dl.to_vec(),
        sources: sl.to_vec(),
        g_hat,
        e_hat,
        src_gain,
        src_offset,
        s_diag,
        e_src,
    })
}
