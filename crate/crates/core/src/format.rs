//! TOML problem files and solution files.
//!
//! ```toml
//! n = 2
//!
//! [[cr]]
//! kind = "quadratic"
//! indices = [0]
//! q = 1.0
//!
//! [[cr]]
//! kind = "constant"
//! indices = [1]
//! value = 1.0
//!
//! [[li]]
//! kind = "equality"
//! inputs = [0]
//! outputs = [1]
//! ```
//!
//! CR kinds: `quadratic` (`q`, optional `linear`), `linear` (`slope`),
//! `constant` (`value`), `absolute-value` (`weight`), `nonnegative`,
//! `box` (optional `lo`, `hi`), `zero`. LI kinds: `equality`, `replicator`,
//! `negator`, `matrix` (`matrix`, one row per output). Optional
//! `[[transform]]` entries override the per-index transform with
//! `orientation = "flipped"` or a 2x2 `matrix`. `require_passive` (default
//! true) rejects catalog parameters that make a map expansive.

use std::ops::Range;

use nalgebra::{DMatrix, Matrix2};
use serde::{Deserialize, Serialize};
use toml::Spanned;

use crate::catalog::CatalogCr;
use crate::error::{Error, Result};
use crate::executor::RunStatus;
use crate::li::{catalog_li, LiKind};
use crate::partition::{Orientation, StateVector, TransformConvention};
use crate::problem::{CrElement, LiBlock, Problem};
use crate::recovery::Solution;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCr {
    kind: String,
    indices: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    linear: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    weight: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    lo: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    hi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawLi {
    kind: String,
    inputs: Vec<usize>,
    outputs: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransform {
    index: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    orientation: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    matrix: Option<[[f64; 2]; 2]>,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFile {
    n: Spanned<usize>,
    #[serde(default = "yes")]
    require_passive: bool,
    #[serde(default)]
    cr: Vec<Spanned<RawCr>>,
    #[serde(default)]
    li: Vec<Spanned<RawLi>>,
    #[serde(default)]
    transform: Vec<Spanned<RawTransform>>,
}

#[derive(Debug, Serialize)]
struct OutFile {
    n: usize,
    require_passive: bool,
    cr: Vec<RawCr>,
    li: Vec<RawLi>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    transform: Vec<RawTransform>,
}

/// A parsed problem file.
#[derive(Debug, Clone)]
pub struct ProblemFile {
    pub problem: Problem,
    pub convention: TransformConvention,
    pub require_passive: bool,
}

fn line_of(src: &str, span: Range<usize>) -> usize {
    src[..span.start.min(src.len())].matches('\n').count() + 1
}

fn at(line: usize, e: Error) -> Error {
    Error::Located { line, source: Box::new(e) }
}

fn need(v: Option<f64>, kind: &str, field: &str) -> Result<f64> {
    v.ok_or_else(|| Error::BadParams(format!("{kind} needs `{field}`")))
}

fn cr_element(raw: &RawCr) -> Result<CatalogCr> {
    let k = raw.kind.as_str();
    let el = match k {
        "quadratic" => CatalogCr::Quadratic {
            q: need(raw.q, k, "q")?,
            linear: raw.linear.unwrap_or(0.0),
        },
        "linear" => CatalogCr::Linear { slope: need(raw.slope, k, "slope")? },
        "constant" => CatalogCr::Constant { value: need(raw.value, k, "value")? },
        "absolute-value" => CatalogCr::AbsoluteValue { weight: need(raw.weight, k, "weight")? },
        "nonnegative" => CatalogCr::NonNegative,
        "box" => CatalogCr::Box {
            lo: raw.lo.unwrap_or(f64::NEG_INFINITY),
            hi: raw.hi.unwrap_or(f64::INFINITY),
        },
        "zero" => CatalogCr::Zero,
        other => return Err(Error::BadParams(format!("unknown CR kind `{other}`"))),
    };
    let allowed: &[&str] = match k {
        "quadratic" => &["q", "linear"],
        "linear" => &["slope"],
        "constant" => &["value"],
        "absolute-value" => &["weight"],
        "box" => &["lo", "hi"],
        _ => &[],
    };
    let present = [
        ("q", raw.q),
        ("linear", raw.linear),
        ("slope", raw.slope),
        ("value", raw.value),
        ("weight", raw.weight),
        ("lo", raw.lo),
        ("hi", raw.hi),
    ];
    if let Some((name, _)) = present.iter().find(|(n, v)| v.is_some() && !allowed.contains(n)) {
        return Err(Error::BadParams(format!("`{name}` does not apply to {k}")));
    }
    Ok(el)
}

fn li_block(raw: &RawLi) -> Result<LiBlock> {
    let (ni, no) = (raw.inputs.len(), raw.outputs.len());
    if raw.kind != "matrix" && raw.matrix.is_some() {
        return Err(Error::BadParams(format!("`matrix` does not apply to {}", raw.kind)));
    }
    let kind = match raw.kind.as_str() {
        "equality" | "negator" => {
            if ni != no {
                return Err(Error::BadParams(format!(
                    "{} needs as many outputs as inputs ({ni} vs {no})",
                    raw.kind
                )));
            }
            if raw.kind == "equality" {
                LiKind::EqualityChain { dim: ni }
            } else {
                LiKind::Negator { dim: ni }
            }
        }
        "replicator" => {
            if ni != 1 {
                return Err(Error::BadParams(format!("replicator needs one input, got {ni}")));
            }
            LiKind::Replicator { outputs: no }
        }
        "matrix" => {
            let rows = raw.matrix.as_ref().ok_or_else(|| Error::BadParams("matrix LI needs `matrix`".into()))?;
            if rows.len() != no || rows.iter().any(|r| r.len() != ni) {
                return Err(Error::BadParams(format!("matrix must be {no}x{ni} (outputs x inputs)")));
            }
            LiKind::General(DMatrix::from_fn(no, ni, |r, c| rows[r][c]))
        }
        other => return Err(Error::BadParams(format!("unknown LI kind `{other}`"))),
    };
    catalog_li(kind)
}

fn transform_matrix(raw: &RawTransform) -> Result<Matrix2<f64>> {
    match (&raw.orientation, &raw.matrix) {
        (Some(o), None) => match o.as_str() {
            "standard" => Ok(Orientation::Standard.matrix()),
            "flipped" => Ok(Orientation::Flipped.matrix()),
            other => Err(Error::BadParams(format!("unknown orientation `{other}`"))),
        },
        (None, Some(m)) => Ok(Matrix2::new(m[0][0], m[0][1], m[1][0], m[1][1])),
        _ => Err(Error::BadParams("transform needs exactly one of `orientation`, `matrix`".into())),
    }
}

/// Parses and validates a problem file.
pub fn parse_problem_file(src: &str) -> Result<ProblemFile> {
    let raw: RawFile = toml::from_str(src).map_err(|e| Error::Parse {
        line: e.span().map_or(1, |s| line_of(src, s)),
        message: e.message().to_string(),
    })?;
    let n = *raw.n.get_ref();
    let n_line = line_of(src, raw.n.span());
    let mut owner_cr = vec![None; n];
    let mut owner_li = vec![None; n];
    let claim = |owners: &mut Vec<Option<usize>>, idx: &[usize], line: usize, what: &str| -> Result<()> {
        for &i in idx {
            if i >= n {
                return Err(at(line, Error::Coverage(format!("{what} index {i} out of range for n = {n}"))));
            }
            if let Some(prev) = owners[i] {
                return Err(at(
                    line,
                    Error::Coverage(format!("{what} index {i} already claimed on line {prev}")),
                ));
            }
            owners[i] = Some(line);
        }
        Ok(())
    };

    let mut crs = Vec::with_capacity(raw.cr.len());
    for entry in &raw.cr {
        let line = line_of(src, entry.span());
        let rc = entry.get_ref();
        claim(&mut owner_cr, &rc.indices, line, "CR")?;
        let el = cr_element(rc).and_then(|el| el.validate(raw.require_passive).map(|_| el));
        crs.push((rc.indices.clone(), CrElement::Catalog(el.map_err(|e| at(line, e))?)));
    }
    let mut lis = Vec::with_capacity(raw.li.len());
    for entry in &raw.li {
        let line = line_of(src, entry.span());
        let rl = entry.get_ref();
        let ports: Vec<usize> = rl.inputs.iter().chain(&rl.outputs).copied().collect();
        claim(&mut owner_li, &ports, line, "LI")?;
        let li = li_block(rl).map_err(|e| at(line, e))?;
        lis.push((rl.inputs.clone(), rl.outputs.clone(), li));
    }
    for (what, owners) in [("CR", &owner_cr), ("LI", &owner_li)] {
        if let Some(i) = owners.iter().position(Option::is_none) {
            return Err(at(n_line, Error::Coverage(format!("index {i} is not covered by any {what} block"))));
        }
    }
    let mut convention = TransformConvention::standard();
    for entry in &raw.transform {
        let line = line_of(src, entry.span());
        let rt = entry.get_ref();
        if rt.index >= n {
            return Err(at(line, Error::Coverage(format!("transform index {} out of range", rt.index))));
        }
        convention = transform_matrix(rt)
            .and_then(|m| convention.with_override(rt.index, m))
            .map_err(|e| at(line, e))?;
    }
    let problem = Problem::new(n, crs, lis).map_err(|e| at(n_line, e))?;
    Ok(ProblemFile {
        problem,
        convention,
        require_passive: raw.require_passive,
    })
}

pub fn parse_problem(src: &str) -> Result<Problem> {
    parse_problem_file(src).map(|f| f.problem)
}

fn raw_cr(el: &CrElement, indices: &[usize]) -> Result<RawCr> {
    let CrElement::Catalog(c) = el else {
        return Err(Error::Unsupported("only catalog CR blocks can be written".into()));
    };
    let base = RawCr {
        indices: indices.to_vec(),
        ..RawCr::default()
    };
    let finite = |v: f64| v.is_finite().then_some(v);
    Ok(match *c {
        CatalogCr::Quadratic { q, linear } => RawCr {
            kind: "quadratic".into(),
            q: Some(q),
            linear: (linear != 0.0).then_some(linear),
            ..base
        },
        CatalogCr::Linear { slope } => RawCr { kind: "linear".into(), slope: Some(slope), ..base },
        CatalogCr::Constant { value } => RawCr { kind: "constant".into(), value: Some(value), ..base },
        CatalogCr::AbsoluteValue { weight } => RawCr {
            kind: "absolute-value".into(),
            weight: Some(weight),
            ..base
        },
        CatalogCr::NonNegative => RawCr { kind: "nonnegative".into(), ..base },
        CatalogCr::Box { lo, hi } => RawCr {
            kind: "box".into(),
            lo: finite(lo),
            hi: finite(hi),
            ..base
        },
        CatalogCr::Zero => RawCr { kind: "zero".into(), ..base },
    })
}

fn raw_li(li: &LiBlock, inputs: &[usize], outputs: &[usize]) -> RawLi {
    let a = &li.a_matrix;
    let (r, c) = a.shape();
    let square = r == c && r > 0;
    let kind = if square && *a == DMatrix::identity(r, c) {
        "equality"
    } else if square && *a == -DMatrix::<f64>::identity(r, c) {
        "negator"
    } else if c == 1 && r > 0 && a.iter().all(|&v| v == 1.0) {
        "replicator"
    } else {
        "matrix"
    };
    RawLi {
        kind: kind.into(),
        inputs: inputs.to_vec(),
        outputs: outputs.to_vec(),
        matrix: (kind == "matrix").then(|| (0..r).map(|i| a.row(i).iter().copied().collect()).collect()),
    }
}

/// Writes a problem file that parses back to the same model.
pub fn emit_problem(pf: &ProblemFile) -> Result<String> {
    let p = &pf.problem;
    let part = &p.partition;
    let cr = p
        .crs
        .iter()
        .enumerate()
        .map(|(k, el)| raw_cr(el, &part.cr_blocks[k]))
        .collect::<Result<Vec<_>>>()?;
    let li = p
        .lis
        .iter()
        .enumerate()
        .map(|(l, li)| raw_li(li, part.li_inputs(l), part.li_outputs(l)))
        .collect();
    let transform = (0..p.n())
        .filter(|&i| pf.convention.has_override(i))
        .map(|i| {
            let m = pf.convention.matrix(i);
            let named = [("standard", Orientation::Standard), ("flipped", Orientation::Flipped)]
                .into_iter()
                .find(|(_, o)| o.matrix() == m);
            RawTransform {
                index: i,
                orientation: named.map(|(s, _)| s.to_string()),
                matrix: named.is_none().then(|| [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]),
            }
        })
        .collect();
    let out = OutFile {
        n: p.n(),
        require_passive: pf.require_passive,
        cr,
        li,
        transform,
    };
    toml::to_string(&out).map_err(|e| Error::Unsupported(e.to_string()))
}

/// Solution file contents; `c` and `d` double as a saved state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionFile {
    pub status: String,
    pub iterations: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub primal_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_cost: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gap: Option<f64>,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub d: Vec<f64>,
}

impl SolutionFile {
    pub fn new(sol: &Solution, state: &StateVector, status: RunStatus, iterations: u64) -> Self {
        Self {
            status: status.as_str().into(),
            iterations,
            primal_cost: sol.primal_cost,
            dual_cost: sol.dual_cost,
            gap: sol.gap,
            primal_residual: sol.primal_residual,
            dual_residual: sol.dual_residual,
            a: sol.a_star.clone(),
            b: sol.b_star.clone(),
            c: state.c.clone(),
            d: state.d.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("solution fields are plain numbers")
    }

    pub fn state(&self) -> StateVector {
        StateVector { c: self.c.clone(), d: self.d.clone() }
    }
}

/// Reads the state `(c, d)` from a solution file.
pub fn parse_state(src: &str) -> Result<StateVector> {
    #[derive(Deserialize)]
    struct Raw {
        c: Vec<f64>,
        d: Vec<f64>,
    }
    let raw: Raw = toml::from_str(src).map_err(|e| Error::Parse {
        line: e.span().map_or(1, |s| line_of(src, s)),
        message: e.message().to_string(),
    })?;
    if raw.c.len() != raw.d.len() {
        return Err(Error::LengthMismatch { expected: raw.c.len(), got: raw.d.len() });
    }
    Ok(StateVector { c: raw.c, d: raw.d })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const MINIMAL: &str = r#"n = 2

[[cr]]
kind = "quadratic"
indices = [0]
q = 1.0

[[cr]]
kind = "constant"
indices = [1]
value = 1.0

[[li]]
kind = "equality"
inputs = [0]
outputs = [1]
"#;

    #[test]
    fn minimal_file() {
        let p = parse_problem(MINIMAL).unwrap();
        assert_eq!(p.n(), 2);
        assert_eq!(p.crs.len(), 2);
        assert_eq!(p.lis.len(), 1);
        assert!(matches!(p.crs[1], CrElement::Catalog(CatalogCr::Constant { value }) if value == 1.0));
    }

    #[test]
    fn overlapping_indices() {
        let src = MINIMAL.replace("indices = [1]", "indices = [0]");
        let err = parse_problem(&src).unwrap_err();
        assert!(matches!(err.root(), Error::Coverage(_)), "{err}");
        assert!(matches!(err, Error::Located { line: 8, .. }), "{err}");
    }

    #[test]
    fn uncovered_index() {
        let src = MINIMAL.replace("n = 2", "n = 3");
        let err = parse_problem(&src).unwrap_err();
        assert!(matches!(err.root(), Error::Coverage(_)));
    }

    #[test]
    fn negative_curvature_with_line() {
        let src = MINIMAL.replace("q = 1.0", "q = -0.5");
        let err = parse_problem(&src).unwrap_err();
        assert!(matches!(err, Error::Located { line: 3, .. }), "{err}");
        assert!(matches!(err.root(), Error::BadParams(_)));
        let relaxed = format!("require_passive = false\n{MINIMAL}").replace("q = 1.0", "q = -0.5");
        assert!(parse_problem(&relaxed).is_ok());
    }

    #[test]
    fn syntax_error_line() {
        let src = MINIMAL.replace("value = 1.0", "value = ");
        let err = parse_problem(&src).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 11, .. }), "{err}");
    }

    #[test]
    fn unknown_fields_rejected() {
        let src = MINIMAL.replace("value = 1.0", "value = 1.0\nslope = 2.0");
        assert!(matches!(parse_problem(&src).unwrap_err().root(), Error::BadParams(_)));
        let src = MINIMAL.replace("value = 1.0", "value = 1.0\ncolour = 2.0");
        assert!(matches!(parse_problem(&src).unwrap_err(), Error::Parse { .. }));
    }

    #[test]
    fn emit_round_trip() {
        let src = r#"n = 7
require_passive = false

[[cr]]
kind = "quadratic"
indices = [0, 1]
q = 0.5
linear = -1.25

[[cr]]
kind = "box"
indices = [2]
lo = 0.0

[[cr]]
kind = "absolute-value"
indices = [3]
weight = 2.0

[[cr]]
kind = "zero"
indices = [4, 5]

[[cr]]
kind = "nonnegative"
indices = [6]

[[li]]
kind = "matrix"
inputs = [0, 1, 2]
outputs = [4, 5]
matrix = [[1.0, -1.0, 0.0], [0.0, 1.0, -1.0]]

[[li]]
kind = "replicator"
inputs = [3]
outputs = [6]

[[transform]]
index = 6
orientation = "flipped"
"#;
        let pf = parse_problem_file(src).unwrap();
        let text = emit_problem(&pf).unwrap();
        let again = parse_problem_file(&text).unwrap();
        assert_eq!(again.problem.partition, pf.problem.partition);
        assert_eq!(again.problem.lis, pf.problem.lis);
        assert_eq!(again.convention, pf.convention);
        assert_eq!(emit_problem(&again).unwrap(), text);
        // replicator with one output is the identity
        assert!(text.contains("kind = \"equality\""));
    }

    #[test]
    fn state_from_solution() {
        let sf = SolutionFile {
            status: "converged".into(),
            iterations: 3,
            primal_cost: Some(0.5),
            dual_cost: None,
            gap: None,
            primal_residual: 0.0,
            dual_residual: 0.0,
            a: vec![1.0],
            b: vec![2.0],
            c: vec![0.1],
            d: vec![-0.2],
        };
        let text = sf.to_toml();
        assert_eq!(parse_state(&text).unwrap(), sf.state());
        let back: SolutionFile = toml::from_str(&text).unwrap();
        assert_eq!(back, sf);
    }

    fn catalog_strategy() -> impl Strategy<Value = CatalogCr> {
        let v = -5.0..5.0f64;
        prop_oneof![
            (0.0..5.0f64, v.clone()).prop_map(|(q, linear)| CatalogCr::Quadratic { q, linear }),
            v.clone().prop_map(|slope| CatalogCr::Linear { slope }),
            v.clone().prop_map(|value| CatalogCr::Constant { value }),
            (0.0..5.0f64).prop_map(|weight| CatalogCr::AbsoluteValue { weight }),
            Just(CatalogCr::NonNegative),
            (v.clone(), 0.1..3.0f64).prop_map(|(lo, w)| CatalogCr::Box { lo, hi: lo + w }),
            Just(CatalogCr::Zero),
        ]
    }

    proptest! {
        #[test]
        fn round_trip_random(
            els in proptest::collection::vec(catalog_strategy(), 2..6),
            entries in proptest::collection::vec(-3.0..3.0f64, 8),
        ) {
            // element k sits on index k; one matrix LI maps the first half
            // onto the rest
            let n = els.len();
            let ni = n / 2;
            let no = n - ni;
            let a = DMatrix::from_fn(no, ni, |r, c| entries[(r * ni + c) % entries.len()]);
            let p = Problem::new(
                n,
                els.iter().enumerate().map(|(k, &e)| (vec![k], CrElement::Catalog(e))).collect(),
                vec![((0..ni).collect(), (ni..n).collect(), LiBlock::new(a))],
            ).unwrap();
            let pf = ProblemFile { problem: p, convention: TransformConvention::standard(), require_passive: true };
            let text = emit_problem(&pf).unwrap();
            let back = parse_problem_file(&text).unwrap();
            prop_assert_eq!(&back.problem.partition, &pf.problem.partition);
            prop_assert_eq!(&back.problem.lis, &pf.problem.lis);
            for (x, y) in back.problem.crs.iter().zip(&pf.problem.crs) {
                match (x, y) {
                    (CrElement::Catalog(x), CrElement::Catalog(y)) => prop_assert_eq!(x, y),
                    _ => prop_assert!(false),
                }
            }
        }
    }
}
