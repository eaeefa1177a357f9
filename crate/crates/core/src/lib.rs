//! Fixed-point solver for primal/dual stationarity built from scattering
//! interconnections.
//!
//! A problem is a set of constitutive relations (CRs), each a cost block
//! over some global indices, coupled by linear interconnections (LIs) that
//! impose `a_o = A a_i` and `b_i = −Aᵀ b_o`. Each index pair `(a, b)` is
//! mapped to waves `(c, d)`, which turns the LIs into orthonormal matrices
//! and the CRs into memoryless maps `c = m(d)`. Iterating the loop through
//! delays drives it to a fixed point whose inverse image is a stationary
//! point of the primal and dual costs.
//!
//! ```
//! use scatterflow::{assemble, run, recover, parse_problem_file, Schedule};
//!
//! let src = r#"
//! n = 2
//! [[cr]]
//! kind = "quadratic"
//! indices = [0]
//! q = 2.0
//! [[cr]]
//! kind = "constant"
//! indices = [1]
//! value = 3.0
//! [[li]]
//! kind = "equality"
//! inputs = [0]
//! outputs = [1]
//! "#;
//! let pf = parse_problem_file(src).unwrap();
//! let sg = assemble(&pf.problem, &pf.convention).unwrap();
//! let (state, _) = run(&sg, &Schedule::synchronous(), None).unwrap();
//! let sol = recover(&sg, &state).unwrap();
//! assert!((sol.a_star[0] - 3.0).abs() < 1e-8);
//! ```

pub mod assembly;
pub mod catalog;
pub mod cr;
pub mod error;
pub mod executor;
pub mod format;
pub mod li;
pub mod oracle;
pub mod partition;
pub mod problem;
pub mod recovery;

pub use assembly::{assemble, reduce_sources, SystemGraph};
pub use catalog::CatalogCr;
pub use cr::{catalog_cr, classify_map, derive_cr, Classification, CrMap};
pub use error::{Error, Result};
pub use executor::{run, step, verify_fixed_point, Mode, RunStatus, Schedule, Trace};
pub use format::{emit_problem, parse_problem, parse_problem_file, ProblemFile, SolutionFile};
pub use li::{build_scattering, catalog_li, LiKind, ScatteringBlock};
pub use oracle::{grid_solve, kkt_solve, GridProblem, QuadraticProblem};
pub use partition::{forward_transform, inverse_transform, IndexPartition, Orientation, StateVector, TransformConvention};
pub use problem::{CanonicalCr, CrElement, LiBlock, Problem};
pub use recovery::{recover, stationarity_report, Solution, StationarityReport};
