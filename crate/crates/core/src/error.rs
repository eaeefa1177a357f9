use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// An index is missing from, duplicated in, or out of range of a partition.
    #[error("coverage error: {0}")]
    Coverage(String),

    /// An LI block's input/output split does not add up to its length.
    #[error("split error: LI block {block} has length {len} but split ({inputs}, {outputs})")]
    Split {
        block: usize,
        len: usize,
        inputs: usize,
        outputs: usize,
    },

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("dimension mismatch: {0}")]
    DimMismatch(String),

    #[error("transform for index {index} is singular")]
    SingularTransform { index: usize },

    /// A per-index 2x2 matrix does not carry 2ab onto d^2 - c^2.
    #[error("transform for index {index} does not preserve the conjugate quadratic form")]
    InvalidTransform { index: usize },

    #[error("block {block} is not in canonical form")]
    NotCanonical { block: usize },

    #[error("not reducible: {0}")]
    NotReducible(String),

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("parametrization is not invertible for coordinate {coordinate} on [{lo}, {hi}]")]
    NonInvertibleParametrization { coordinate: usize, lo: f64, hi: f64 },

    #[error("CR block {block}: {source}")]
    Derivation {
        block: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("source loop in LI block {block} is singular (condition estimate {condition:e})")]
    SingularLoop { block: usize, condition: f64 },

    #[error("non-finite state at tick {tick}, port {port}")]
    NonFiniteState { tick: u64, port: usize },

    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),

    #[error("KKT system is singular")]
    SingularKkt,

    #[error("unsupported: {0}")]
    Unsupported(String),

    /// Problem file error anchored to a line.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Validation error raised by an entry of a problem file.
    #[error("line {line}: {source}")]
    Located {
        line: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// The error with any line anchoring stripped.
    pub fn root(&self) -> &Error {
        match self {
            Error::Located { source, .. } => source.root(),
            e => e,
        }
    }

    pub(crate) fn in_block(self, block: usize) -> Self {
        Error::Derivation {
            block,
            source: Box::new(self),
        }
    }
}
