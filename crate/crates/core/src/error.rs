use thiserror::Error;

/// Which side of a matrix a diagnostic refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Row,
    Column,
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Axis::Row => f.write_str("row"),
            Axis::Column => f.write_str("column"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("matrix must be at least 2x2, got {rows}x{cols}")]
    TooSmall { rows: usize, cols: usize },

    #[error("entry ({row}, {col}) is {value}; entries must be finite and non-negative")]
    InvalidEntry { row: usize, col: usize, value: f64 },

    #[error("{axis} {index} has no positive entry")]
    EmptyLine { axis: Axis, index: usize },

    #[error("invalid marginals: {0}")]
    InvalidMarginals(String),

    #[error("matrix is not column-fitted: max |C_j - 1| = {max_deviation:e}")]
    NotColumnFitted { max_deviation: f64 },

    #[error("trace too short: need {needed} even iterates, found {found}")]
    TraceTooShort { needed: usize, found: usize },

    #[error("instance is feasible; no cause of incompatibility exists")]
    Feasible,

    #[error("instance is infeasible; cause {rows:?} x {cols:?}")]
    Infeasible { rows: Vec<usize>, cols: Vec<usize> },

    #[error(
        "ill-conditioned instance: a(A) - b(B^c) = {gap:e} for A = {rows:?}, B = {cols:?} straddles the criticality tolerance"
    )]
    IllConditioned {
        rows: Vec<usize>,
        cols: Vec<usize>,
        gap: f64,
    },

    #[error("{what} has {size} elements; exhaustive search is capped at {cap}")]
    TooLarge {
        what: &'static str,
        size: usize,
        cap: usize,
    },

    #[error("matrix is not stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("matrix is not doubly stochastic: column {col} sums to {sum}")]
    NotDoublyStochastic { col: usize, sum: f64 },

    #[error("diagonal entry {index} is {value}, below gamma = {gamma}")]
    DiagonalBelowGamma {
        index: usize,
        value: f64,
        gamma: f64,
    },

    #[error("index {index} out of range 1..={max}")]
    OutOfRange { index: usize, max: usize },

    #[error("product trace has not converged: tail variation {tail_variation:e}")]
    NotConverged { tail_variation: f64 },

    #[error("invariant violated: {0}")]
    InvariantViolation(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors that signal a broken theorem-level invariant (a bug
    /// or a numerically ill-conditioned instance) rather than bad input.
    pub fn is_internal(&self) -> bool {
        matches!(
            self,
            Error::InvariantViolation(_) | Error::IllConditioned { .. }
        )
    }
}
