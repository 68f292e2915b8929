//! Biproportional fitting (the iterative proportional fitting procedure)
//! with structural diagnosis of the instance: feasibility certificates,
//! the fast/slow/divergent trichotomy, the block decomposition and both
//! limit points of divergent instances, and checks on infinite products
//! of stochastic matrices.

pub mod error;
mod flow;
pub mod ipfp;
pub mod matrix;
pub mod products;
pub mod structure;

pub use error::{Axis, Error, Result};
pub use ipfp::{run, Ipfp, IterationTrace, StopReason, StoppingRule};
pub use matrix::{
    f_s, kl_divergence, l1_error, ratio_vectors, t_c, t_r, FittingProblem, Marginals, Matrix,
    NonNegMatrix, RatioVectors, SupportPattern,
};
pub use products::{AssumptionCheck, ProductTrace, StochasticMatrix};
pub use structure::{
    block_structure, classify, feasible, limit_points, maximal_support, Behavior, BlockStructure,
    Cause, CauseKind, Certificate, Classification, Feasibility, LimitPair,
};

/// Seed for randomized checks unless `BIPFIT_SEED` says otherwise.
pub const DEFAULT_SEED: u64 = 0x5eed_2013;
