use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("empty state space")]
    Empty,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },

    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("row {row} sums to 1 {deviation:+e}")]
    RowSumViolation { row: usize, deviation: f64 },

    #[error("metric is not symmetric at ({x}, {y}): {forward} vs {backward}")]
    AsymmetryError {
        x: usize,
        y: usize,
        forward: f64,
        backward: f64,
    },

    #[error("metric has nonzero diagonal entry {value} at {x}")]
    NonzeroDiagonal { x: usize, value: f64 },

    #[error("triangle inequality violated by {excess:e} for witness ({x}, {z}, {y})")]
    TriangleViolation {
        x: usize,
        z: usize,
        y: usize,
        excess: f64,
    },

    #[error("invalid tolerances: {0}")]
    InvalidTolerances(String),

    #[error("invalid transport instance: {0}")]
    InvalidInstance(String),

    #[error("transport simplex stalled after {iterations} pivots")]
    NumericalFailure { iterations: usize },

    #[error("transport solve failed for pair ({x}, {y}): {source}")]
    PairSolve {
        x: usize,
        y: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("exponent p = {0} must be >= 1")]
    InvalidExponent(f64),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("iteration collapsed to zero at step {iteration} (scale {lambda:e})")]
    DegenerateLimit { iteration: usize, lambda: f64 },

    #[error("iterate increased by {increase:e} at ({x}, {y}) in step {iteration}")]
    MonotonicityViolation {
        iteration: usize,
        x: usize,
        y: usize,
        increase: f64,
    },

    #[error("reference metric is not contracted by W_p (excess {excess:e} at ({x}, {y}))")]
    ReferenceNotContracted { x: usize, y: usize, excess: f64 },

    #[error("not an eigenfunction: |Ph - lambda h|_inf = {residual:e}")]
    NotAnEigenfunction { residual: f64 },

    #[error("eigenfunction must be non-negative and not identically zero")]
    NegativeEigenfunction,

    #[error("iterate {iteration} left the bracket at ({x}, {y}) by {excess:e}")]
    SandwichViolation {
        iteration: usize,
        x: usize,
        y: usize,
        excess: f64,
    },

    #[error("W_p(rho)({x}, {y}) = {value:e} on the zero set of rho")]
    ZeroSetViolation { x: usize, y: usize, value: f64 },

    #[error("p-th root transfer needs a converged p = 1 result")]
    NotConverged,

    #[error("p-th root residual {residual:e} exceeds its bound {bound:e}")]
    TransferResidual { residual: f64, bound: f64 },

    #[error("transport plans were not kept for pair ({x}, {y})")]
    MissingPlans { x: usize, y: usize },

    #[error("coupling misses the eigenrelation at ({x}, {y}) by {error:e}")]
    EigenrelationViolation { x: usize, y: usize, error: f64 },

    #[error("coupling marginal error {error:e} at ({x}, {y})")]
    MarginalViolation { x: usize, y: usize, error: f64 },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("partition is not lumpable")]
    NotLumpable,

    #[error("exhaustive partition search limited to 12 states, got {n}")]
    BudgetExceeded { n: usize },

    #[error("parameter out of range: {0}")]
    ParameterRange(String),

    #[error("parity metric needs an even torus, got L = {0}")]
    OddTorus(usize),

    #[error("spin system of {0} spins exceeds the 12-spin cap")]
    SizeCap(usize),

    #[error("state {0} cannot reach the absorbing set")]
    UnreachableAbsorber(usize),

    #[error("series remainder {remainder:e} is too large for a useful bound")]
    DivergentTail { remainder: f64 },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
