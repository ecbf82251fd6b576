use thiserror::Error;

/// Errors surfaced by chain construction and the functional computations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("kernel is not row-stochastic: row {row} sums to {sum}")]
    NotStochastic { row: usize, sum: f64 },

    #[error("kernel has a negative entry at ({row}, {col}): {value}")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("chain is not irreducible: state {state} is not reachable from state 0")]
    NotIrreducible { state: usize },

    #[error(
        "chain is not reversible: worst detailed-balance violation at ({x}, {y}) \
         with |pi(x)P(x,y) - pi(y)P(y,x)| = {magnitude}"
    )]
    NotReversible { x: usize, y: usize, magnitude: f64 },

    #[error("weight matrix is not symmetric: worst violation at ({x}, {y}) of {magnitude}")]
    NotSymmetric { x: usize, y: usize, magnitude: f64 },

    #[error("weight support is disconnected: state {state} unreachable from state 0")]
    Disconnected { state: usize },

    #[error(
        "projection is not lumpable: state {state} has row mass {actual} into block \
         {block} but the block representative has {expected}"
    )]
    NotLumpable {
        state: usize,
        block: usize,
        actual: f64,
        expected: f64,
    },

    #[error("lumping map does not assign state {state}")]
    PartialLumping { state: usize },

    #[error("cannot remove holding: state {state} is absorbing (P(x,x) = 1)")]
    AbsorbingState { state: usize },

    #[error("conditioning event has probability zero on the requested support")]
    EmptyConditioning,

    #[error("matrix dimensions do not match: {0}")]
    DimensionMismatch(String),

    #[error("eigendecomposition failed: {0}")]
    EigenFailure(String),

    #[error("time must be nonnegative, got {0}")]
    NegativeTime(f64),

    #[error("stationary distribution vanishes at state {state}")]
    ZeroStationaryMass { state: usize },

    #[error("epsilon must lie in (0, 1), got {0}")]
    EpsOutOfRange(f64),

    #[error("probability level must lie in (0, 1), got {0}")]
    POutOfRange(f64),

    #[error("target set is empty")]
    EmptyTarget,

    #[error("exact subset search is capped at {cap} states, chain has {states}")]
    TooLargeForExact { states: usize, cap: usize },

    #[error("no candidate set meets the measure threshold {threshold}")]
    EmptyCandidateFamily { threshold: f64 },

    #[error("weights do not describe a birth-death chain: entry ({row}, {col}) off the tridiagonal")]
    NotBirthDeath { row: usize, col: usize },

    #[error("shift parameter {w} is below the feasible floor {floor}")]
    InfeasibleW { w: f64, floor: f64 },

    #[error("this certificate requires exact worst-set mode")]
    ExactModeRequired,

    #[error("unknown chain family `{0}`")]
    UnknownFamily(String),

    #[error("bad family parameters: {0}")]
    BadParams(String),

    #[error("invalid chain spec: {0}")]
    BadSpec(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),
}

pub type Result<T> = std::result::Result<T, Error>;
