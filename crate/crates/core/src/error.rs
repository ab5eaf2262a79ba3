use thiserror::Error;

use crate::sampler::ChainDiagnostics;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate generator: all couplings vanish")]
    DegenerateGenerator,

    #[error("operator is not diagonal in the computational basis: {0}")]
    NotDiagonal(String),

    #[error("site count mismatch: expected {expected}, got {got}")]
    SiteMismatch { expected: usize, got: usize },

    #[error("parameter vector has length {got}, ansatz expects {expected}")]
    ParameterLength { expected: usize, got: usize },

    #[error("non-finite parameter at index {0}")]
    NonFiniteParameter(usize),

    /// A vanishing amplitude sits in the denominator of a local estimator.
    /// Estimators built on such configurations acquire unknown biases.
    #[error("ill-defined estimator: vanishing amplitude at configuration {config:#b} ({context})")]
    IllDefinedEstimator { config: u64, context: &'static str },

    #[error("stuck chain: acceptance rate {acceptance_rate:.3e} below floor {floor:.1e}")]
    StuckChain {
        acceptance_rate: f64,
        floor: f64,
        diagnostics: Box<ChainDiagnostics>,
    },

    #[error("Hilbert space of {n_sites} sites exceeds cap of {cap} sites ({required_bytes} bytes required)")]
    HilbertSpaceTooLarge {
        n_sites: usize,
        cap: usize,
        required_bytes: u128,
    },

    #[error("{n_params} parameters exceeds the solver cap of {cap}")]
    TooManyParameters { n_params: usize, cap: usize },

    #[error("rank-zero geometric tensor: all eigenvalues below cutoff {cutoff:.3e}")]
    RankZeroGeometricTensor { cutoff: f64 },

    /// The adaptive integrator could not meet its error target even at the
    /// minimal step. Often a sign of a nonanalytic point in the dynamics.
    #[error("step underflow at t={t}: error {error:.3e} > target {target:.3e} at tau={tau:.3e}")]
    StepUnderflow {
        t: f64,
        tau: f64,
        error: f64,
        target: f64,
    },

    #[error("propagator branching budget exceeded ({needed} > {budget} configurations); reduce circuit depth")]
    BranchingBudgetExceeded { needed: usize, budget: usize },

    #[error("term on {locality} sites cannot be split into two-site factors")]
    LocalityTooHigh { locality: usize },

    #[error("divergent infidelity {value:.4} (std error {std_error:.2e}) at iteration {iteration}")]
    DivergentInfidelity {
        value: f64,
        std_error: f64,
        iteration: usize,
    },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
