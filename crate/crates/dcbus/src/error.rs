//! Error types shared across the crate.
//!
//! Errors are split by who can fix them: [`ModelError`] means the caller
//! handed a model function inconsistent data (wrong lengths, non-finite
//! values, parameters outside their physical domain), [`SimError`] wraps a
//! whole simulation run and adds failures that only show up while stepping.

use thiserror::Error;

/// Invalid input to a model-level function.
#[derive(Debug, Error)]
pub enum ModelError {
    /// A parameter violates its physical domain (e.g. a non-positive
    /// inductance).
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    /// Two quantities that must agree in length do not.
    #[error("{what}: expected length {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    /// An input carried a NaN or infinity.
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
}

/// Failure of a simulation run.
#[derive(Debug, Error)]
pub enum SimError {
    /// Bad model data or mutually inconsistent configuration.
    #[error(transparent)]
    Model(#[from] ModelError),

    /// The state left the representable range while stepping. Reported with
    /// the step index and simulated time so the blow-up can be located.
    #[error("state became non-finite at step {step} (t = {t_s:.6e} s)")]
    Diverged { step: usize, t_s: f64 },
}
