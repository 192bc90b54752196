//! First- and second-order optimizers: Adam, optimistic Adam, L-BFGS, and an
//! early-stopping controller.

mod adam;
mod early_stop;
mod lbfgs;

pub use adam::{AdamConfig, AdamState, OAdamState};
pub use early_stop::{EarlyStop, StopDecision};
pub use lbfgs::{lbfgs_minimize, LbfgsConfig, LbfgsResult, LbfgsState, LbfgsStatus};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient at coordinate {index}")]
    NonFiniteGradient { index: usize },
    #[error("shape mismatch: optimizer tracks {expected} parameters, got {actual}")]
    ShapeMismatch { expected: usize, actual: usize },
    #[error("objective is not finite at the initial point")]
    NonFiniteStart,
}

pub(crate) fn check_gradient(grad: &[f64]) -> Result<(), OptimError> {
    match grad.iter().position(|g| !g.is_finite()) {
        Some(index) => Err(OptimError::NonFiniteGradient { index }),
        None => Ok(()),
    }
}
