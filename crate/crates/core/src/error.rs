use thiserror::Error;

use crate::ode::Trajectory;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An input outside the domain of the operation (non-finite state,
    /// non-positive parameter, mismatched lengths, ...).
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{name}` = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },

    /// The adaptive integrator could not meet the tolerance budget. The
    /// trajectory up to the failure point is kept.
    #[error("integration failed at t = {t}: step size {h:e} underflowed")]
    IntegrationFailure {
        t: f64,
        h: f64,
        partial: Box<Trajectory>,
    },

    #[error("Euler-Maruyama step produced a non-finite state at t = {t}")]
    StepOverflow { t: f64 },

    #[error("singular expression: {0}")]
    Singularity(&'static str),

    #[error("parameter grid too coarse: equilibrium count changes by {change} in [{lo}, {hi}]")]
    GridTooCoarse { lo: f64, hi: f64, change: i64 },

    #[error("internal consistency check failed: {0}")]
    Consistency(String),

    #[error("ensemble failed: {failed} of {total} paths aborted")]
    Ensemble { failed: usize, total: usize },
}
