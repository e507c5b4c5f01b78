//! Ground-truth simulation: input signals, network dynamics, integration.

pub mod integrate;
pub mod ode;
pub mod signal;

use thiserror::Error;

use crate::expr::{EvalError, InvertError};

pub use integrate::{grid_steps, integrate, substeps_for, IntegrateOptions, Trajectory};
pub use ode::{derive_ode, Dynamics, FnDynamics, NetworkOde};
pub use signal::{generate_signal, mix_seed, InputSignal, SignalSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("evaluating `{element}`: {source}")]
    Eval { element: String, source: EvalError },
    #[error("inverting `{element}`: {source}")]
    Invert { element: String, source: InvertError },
    #[error("state diverged at t = {time}")]
    Divergence { time: f64 },
    #[error("{0}")]
    Grid(String),
    #[error("{0}")]
    Dimension(String),
}
