//! Function approximation: MLPs with manual reverse-mode gradients, the
//! agent's policy/value network, optimizers and finite-difference checks.

pub mod gradcheck;
pub mod mlp;
pub mod net;
pub mod optim;

pub use gradcheck::{grad_check, relative_error, BlockError, GradCheckReport};
pub use mlp::{Activation, LayerInit, Mlp, MlpCache};
pub use net::{log_softmax, softmax, GradientBundle, BLOCK_NAMES, NetAdjoint, NetCache, NetConfig, NetOutput, PolicyValueNet};
pub use optim::{Optimizer, OptimizerConfig};

use thiserror::Error;

use crate::uncertainty::UncertaintyError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ApproxError {
    #[error("{what}: expected length {expected}, got {got}")]
    Shape { what: &'static str, expected: usize, got: usize },
    #[error("non-finite gradient {value} at block {block}, index {index}")]
    NonFinite { block: usize, index: usize, value: f64 },
    #[error("invalid network configuration: {0}")]
    BadConfig(String),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
}
