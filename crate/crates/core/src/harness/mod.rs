//! Experiment orchestration: solve detection, scaling fits, sweeps and
//! ablations.

pub mod run;
pub mod solve;

pub use run::{
    median_solve, run_ablation, run_jobs, run_one, run_sweep, vanilla, AblationReport, AblationSpec, AblationSuite,
    GroupSummary, Job, RunConfig, RunSummary, SweepReport, SweepSpec, VANILLA_TAU,
};
pub use solve::{detect_solved, fit_scaling, ScalingFit, SolveDetector, SolveRule};

use thiserror::Error;

use crate::agent::AgentError;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HarnessError {
    #[error("need at least 3 solved depths, got {0}")]
    TooFewPoints(usize),
    #[error("invalid specification: {0}")]
    BadSpec(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        HarnessError::Io(e.to_string())
    }
}
