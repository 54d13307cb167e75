//! Experiment runner for the `robust-sampling` schedulers.
//!
//! A run is fully described by an [`ExperimentConfig`]. [`run_experiment`]
//! trains one network under the configured scheduler and returns the
//! per-epoch metrics, the usage ledger and a manifest; [`emit_outputs`]
//! writes them as CSV/JSON; [`compare_runs`] tabulates several finished
//! runs against the baseline.

pub mod compare;
pub mod config;
pub mod output;
pub mod runner;
pub mod sweep;

use robust_sampling::{DataError, NnError, SamplerError};
use thiserror::Error;

pub use compare::{compare_runs, ComparisonRow, ComparisonTable};
pub use config::{
    parse_config, parse_scheduler_token, scheduler_label, ConfigOverrides, DatasetChoice,
    ExperimentConfig, SyntheticSpec,
};
pub use output::{emit_outputs, format_sig9, metrics_csv, RunOutputs};
pub use runner::{prepare_data, run_experiment, MetricsRow, PreparedData, RunManifest, RunResult};
pub use sweep::run_sweep;

/// Every failure the harness reports, each mapped to a process exit code.
#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error("numerical divergence at epoch {epoch}, batch {batch}: {detail}")]
    Divergence {
        epoch: usize,
        batch: usize,
        detail: String,
    },
    #[error("incompatible runs: {0}")]
    Incompatible(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl HarnessError {
    /// 2 for usage problems, 3 for I/O, 4 for divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) | HarnessError::Incompatible(_) => 2,
            HarnessError::Io(_) => 3,
            HarnessError::Divergence { .. } => 4,
            HarnessError::Internal(_) => 1,
        }
    }
}

impl From<DataError> for HarnessError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Io { .. } | DataError::Format { .. } => HarnessError::Io(e.to_string()),
            DataError::Consistency(_) | DataError::Argument(_) => {
                HarnessError::Usage(e.to_string())
            }
        }
    }
}

impl From<SamplerError> for HarnessError {
    fn from(e: SamplerError) -> Self {
        match e {
            SamplerError::Argument(_) => HarnessError::Usage(e.to_string()),
            SamplerError::State(_) => HarnessError::Internal(e.to_string()),
        }
    }
}

impl From<NnError> for HarnessError {
    fn from(e: NnError) -> Self {
        match e {
            NnError::Argument(_) => HarnessError::Usage(e.to_string()),
            _ => HarnessError::Internal(e.to_string()),
        }
    }
}

pub(crate) fn io_err(path: &std::path::Path, e: std::io::Error) -> HarnessError {
    HarnessError::Io(format!("{}: {e}", path.display()))
}
