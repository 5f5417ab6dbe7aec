//! Command-line driver: dataset generation, training, evaluation, mask
//! export, the gradient-check suite and the paired ablation.
//!
//! Exit codes: 0 success, 1 verification failure, 2 invalid input or
//! config, 3 I/O failure.

mod commands;
pub mod config;
mod output;

pub use commands::{
    cmd_compare, cmd_dump_masks, cmd_eval, cmd_gen_data, cmd_gradcheck, cmd_train, parse_range,
    CompareArgs, DumpMasksArgs, EvalArgs, GenDataArgs, GradcheckArgs, TrainArgs,
};
pub use config::RunConfig;
pub use output::{pgm, write_atomic};

use lga_core::data::DataError;
use lga_core::training::TrainError;
use lga_core::FormatError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("invalid value for {key}: {msg}")]
    Config { key: String, msg: String },
    #[error("invalid input: {0}")]
    Input(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error("verification failed: {0}")]
    Verification(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Verification(_) => 1,
            CliError::Usage(_) | CliError::Config { .. } | CliError::Input(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        match e {
            FormatError::Io(io) => CliError::Io(io.to_string()),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Format(f) => f.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Data(d) => d.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
