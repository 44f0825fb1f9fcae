//! Command-line front end for `fovreg`: synthetic data generation, ground
//! truth, training, evaluation and training curves.

pub mod args;
pub mod benchmark;
pub mod commands;
pub mod config;

use fovreg::dataset::DatasetError;
use fovreg::metrics::MetricsError;
use fovreg::trainer::TrainError;

pub const EXIT_INPUT: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

/// Error of a command, classified by exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad config, flags or input files.
    Input(String),
    /// Failure while computing, e.g. a non-finite loss or a missing snapshot.
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => EXIT_INPUT,
            CliError::Runtime(_) => EXIT_RUNTIME,
        }
    }

    pub fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Runtime(m) => m,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.message())
    }
}

impl std::error::Error for CliError {}

/// Dataset errors surface while reading inputs; failures writing outputs are
/// mapped to [`CliError::Runtime`] at the call site.
impl From<DatasetError> for CliError {
    fn from(e: DatasetError) -> Self {
        CliError::Input(e.to_string())
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        match e {
            MetricsError::NoPositives
            | MetricsError::UnknownMapId(..)
            | MetricsError::TooFewDescriptors
            | MetricsError::Retrieval(_)
            | MetricsError::Encoder(_)
            | MetricsError::Dataset(_) => CliError::Input(e.to_string()),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Config(_) | TrainError::Sampler(_) | TrainError::Dataset(_) => {
                CliError::Input(e.to_string())
            }
            TrainError::Metrics(m) => m.into(),
            _ => CliError::Runtime(e.to_string()),
        }
    }
}
