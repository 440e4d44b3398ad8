use std::fmt;

use coral_core::config::ConfigError;
use coral_core::denoiser::DenoiserError;
use coral_core::evaluation::EvalError;
use coral_core::longtail_data::{DataError, FormatError};
use coral_core::sampling::SampleError;
use coral_core::training::TrainError;

/// A failure with its process exit code: 2 config, 3 data, 4 numeric.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Data(String),
    Numeric(String),
}

impl CliError {
    pub fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "config: {m}"),
            CliError::Data(m) => write!(f, "data: {m}"),
            CliError::Numeric(m) => write!(f, "numeric: {m}"),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FormatError> for CliError {
    fn from(e: FormatError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::Format(f) => f.into(),
            DataError::BadRatio(_) | DataError::ZeroHead | DataError::NoClasses | DataError::BadSigma(_) | DataError::BadDim(_) => {
                CliError::Config(e.to_string())
            }
            other => CliError::Data(other.to_string()),
        }
    }
}

fn from_model(e: &DenoiserError, context: String) -> CliError {
    match e {
        DenoiserError::NonFinite { .. } | DenoiserError::DegenerateProjection => CliError::Numeric(context),
        _ => CliError::Data(context),
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let msg = e.to_string();
        match &e {
            TrainError::NonFiniteGradient { .. } | TrainError::NonFiniteLoss { .. } => CliError::Numeric(msg),
            TrainError::Model { source, .. } => from_model(source, msg),
            TrainError::Config(_) | TrainError::Schedule(_) => CliError::Config(msg),
            TrainError::Data(_) | TrainError::StateShape { .. } => CliError::Data(msg),
        }
    }
}

impl From<SampleError> for CliError {
    fn from(e: SampleError) -> Self {
        let msg = e.to_string();
        match &e {
            SampleError::NonFinite { .. } => CliError::Numeric(msg),
            SampleError::ClassOutOfRange { .. } | SampleError::BadOmega(_) => CliError::Config(msg),
            SampleError::Model(m) => from_model(m, msg),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        let msg = e.to_string();
        match &e {
            EvalError::TooManyClusters { .. } | EvalError::ZeroK => CliError::Config(msg),
            EvalError::Model(m) => from_model(m, msg),
            EvalError::NotSymmetric(_) => CliError::Numeric(msg),
            _ => CliError::Data(msg),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Data(e.to_string())
    }
}
