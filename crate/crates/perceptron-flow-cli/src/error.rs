//! Error classification for process exit codes: configuration problems
//! (unusable inputs, bad flags, missing files) exit with 2, numerical
//! failures (divergence, thresholds never reached, missing fixed points)
//! with 3.

use perceptron_flow::experiments::ExperimentError;
use perceptron_flow::flow::FlowError;
use perceptron_flow::mnist::MnistError;
use perceptron_flow::simulate::SimError;
use perceptron_flow::task::TaskError;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        CliError::Numerical(msg.into())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(format!("i/o error: {e}"))
    }
}

impl From<TaskError> for CliError {
    fn from(e: TaskError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<FlowError> for CliError {
    fn from(e: FlowError) -> Self {
        match e {
            FlowError::NoFixedPoint | FlowError::BracketNotFound => {
                CliError::Numerical(e.to_string())
            }
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<ExperimentError> for CliError {
    fn from(e: ExperimentError) -> Self {
        match e {
            ExperimentError::NotReached { .. } => CliError::Numerical(e.to_string()),
            ExperimentError::Flow(f) => f.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}

impl From<MnistError> for CliError {
    fn from(e: MnistError) -> Self {
        match e {
            MnistError::Diverged => CliError::Numerical(e.to_string()),
            MnistError::Flow(f) => f.into(),
            other => CliError::Config(other.to_string()),
        }
    }
}
