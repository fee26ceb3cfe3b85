use thiserror::Error;

use rydpump::floquet::{FloquetError, PumpError};
use rydpump::lindblad::LindbladError;
use rydpump::linalg::LinalgError;
use rydpump::protocol::ProtocolError;
use rydpump::stabilizer::StabilizerError;
use rydpump::system::SystemError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Validation(String),
    /// Step halving did not converge or the trace drifted.
    #[error("numerical certificate failed: {0}")]
    Certificate(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("i/o: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Certificate(_) => 3,
            CliError::Numerical(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<SystemError> for CliError {
    fn from(e: SystemError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<LinalgError> for CliError {
    fn from(e: LinalgError) -> Self {
        CliError::Numerical(e.to_string())
    }
}

impl From<PumpError> for CliError {
    fn from(e: PumpError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<StabilizerError> for CliError {
    fn from(e: StabilizerError) -> Self {
        match e {
            StabilizerError::Linalg(e) => e.into(),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FloquetError> for CliError {
    fn from(e: FloquetError) -> Self {
        match e {
            FloquetError::NotConverged { .. } => CliError::Certificate(e.to_string()),
            FloquetError::Linalg(e) => e.into(),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<LindbladError> for CliError {
    fn from(e: LindbladError) -> Self {
        match e {
            LindbladError::TraceDrift { .. } => CliError::Certificate(e.to_string()),
            LindbladError::Linalg(e) => e.into(),
            LindbladError::Channel(e) => CliError::Numerical(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<ProtocolError> for CliError {
    fn from(e: ProtocolError) -> Self {
        match e {
            ProtocolError::Floquet(e) => e.into(),
            ProtocolError::Lindblad(e) => e.into(),
            ProtocolError::Stabilizer(e) => e.into(),
            ProtocolError::Linalg(e) => e.into(),
            ProtocolError::NotTracePreserving(_) => CliError::Certificate(e.to_string()),
            ProtocolError::Channel(e) => CliError::Numerical(e.to_string()),
            e => CliError::Validation(e.to_string()),
        }
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}
