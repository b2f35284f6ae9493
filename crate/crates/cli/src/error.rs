use deformpose_core::{Error, ErrorClass};
use thiserror::Error;

/// Process exit statuses.
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// A failure tagged with the operation that raised it, e.g.
/// `metrics::evaluate_manifest`.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{op}: {message}")]
    Data { op: &'static str, message: String },
    #[error("{op}: {message}")]
    Numerical { op: &'static str, message: String },
    #[error("{op}: {source}")]
    Core {
        op: &'static str,
        #[source]
        source: Error,
    },
}

impl CliError {
    pub fn data(op: &'static str, message: impl Into<String>) -> Self {
        CliError::Data {
            op,
            message: message.into(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Data { .. } => EXIT_DATA,
            CliError::Numerical { .. } => EXIT_NUMERICAL,
            CliError::Core { source, .. } => match source.class() {
                ErrorClass::Data => EXIT_DATA,
                ErrorClass::Numerical => EXIT_NUMERICAL,
            },
        }
    }
}

/// Attaches the failing operation's name to a core error.
pub trait Context<T> {
    fn during(self, op: &'static str) -> Result<T, CliError>;
}

impl<T> Context<T> for deformpose_core::Result<T> {
    fn during(self, op: &'static str) -> Result<T, CliError> {
        self.map_err(|source| CliError::Core { op, source })
    }
}
