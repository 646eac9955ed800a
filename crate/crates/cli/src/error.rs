use nbq_core::NbqError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("{0}")]
    Core(#[from] NbqError),

    #[error("i/o error: {0}")]
    Io(String),

    /// Training produced a non-finite loss; carries the last finite metrics line.
    #[error("numeric divergence: {reason} (last finite: {last})")]
    Diverged { reason: String, last: String },
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Diverged { .. } => 3,
            CliError::Io(_) => 4,
            CliError::Core(e) => match e {
                NbqError::Divergence(_) => 3,
                NbqError::Io(_) | NbqError::Format { .. } | NbqError::Json(_) => 4,
                _ => 2,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::Core(NbqError::Argument("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(NbqError::Divergence("x".into())).exit_code(), 3);
        assert_eq!(CliError::Diverged { reason: "nan".into(), last: "-".into() }.exit_code(), 3);
        assert_eq!(CliError::Core(NbqError::Format { offset: 3, reason: "x".into() }).exit_code(), 4);
        assert_eq!(CliError::Io("x".into()).exit_code(), 4);
    }
}
