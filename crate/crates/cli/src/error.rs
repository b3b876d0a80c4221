use spherecox::Error;

/// Failure of a CLI run, mapped onto the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad configuration or unreadable input: exit code 2.
    Config(String),
    Core(Error),
    Io(std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Core(e) if is_numerical(e) => 3,
            CliError::Core(_) => 2,
            CliError::Io(_) => 3,
        }
    }
}

/// Errors raised by the computation itself rather than by its inputs.
fn is_numerical(e: &Error) -> bool {
    matches!(
        e,
        Error::NotPositiveDefinite { .. }
            | Error::TooManyCandidates { .. }
            | Error::NonFinite(_)
            | Error::RankDeficient
            | Error::IntegrationTooExpensive { .. }
            | Error::TooFewEvents(_)
    )
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io(e) => write!(f, "i/o error: {e}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}
