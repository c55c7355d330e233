use std::fmt;

/// Failure classes, each with a fixed process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration (exit 2).
    Usage(String),
    /// Unreadable, malformed or incompatible input data (exit 3).
    Data(String),
    /// A solver hit its iteration limit (exit 4).
    NotConverged(String),
    /// Writing results failed (exit 1).
    Output(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Output(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Data(_) => 3,
            CliError::NotConverged(_) => 4,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Data(m) | CliError::NotConverged(m) | CliError::Output(m) => f.write_str(m),
        }
    }
}

impl From<heterotl::Error> for CliError {
    fn from(e: heterotl::Error) -> Self {
        use heterotl::Error as E;
        match e {
            E::Argument(_) | E::Config(_) => CliError::Usage(e.to_string()),
            E::NotConverged { .. } => CliError::NotConverged(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}
