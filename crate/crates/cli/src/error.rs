use std::fmt;

/// A failed command. The variant decides the process exit code.
#[derive(Debug)]
pub enum CliError {
    /// Exit 1: a guidance program or log failed its checks.
    Validation(String),
    /// Exit 2: bad configuration, missing fixture or unreadable input.
    Config(String),
    /// Exit 3: the chat backend failed or the agent protocol produced nothing.
    Backend(String),
}

impl CliError {
    pub fn validation(msg: impl Into<String>) -> Self {
        CliError::Validation(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn backend(msg: impl Into<String>) -> Self {
        CliError::Backend(msg.into())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 1,
            CliError::Config(_) => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(m) => write!(f, "validation failed: {m}"),
            CliError::Config(m) => write!(f, "configuration error: {m}"),
            CliError::Backend(m) => write!(f, "backend error: {m}"),
        }
    }
}

impl std::error::Error for CliError {}
