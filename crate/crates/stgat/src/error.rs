use std::fmt;

use stgat_core::Error as CoreError;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    /// Bad input, configuration or missing files. Exit code 1.
    User,
    /// A broken internal invariant. Exit code 2.
    Internal,
}

#[derive(Debug)]
pub struct CliError {
    pub kind: Kind,
    message: String,
}

impl CliError {
    pub fn user(message: impl Into<String>) -> Self {
        Self { kind: Kind::User, message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { kind: Kind::Internal, message: message.into() }
    }

    pub fn io(e: impl fmt::Display) -> Self {
        Self::user(format!("I/O error: {e}"))
    }

    pub fn context(mut self, what: impl fmt::Display) -> Self {
        self.message = format!("{}: {what}", self.message);
        self
    }

    pub fn exit_code(&self) -> i32 {
        match self.kind {
            Kind::User => 1,
            Kind::Internal => 2,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        let internal = matches!(
            e,
            CoreError::ShapeMismatch { .. } | CoreError::NonFiniteLoss { .. } | CoreError::LengthMismatch { .. } | CoreError::ZeroDistance { .. }
        );
        let message = e.to_string();
        if internal {
            Self::internal(message)
        } else {
            Self::user(message)
        }
    }
}

/// Attaches a path to I/O failures.
pub trait PathContext<T> {
    fn at(self, path: &std::path::Path) -> Result<T>;
}

impl<T> PathContext<T> for std::io::Result<T> {
    fn at(self, path: &std::path::Path) -> Result<T> {
        self.map_err(|e| CliError::user(format!("{}: {e}", path.display())))
    }
}
