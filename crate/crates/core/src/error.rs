use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants map to the CLI exit-code classes:
/// config/parse problems vs solver faults.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid material: {0}")]
    InvalidMaterial(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("thermal solver fault: {0}")]
    Thermal(String),

    #[error("mechanical solver fault: {0}")]
    Mechanical(String),

    #[error("no melted elements")]
    NoMeltedElements,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for faults raised by a running solver (as opposed to bad input).
    pub fn is_solver_fault(&self) -> bool {
        matches!(
            self,
            Error::Thermal(_) | Error::Mechanical(_) | Error::NoMeltedElements
        )
    }
}
