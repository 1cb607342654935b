use thiserror::Error;

/// Errors raised by the simulator.
#[derive(Debug, Error)]
pub enum RapidError {
    /// An argument fell outside the domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Matrix or vector sizes disagree.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A base station sits on top of the user, or two base stations coincide.
    #[error("degenerate deployment: {0}")]
    DegenerateDeployment(String),

    /// Experiment or solver configuration is invalid.
    #[error("configuration error: {0}")]
    Config(String),

    /// A numeric routine produced a non-finite result.
    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("TOML error: {0}")]
    Toml(#[from] toml::de::Error),
}

pub type Result<T> = std::result::Result<T, RapidError>;
