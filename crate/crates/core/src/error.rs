use thiserror::Error;

/// Errors produced by the laboratory. The variants map onto the CLI exit
/// codes: configuration problems, numerical accuracy failures and
/// infeasible experiment plans.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum LabError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("size limit exceeded: {0}")]
    Size(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("accuracy target not met: {0}")]
    Accuracy(String),

    #[error("solution left the admissible range at t = {t}: {reason}")]
    Blowup { t: f64, reason: String },

    #[error("infeasible plan, binding quantity `{binding}`: {detail}")]
    Infeasible { binding: String, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl LabError {
    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::Config(_) | LabError::Domain(_) | LabError::Shape(_) => 2,
            LabError::Precondition(_) | LabError::Io(_) => 2,
            LabError::Accuracy(_) | LabError::Blowup { .. } => 3,
            LabError::Size(_) | LabError::Infeasible { .. } => 4,
        }
    }
}

impl From<std::io::Error> for LabError {
    fn from(e: std::io::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

impl From<serde_json::Error> for LabError {
    fn from(e: serde_json::Error) -> Self {
        LabError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
