use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum EdaError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate model: {0}")]
    DegenerateModel(String),

    #[error("degenerate update: {0}")]
    DegenerateUpdate(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("degenerate objective: {0}")]
    DegenerateObjective(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("objective returned {value} at sample {index}")]
    Objective { index: usize, value: f64 },

    #[error("parameters on the domain boundary: {0}")]
    Boundary(String),

    #[error("step size too large: {0}")]
    StepSize(String),

    #[error("family mismatch: expected {expected}, got {found}")]
    FamilyMismatch { expected: String, found: String },

    #[error("enumeration refused: {states} states exceeds the cap of {cap}")]
    TooManyStates { states: u128, cap: u64 },

    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl EdaError {
    pub fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        EdaError::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        EdaError::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            EdaError::Domain(_) => "domain",
            EdaError::DegenerateModel(_) => "degenerate_model",
            EdaError::DegenerateUpdate(_) => "degenerate_update",
            EdaError::DegenerateWeights(_) => "degenerate_weights",
            EdaError::DegenerateObjective(_) => "degenerate_objective",
            EdaError::Input(_) => "input",
            EdaError::Objective { .. } => "objective",
            EdaError::Boundary(_) => "boundary",
            EdaError::StepSize(_) => "step_size",
            EdaError::FamilyMismatch { .. } => "family_mismatch",
            EdaError::TooManyStates { .. } => "too_many_states",
            EdaError::Config { .. } => "config",
            EdaError::Io { .. } => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, EdaError>;
