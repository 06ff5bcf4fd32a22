use std::path::PathBuf;

/// Errors produced while building, fitting or reporting a choice model.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("unknown variable `{0}`")]
    UnknownVariable(String),

    #[error("reference alternative {index} out of range for {n_alts} alternatives")]
    ReferenceOutOfRange { index: usize, n_alts: usize },

    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("non-finite value in {what}{}", layer_suffix(*.layer))]
    NonFinite {
        what: &'static str,
        layer: Option<usize>,
    },

    #[error("choice probability underflow for alternative {alternative} at observation {observation}")]
    ProbabilityUnderflow {
        observation: usize,
        alternative: usize,
    },

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("{path}: line {line}: {message}")]
    Csv {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("config key `{key}`: {message}")]
    Config { key: String, message: String },

    #[error("training diverged at iteration {iteration}")]
    Diverged {
        iteration: usize,
        last_finite: Box<crate::data::Parameters>,
    },

    #[error("self-check failed: {0}")]
    SelfCheck(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("model file: {0}")]
    ModelFile(#[from] serde_json::Error),
}

fn layer_suffix(layer: Option<usize>) -> String {
    match layer {
        Some(m) => format!(" (layer {m})"),
        None => String::new(),
    }
}

impl Error {
    /// Short stable identifier used in the CLI's machine-readable error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::UnknownVariable(_) => "unknown_variable",
            Error::ReferenceOutOfRange { .. } => "reference_out_of_range",
            Error::DimensionMismatch { .. } => "dimension_mismatch",
            Error::NonFinite { .. } => "non_finite",
            Error::ProbabilityUnderflow { .. } => "probability_underflow",
            Error::InvalidDataset(_) => "invalid_dataset",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::Csv { .. } => "csv",
            Error::Config { .. } => "config",
            Error::Diverged { .. } => "diverged",
            Error::SelfCheck(_) => "self_check",
            Error::Io { .. } => "io",
            Error::ModelFile(_) => "model_file",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
