use thiserror::Error;

/// Error category surfaced to the command line as a stable code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Category {
    Config,
    Format,
    State,
    Numeric,
    Argument,
    Io,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Config => "config",
            Category::Format => "format",
            Category::State => "state",
            Category::Numeric => "numeric",
            Category::Argument => "argument",
            Category::Io => "io",
        }
    }

    /// Process exit code used by the CLI.
    pub fn exit_code(self) -> i32 {
        match self {
            Category::Config => 2,
            Category::Format => 3,
            Category::State => 4,
            Category::Numeric => 5,
            Category::Argument => 6,
            Category::Io => 7,
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("degenerate input: {0}")]
    Degenerate(String),
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },
    #[error("state error: {0}")]
    State(String),
    #[error("training diverged at step {step}: loss = {loss}")]
    Diverged { step: u64, loss: f64 },
    #[error("shadow model {index} failed: {source}")]
    Shadow {
        index: usize,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn category(&self) -> Category {
        match self {
            Error::Config(_) => Category::Config,
            Error::Argument(_) | Error::Shape { .. } => Category::Argument,
            Error::Degenerate(_) | Error::Diverged { .. } => Category::Numeric,
            Error::Format { .. } | Error::Json(_) | Error::Csv(_) => Category::Format,
            Error::State(_) => Category::State,
            Error::Shadow { source, .. } => source.category(),
            Error::Io(_) => Category::Io,
        }
    }

    pub fn shape(expected: impl std::fmt::Display, got: impl std::fmt::Display) -> Self {
        Error::Shape {
            expected: expected.to_string(),
            got: got.to_string(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
