use thiserror::Error;

/// Errors surfaced by the solver library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}{}", context_suffix(context))]
    Dimension {
        expected: usize,
        got: usize,
        context: &'static str,
    },

    #[error("invalid parameter {name}: {reason}")]
    Parameter { name: &'static str, reason: String },

    #[error("dense materialization guard: {rows}x{cols} exceeds cap of {cap} entries")]
    SizeGuard { rows: usize, cols: usize, cap: usize },

    #[error("numerical breakdown in conjugate gradients at iteration {iteration}")]
    CgBreakdown { iteration: usize },

    #[error("instance generation failed: {0}")]
    Generation(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("config error at {path}: {message}")]
    Config { path: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn context_suffix(context: &str) -> String {
    if context.is_empty() {
        String::new()
    } else {
        format!(" ({context})")
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn dimension(expected: usize, got: usize, context: &'static str) -> Self {
        Error::Dimension {
            expected,
            got,
            context,
        }
    }

    pub fn parameter(name: &'static str, reason: impl Into<String>) -> Self {
        Error::Parameter {
            name,
            reason: reason.into(),
        }
    }
}
