use std::path::PathBuf;

use thiserror::Error;

/// A single validation problem, tied to the bundle file and field it was found in.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub file: String,
    pub field: String,
    pub message: String,
}

impl std::fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}: {}", self.file, self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("validation failed: {}", format_diagnostics(.0))]
    Validation(Vec<Diagnostic>),

    #[error("proposal index {index} out of range ({count} proposals)")]
    InvalidProposal { index: usize, count: usize },

    #[error("view `{view_id}` has no depth map but the occlusion policy requires one")]
    MissingDepth { view_id: String },

    #[error("view `{view_id}` has no patch features")]
    MissingPatchFeatures { view_id: String },

    #[error("patch size {patch} does not divide image dims {width}x{height}")]
    PatchMismatch { patch: u32, width: u32, height: u32 },

    #[error("{context}: expected dim {expected}, got {actual}")]
    DimMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("{0}")]
    InvalidInput(String),

    #[error("{context}: {message}")]
    Json {
        context: String,
        message: String,
    },
}

fn format_diagnostics(diags: &[Diagnostic]) -> String {
    diags
        .iter()
        .map(|d| d.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }

    pub(crate) fn input(message: impl Into<String>) -> Self {
        Error::InvalidInput(message.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
