use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the deblurring toolkit.
#[derive(Debug, Error)]
pub enum DeblurError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The salient-edge field handed to kernel estimation is identically zero.
    #[error("degenerate structure: no salient edges available for kernel estimation")]
    DegenerateStructure,

    #[error("textureless image: no salient edges found at the coarsest scale even after relaxing the threshold to {threshold:.3e}")]
    Textureless { threshold: f64 },

    #[error("numerical failure in {stage}: {detail}")]
    Numerical { stage: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
}

impl DeblurError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        DeblurError::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(stage: &'static str, detail: impl Into<String>) -> Self {
        DeblurError::Numerical {
            stage,
            detail: detail.into(),
        }
    }

    /// True for failures of the method itself (as opposed to bad input or I/O).
    pub fn is_processing_failure(&self) -> bool {
        matches!(
            self,
            DeblurError::DegenerateStructure
                | DeblurError::Textureless { .. }
                | DeblurError::Numerical { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, DeblurError>;
