use thiserror::Error;

/// Errors shared across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    /// Non-physical camera parameters or depths outside the lens model.
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    /// Mismatched dimensions, empty inputs, out-of-range arguments.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A blur kernel whose normalization is undefined (zero total mass).
    #[error("degenerate kernel: {0}")]
    DegenerateKernel(String),

    /// A code that thresholded to all-zero (fully opaque aperture).
    #[error("degenerate code: {0}")]
    DegenerateCode(String),

    /// Wiener filter division by an exact spectral zero with no regularization.
    #[error("division guard: {0}")]
    DivisionGuard(String),

    /// A training step that produced an unusable state.
    #[error("training step failed: {0}")]
    TrainingStep(String),

    /// Malformed file contents.
    #[error("format error in {path}: {msg}")]
    Format { path: String, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
