//! Crate-wide error type and result alias.

use thiserror::Error;

/// Result alias used across the crate.
pub type Result<T> = std::result::Result<T, SimError>;

/// Unified error type for model construction, pulse execution, calibration,
/// fitting, reconstruction, and I/O.
#[derive(Debug, Error)]
pub enum SimError {
    /// A structural mismatch: wrong vector length, duplicate labels, bad register index.
    #[error("shape error: {0}")]
    Shape(String),

    /// A value outside its physical or tabulated domain (e.g. detuning outside the
    /// exchange table, rotation angle out of range for the requested node law).
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent configuration input. `path` is the JSON field path.
    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    /// A circuit that violates engine invariants (unknown spin, ill-nested repeat
    /// block, conditions referencing spins outside the target's register).
    #[error("circuit error: {0}")]
    Circuit(String),

    /// Two real tones scheduled on one channel in the same time slice.
    #[error("scheduling error: {0}")]
    Scheduling(String),

    /// A tracking or calibration protocol lost the resonance (fit failed, contrast
    /// below threshold, peak outside the scan window).
    #[error("calibration lost: {0}")]
    CalibrationLost(String),

    /// A numerical fit failed to converge or produced an unusable result.
    #[error("fit error: {0}")]
    Fit(String),

    /// Density-matrix reconstruction failure (rank-deficient design, bad counts).
    #[error("reconstruction error: {0}")]
    Reconstruction(String),

    /// Experiment-level failure (empty post-selection, impossible request).
    #[error("experiment error: {0}")]
    Experiment(String),

    /// File or serialization I/O.
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    /// JSON (de)serialization.
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl SimError {
    /// Convenience constructor for configuration errors with a field path.
    pub fn config(path: impl Into<String>, message: impl Into<String>) -> Self {
        SimError::Config {
            path: path.into(),
            message: message.into(),
        }
    }
}
