use thiserror::Error;

/// Errors raised by the kernel, the toy model, the caching loop and the harness.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("empty vector")]
    EmptyVector,

    #[error("label {label} out of range for {num_classes} classes")]
    BadLabel { label: usize, num_classes: usize },

    #[error("layer {layer} out of range for a {layers}-layer model")]
    BadLayer { layer: usize, layers: usize },

    #[error("sampling finished: timestep is already 0")]
    SamplingFinished,

    #[error("frame {frame} out of range for a {frames}-frame scene")]
    BadFrame { frame: usize, frames: usize },

    #[error("bad weight: {0}")]
    BadWeight(String),

    #[error("bad sensitivity {0}: must be finite and >= 0")]
    BadSensitivity(f64),

    #[error("no cache-eligible steps were recorded")]
    NoEligibleSteps,

    #[error("bad config field `{field}`: {reason}")]
    BadConfig { field: String, reason: String },

    #[error("runs are not comparable: {0}")]
    IncomparableRuns(String),

    #[error("image {width}x{height} is smaller than the {window}x{window} window")]
    ImageTooSmall { width: usize, height: usize, window: usize },
}

impl Error {
    pub(crate) fn bad_config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::BadConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
