use thiserror::Error;

/// Errors produced anywhere in the inference and evaluation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("point lies behind the camera (depth {depth:.3e})")]
    BehindCamera { depth: f64 },

    #[error("degenerate template database: {0}")]
    DegenerateDatabase(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("insufficient samples: got {got}, need at least {need}")]
    InsufficientSamples { got: usize, need: usize },

    #[error("mixture component {component} collapsed (weight {weight:.3e})")]
    CollapsedComponent { component: usize, weight: f64 },

    #[error("rendered keypoint map has zero support")]
    ZeroSupport,

    #[error("residual is not finite at the starting point")]
    NonFiniteResidual,

    #[error("malformed keypoint map file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than an internal fault.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidInput(_)
                | Error::Format(_)
                | Error::Json(_)
                | Error::DegenerateDatabase(_)
                | Error::InsufficientSamples { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
