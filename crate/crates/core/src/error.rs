use alloc::string::String;
use alloc::vec::Vec;

/// Errors raised by the scattering and reconstruction routines.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ScatterError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("Green's function is singular at coincident points")]
    Singularity,

    #[error("singular support system on support {support:?} (condition estimate {condition:e})")]
    SingularOperator { support: Vec<usize>, condition: f64 },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: alloc::boxed::Box<ScatterError>,
    },

    #[error("divergence detected at iteration {iteration}")]
    Divergence { iteration: usize },

    #[error("coherence is undefined: {0}")]
    UndefinedCoherence(String),

    #[error("degenerate bound: {0}")]
    DegenerateBound(String),

    #[error("precondition violated: {0}")]
    Precondition(String),
}

impl ScatterError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        ScatterError::InvalidArgument(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        ScatterError::ShapeMismatch(msg.into())
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        ScatterError::AtIteration {
            iteration,
            source: alloc::boxed::Box::new(self),
        }
    }
}

pub type Result<T> = core::result::Result<T, ScatterError>;
