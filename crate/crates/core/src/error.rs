use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

/// Errors raised by the numerical pipeline.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid bearing geometry: {0}")]
    InvalidGeometry(String),

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    ShapeMismatch {
        what: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("batch norm running statistics have never been updated")]
    Uncalibrated,

    #[error("training diverged at epoch {epoch}: loss is {loss}")]
    Diverged { epoch: usize, loss: f64 },

    #[error("sub-bands are not defined for class {0}")]
    NoSubBands(&'static str),

    #[error("degenerate activation vector (zero norm)")]
    ZeroActivation,

    #[error("requested {requested} entries but class {class} has only {available}")]
    NotEnoughEntries {
        class: &'static str,
        requested: usize,
        available: usize,
    },

    #[error("frequency grid too coarse: band [{lo}, {hi}] contains no bin center")]
    EmptyBand { lo: f64, hi: f64 },
}

impl Error {
    pub(crate) fn arg(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }

    /// True for failures caused by non-finite or degenerate numbers rather
    /// than malformed inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(self, Error::Diverged { .. } | Error::ZeroActivation)
    }
}
