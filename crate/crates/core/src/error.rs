use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),

    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("tape already consumed by a backward sweep")]
    TapeReused,

    #[error("scale slot {0} was never bound before backward")]
    UnboundSlot(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("UNSUPPORTED_LAMBDA: the {0} loss has no FusedProp scaling factor; use invfusedprop")]
    UnsupportedLambda(&'static str),

    #[error("SINGULAR_LAMBDA: least-squares lambda is singular at sample {sample} (y = {y:e}); use invfusedprop")]
    SingularLambda { sample: usize, y: f64 },

    #[error("SINGULAR_LAMBDA_INV: least-squares lambda_inv is singular at sample {sample} (y = {y:e}); use fusedprop")]
    SingularLambdaInv { sample: usize, y: f64 },

    #[error("degenerate spectral norm: weight matrix is zero")]
    DegenerateNorm,

    #[error("oracle error: {0}")]
    Oracle(String),

    #[error("NOT_IMPLEMENTED: {0}")]
    NotImplemented(&'static str),

    #[error("diverged at iteration {iter}: {detail}")]
    Divergence { iter: usize, detail: String },

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    /// Configuration problems the user can fix by changing flags.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_) | Error::UnsupportedLambda(_) | Error::NotImplemented(_)
        )
    }

    /// Numeric failures raised while training or evaluating.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite { .. }
                | Error::SingularLambda { .. }
                | Error::SingularLambdaInv { .. }
                | Error::Divergence { .. }
                | Error::DegenerateNorm
        )
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}
