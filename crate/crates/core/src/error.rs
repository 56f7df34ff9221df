use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("degenerate output: {0}")]
    DegenerateOutput(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("value {value} outside [{lo}, {hi}] in input dimension {dim}")]
    OutOfRange { dim: usize, value: f64, lo: f64, hi: f64 },
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),
    #[error("rank-deficient basis: {0}")]
    RankDeficient(&'static str),
    #[error("subsample selected no points")]
    EmptySelection,
    #[error("all {0} lengthscale fits failed")]
    EstimationFailed(usize),
    #[error("posterior sample set is empty")]
    EmptyPosterior,
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input data or arguments).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::NotPositiveDefinite(_)
                | Error::RankDeficient(_)
                | Error::EstimationFailed(_)
                | Error::DegenerateOutput(_)
        )
    }
}

pub type Result<T> = core::result::Result<T, Error>;

macro_rules! shape_err {
    ($($arg:tt)*) => {
        $crate::Error::ShapeMismatch(alloc::format!($($arg)*))
    };
}

macro_rules! arg_err {
    ($($arg:tt)*) => {
        $crate::Error::InvalidArgument(alloc::format!($($arg)*))
    };
}

pub(crate) use arg_err;
pub(crate) use shape_err;
