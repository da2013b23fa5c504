use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(
        "design matrix is rank deficient: singular value {index} is {value:e} \
         (largest {largest:e})"
    )]
    RankDeficient {
        index: usize,
        value: f64,
        largest: f64,
    },

    #[error("n = {n} exceeds the supported maximum of {max}")]
    DimensionCap { n: usize, max: usize },

    #[error("polynomial system is inconsistent: the degree-1 equation is a nonzero constant")]
    Inconsistent,

    #[error("polynomial system is degenerate: the degree-1 equation vanishes identically")]
    Degenerate,

    #[error(
        "polynomial system produced no roots ({paths_total} paths: \
         {paths_diverged} diverged, {paths_failed} failed)"
    )]
    NoRoots {
        paths_total: usize,
        paths_diverged: usize,
        paths_failed: usize,
    },

    #[error("brute force refused for m = {m}: at most {max} observations are enumerable")]
    TooLarge { m: usize, max: usize },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    /// True for failures that are mathematical (no usable roots) rather than
    /// bad input.
    pub fn is_mathematical(&self) -> bool {
        matches!(
            self,
            Error::Inconsistent | Error::Degenerate | Error::NoRoots { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
