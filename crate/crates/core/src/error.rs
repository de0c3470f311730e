use thiserror::Error;

/// Errors raised by the chain binomial library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("scenario count for total={total}, generations={generations} overflows u64")]
    Overflow { total: u32, generations: u32 },

    #[error("enumeration of {total} infections exceeds the cap of {cap}")]
    EnumerationCap { total: u32, cap: u32 },

    #[error("objective evaluated to a non-finite value {value} at {at:?}")]
    Evaluation { at: Vec<f64>, value: f64 },

    #[error("no households supplied")]
    EmptyData,

    #[error("standard error unavailable: {0}")]
    Unavailable(String),

    #[error("model is not identifiable: {0}")]
    SingularModel(String),

    #[error("household {household}: missing covariate `{field}`")]
    MissingCovariate { household: String, field: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
