use thiserror::Error;

/// Errors produced by the numerical core, feature maps, training loop and
/// file formats.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("matrix is not symmetric: {0}")]
    NotSymmetric(String),

    #[error("matrix is not positive semi-definite: {0}")]
    NotPsd(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },

    #[error("class {class} has {have} rows, need {need}")]
    InsufficientClass {
        class: usize,
        have: usize,
        need: usize,
    },

    #[error("training diverged at epoch {epoch}, step {step}: loss = {loss}")]
    Diverged { epoch: usize, step: usize, loss: f64 },

    #[error("bad magic number {found:#010x} in {context}")]
    BadMagic { found: u32, context: String },

    #[error("truncated file: {0}")]
    Truncated(String),

    #[error("non-numeric field {value:?} at line {line}")]
    NonNumeric { line: usize, value: String },

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("config error at line {line}: key {key:?}: {msg}")]
    Config {
        line: usize,
        key: String,
        msg: String,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }
}
