use thiserror::Error;

/// Errors surfaced by the imputation toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("column {0} has no observed values")]
    EmptyColumn(usize),

    #[error("cannot parse cell at row {row}, column {col}: {msg}")]
    CsvCell { row: usize, col: usize, msg: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(
        "training diverged at epoch {epoch}, batch {batch}: \
         loss={loss}, reconstruction={recon}, contrastive={contrastive}"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        loss: f64,
        recon: f64,
        contrastive: f64,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
