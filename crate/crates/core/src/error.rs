use alloc::boxed::Box;
use alloc::string::String;

use crate::model::ModelParams;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid factor vector: {0}")]
    InvalidFactor(String),
    #[error("factor index {index} out of range for {len} factors")]
    Index { index: usize, len: usize },
    #[error("architecture error: {0}")]
    Arch(String),
    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("no training pairs available; supply lambda explicitly")]
    NoPairs,
    #[error("degenerate pair: representation difference norm below {0:e}")]
    DegeneratePair(f64),
    #[error("empty image batch")]
    EmptyBatch,
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Divergence {
        epoch: usize,
        last_finite: Box<ModelParams>,
    },
    #[error("degenerate distribution: {0}")]
    DegenerateDistribution(String),
    #[error("singular fit: {0}")]
    SingularFit(String),
    #[error("empty input: {0}")]
    EmptyInput(String),
    #[error("every pair is degenerate")]
    DegenerateSet,
    #[error("reference perturbation of the age factor produced zero displacement")]
    ZeroReference,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("cannot split {subjects} subjects into {k} folds")]
    Split { k: usize, subjects: usize },
    #[error("training fold contains a single class")]
    DegenerateLabels,
    #[error("configuration error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn shape(expected: impl core::fmt::Display, actual: impl core::fmt::Display) -> Self {
        use alloc::string::ToString;
        Error::Shape {
            expected: expected.to_string(),
            actual: actual.to_string(),
        }
    }
}
