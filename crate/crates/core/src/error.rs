use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("degenerate feature: row {row} has near-zero norm")]
    DegenerateFeature { row: usize },

    #[error("bad magic: not a VSWB1 container")]
    BadMagic,

    #[error("truncated payload for tensor `{tensor}`")]
    Truncated { tensor: String },

    #[error("bundle manifest incomplete: missing tensor `{tensor}`")]
    ManifestIncomplete { tensor: String },

    #[error("tensor `{tensor}` declares shape {shape:?} but holds {values} values")]
    ShapeProductMismatch { tensor: String, shape: Vec<usize>, values: usize },

    #[error("tensor `{tensor}` has shape {found:?}, expected {expected:?}")]
    UnexpectedShape { tensor: String, found: Vec<usize>, expected: Vec<usize> },

    #[error("invalid bundle: {0}")]
    InvalidBundle(String),

    #[error("malformed container header: {0}")]
    Header(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),

    #[error("unsupported bit depth: {0}")]
    UnsupportedDepth(String),

    #[error("corrupt image file {path}: {reason}")]
    CorruptImage { path: PathBuf, reason: String },

    #[error("undefined F1: recall + precision = 0")]
    UndefinedF1,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("degenerate pair statistics: sigma = 0 for {dataset}/{metric}")]
    DegenerateStats { dataset: String, metric: String },

    #[error("dataset too small: need at least {needed} images, got {found}")]
    DatasetTooSmall { needed: usize, found: usize },

    #[error("refusing to emit an empty report")]
    EmptyReport,

    #[error("codec error: {0}")]
    Codec(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
