use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty foreground")]
    EmptyForeground,

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("non-finite input: {0}")]
    NonFinite(String),

    #[error("nonpositive standard deviation at voxel {voxel}, direction {direction}")]
    NonPositiveStd { voxel: usize, direction: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("basis has {columns} columns, exceeding the cap of {cap}")]
    BasisTooLarge { columns: usize, cap: usize },

    #[error("mismatched row counts in joint basis: {0:?}")]
    MismatchedRows(Vec<usize>),

    #[error("basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("factorization failed (direction {direction}); offending columns {columns:?}")]
    Factorization { direction: usize, columns: Vec<usize> },

    #[error("mode index {index} out of range (have {available})")]
    ModeOutOfRange { index: usize, available: usize },

    #[error("all-masked-out neighborhood at voxel {0:?}")]
    EmptyNeighborhood([usize; 3]),

    #[error("zero variance in rank/centered data")]
    DegenerateVariance,

    #[error("no common labels")]
    NoCommonLabels,

    #[error("empty label list after skipping absent labels")]
    EmptyLabelList,

    #[error("need at least {required} samples, got {actual}")]
    TooFewSamples { required: usize, actual: usize },

    #[error("inconsistent grids across samples")]
    InconsistentSamples,

    #[error("bad magic: {0}")]
    BadMagic(String),

    #[error("unsupported datatype {0}")]
    UnsupportedDatatype(i32),

    #[error("big-endian NIfTI not supported")]
    BigEndian,

    #[error("non-axis-aligned sform")]
    NonAxisAlignedSform,

    #[error("missing sform (sform_code must be > 0)")]
    MissingSform,

    #[error("nonzero rescale (scl_slope={slope}, scl_inter={inter})")]
    NonzeroRescale { slope: f32, inter: f32 },

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("truncated payload: expected {expected} bytes, got {actual}")]
    TruncatedPayload { expected: usize, actual: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    /// Stable snake_case identifier of the variant.
    pub fn code(&self) -> &'static str {
        match self {
            Error::EmptyForeground => "empty_foreground",
            Error::GridMismatch(_) => "grid_mismatch",
            Error::InvalidGrid(_) => "invalid_grid",
            Error::LengthMismatch { .. } => "length_mismatch",
            Error::NonFinite(_) => "non_finite",
            Error::NonPositiveStd { .. } => "nonpositive_std",
            Error::InvalidArgument(_) => "invalid_argument",
            Error::BasisTooLarge { .. } => "basis_too_large",
            Error::MismatchedRows(_) => "mismatched_rows",
            Error::BasisMismatch(_) => "basis_mismatch",
            Error::Factorization { .. } => "factorization",
            Error::ModeOutOfRange { .. } => "mode_out_of_range",
            Error::EmptyNeighborhood(_) => "empty_neighborhood",
            Error::DegenerateVariance => "degenerate_variance",
            Error::NoCommonLabels => "no_common_labels",
            Error::EmptyLabelList => "empty_label_list",
            Error::TooFewSamples { .. } => "too_few_samples",
            Error::InconsistentSamples => "inconsistent_samples",
            Error::BadMagic(_) => "bad_magic",
            Error::UnsupportedDatatype(_) => "unsupported_datatype",
            Error::BigEndian => "big_endian",
            Error::NonAxisAlignedSform => "non_axis_aligned_sform",
            Error::MissingSform => "missing_sform",
            Error::NonzeroRescale { .. } => "nonzero_rescale",
            Error::InvalidHeader(_) => "invalid_header",
            Error::TruncatedPayload { .. } => "truncated_payload",
            Error::Io { .. } => "io",
            Error::Config(_) => "config",
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
