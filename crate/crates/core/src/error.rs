use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad magic in {path}: expected {expected:?}, found {found:?}")]
    BadMagic {
        path: PathBuf,
        expected: [u8; 4],
        found: [u8; 4],
    },

    #[error("unsupported format version {version} in {path}")]
    UnsupportedVersion { path: PathBuf, version: u32 },

    #[error("truncated file {path}: expected {expected} bytes, found {found}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        found: u64,
    },

    #[error("non-finite value {value} at {location}")]
    NonFinite { location: String, value: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported stencil: derivative order {deriv_order}, accuracy order {accuracy_order}")]
    UnsupportedStencil {
        deriv_order: usize,
        accuracy_order: usize,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("dimension mismatch: expected {expected} input channels, got {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("rollout diverged at block {block}: {reason}")]
    Divergence { block: usize, reason: String },

    #[error("non-finite gradient in parameter block {block} of net {net}")]
    NonFiniteGradient { net: usize, block: String },

    #[error("training diverged at epoch {epoch}: {reason}")]
    TrainingDiverged {
        epoch: usize,
        reason: String,
        history: Vec<crate::train::LossRecord>,
    },

    #[error("solver stability violated: {0}")]
    Unstable(String),

    #[error("solver blew up at step {step} (max |u| = {max_abs})")]
    BlowUp { step: usize, max_abs: f64 },

    #[error("boost velocity {c} is not grid aligned: c*dt/dx = {cells}; nearest admissible velocities are {lower} and {upper}")]
    NotGridAligned {
        c: f64,
        cells: f64,
        lower: f64,
        upper: f64,
    },

    #[error("invalid boost: {0}")]
    InvalidBoost(String),

    #[error("boosted sampling leaves the data slab; admissible boosted start time range is [{t_min}, {t_max}]")]
    OutsideSlab { t_min: f64, t_max: f64 },

    #[error("invalid term: {0}")]
    InvalidTerm(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
