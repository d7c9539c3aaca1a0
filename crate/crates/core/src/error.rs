use alloc::string::String;
use alloc::vec::Vec;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {what}: expected {expected}, got {actual}")]
    Shape {
        what: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("input of length {len} is shorter than the window length {window}")]
    InputTooShort { len: usize, window: usize },
    #[error("batch of size {size} is too small for batch statistics (need at least 2)")]
    BatchTooSmall { size: usize },
    #[error("label {label} out of range for {num_classes} classes")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("spectra have no common shift range (offending spectra: {offending:?})")]
    NoCommonRange { offending: Vec<usize> },
    #[error("grid [{grid_lo}, {grid_hi}] exceeds the spectrum range [{lo}, {hi}]")]
    Extrapolation {
        grid_lo: f64,
        grid_hi: f64,
        lo: f64,
        hi: f64,
    },
    #[error("invalid spectrum: {0}")]
    InvalidSpectrum(String),
    #[error("empty dataset: {0}")]
    EmptyDataset(String),
    #[error("cannot stratify: class {class} has {count} samples, need at least {needed}")]
    Stratification {
        class: usize,
        count: usize,
        needed: usize,
    },
    #[error("k = {k} out of range for {num_classes} classes")]
    TopKOutOfRange { k: usize, num_classes: usize },
    #[error(
        "non-finite loss at epoch {epoch}, batch {batch} (cross-entropy {cross_entropy}, triplet {triplet})"
    )]
    NonFiniteLoss {
        epoch: usize,
        batch: usize,
        cross_entropy: f64,
        triplet: f64,
    },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
    /// Raised by caller-supplied hooks (e.g. a checkpoint that could not be written).
    #[error("{0}")]
    Hook(String),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CheckpointError {
    #[error("bad magic bytes {found:02x?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("truncated: needed {needed} bytes at offset {offset}, only {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("malformed: {0}")]
    Malformed(String),
}

pub(crate) fn ensure_shape(what: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            actual,
        })
    }
}
