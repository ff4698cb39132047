use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

/// Crate-wide error type. Variants carry the offending id/path so failures in
/// batch operations point at the sample that caused them.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error at {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image decode error for sample {id} at {path}: {source}")]
    ImageDecode {
        id: String,
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("missing dataset directory {path}")]
    MissingDirectory { path: PathBuf },
    #[error("labels file {path}: {msg}")]
    LabelsFormat { path: PathBuf, msg: String },
    #[error("label row for {id} references no image file under {root}")]
    LabelWithoutImage { id: String, root: PathBuf },
    #[error("invalid label {value} for sample {id} (expected -1, 0, or 1)")]
    InvalidLabel { id: String, value: String },
    #[error("duplicate sample id {id}")]
    DuplicateId { id: String },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("sample {id} has no label")]
    UnlabeledSample { id: String },
    #[error("class {class} has {count} samples, need at least {need}")]
    ClassTooSmall { class: i8, count: usize, need: usize },
    #[error("class {class} has no samples to synthesize copies from")]
    EmptyClass { class: i8 },
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("image {id} is {height}x{width}, larger than padding target {target_height}x{target_width}")]
    ImageLargerThanTarget {
        id: String,
        height: u32,
        width: u32,
        target_height: u32,
        target_width: u32,
    },
    #[error("unknown architecture {name}")]
    UnknownArchitecture { name: String },
    #[error("pretrained weights for {name} unavailable: {msg}")]
    WeightsUnavailable { name: String, msg: String },
    #[error("batch images must share one size: got {first_height}x{first_width} and {other_height}x{other_width}")]
    MixedBatchSizes {
        first_height: u32,
        first_width: u32,
        other_height: u32,
        other_width: u32,
    },
    #[error("non-finite value in {context}")]
    NonFinite { context: String },
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("checkpoint {path}: version {found} unsupported (expected {expected})")]
    CheckpointVersion {
        path: PathBuf,
        found: u32,
        expected: u32,
    },
    #[error("checkpoint {path}: fingerprint missing")]
    CheckpointFingerprintMissing { path: PathBuf },
    #[error("checkpoint {path}: truncated or corrupt ({msg})")]
    CheckpointCorrupt { path: PathBuf, msg: String },
    #[error("incompatible checkpoints: {msg}")]
    IncompatibleCheckpoints { msg: String },
    #[error("sample {id} is {height}x{width}, expected padded size {target_height}x{target_width}")]
    UnpaddedInput {
        id: String,
        height: u32,
        width: u32,
        target_height: u32,
        target_width: u32,
    },
    #[error("malformed probability vector {probs:?}: {msg}")]
    MalformedProbabilities { probs: Vec<f64>, msg: String },
    #[error("truth and prediction lists differ in length: {truth} vs {pred}")]
    LengthMismatch { truth: usize, pred: usize },
    #[error("id sets differ: {msg}")]
    IdMismatch { msg: String },
    #[error("{0}")]
    Invalid(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
