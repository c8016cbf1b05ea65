use std::io;

use thiserror::Error;

/// Errors produced anywhere in the scoring backend.
#[derive(Debug, Error)]
pub enum Error {
    #[error("vector norm is below 1e-12")]
    ZeroVector,
    #[error("empty list")]
    EmptyList,
    #[error("empty input")]
    EmptyInput,
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("{total_frames} frames is shorter than the minimum window of {window_min}")]
    TooShort { total_frames: usize, window_min: usize },
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("no embedding for utterance `{0}`")]
    MissingEmbedding(String),
    #[error("no CMF for utterance `{0}`")]
    MissingCmf(String),
    #[error("no cohort statistics for utterance `{0}`")]
    MissingStats(String),
    #[error("no duration for utterance `{0}`")]
    MissingDuration(String),
    #[error("top_k {top_k} exceeds cohort size {speakers}")]
    TopKTooLarge { top_k: usize, speakers: usize },
    #[error("standard deviation {0:e} is below 1e-9")]
    DegenerateStd(f64),
    #[error("need at least 2 speakers, found {0}")]
    InsufficientSpeakers(usize),
    #[error("no utterances in the {0} bucket")]
    EmptyBucket(&'static str),
    #[error("duration must be positive, got {0}")]
    NonpositiveDuration(f64),
    #[error("labels contain a single class")]
    SingleClass,
    #[error("training loss became non-finite at epoch {0}")]
    NonFiniteLoss(usize),
    #[error("trial lists differ between score tables")]
    TrialMismatch,
    #[error("all fusion weights are zero")]
    AllZeroWeights,
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error("frame range [{start}, {end}) outside 0..{len}")]
    RangeOutOfBounds { start: usize, end: usize, len: usize },
    #[error("bad magic bytes")]
    BadMagic,
    #[error("file is truncated")]
    TruncatedFile,
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
