use alloc::string::String;

/// Errors raised by the core library.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("softmax row {row} has every position masked")]
    FullyMaskedRow { row: usize },
    #[error("loss must be a scalar, got {len} values")]
    NonScalarLoss { len: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("step {step} outside schedule range 0..={total}")]
    StepOutOfRange { step: usize, total: usize },
    #[error("invalid schedule: warmup {warmup}, total {total}")]
    InvalidSchedule { warmup: usize, total: usize },
    #[error("corpus is empty")]
    EmptyCorpus,
    #[error("segment of {len} tokens exceeds segment length {max}")]
    SegmentTooLong { len: usize, max: usize },
    #[error("cannot encode an empty token sequence")]
    EmptySequence,
    #[error("memory attention needs at least one relation encoding")]
    EmptyMemory,
    #[error("triple ({0}) has no known tokens")]
    UnencodableTriple(String),
    #[error("no records to aggregate: {0}")]
    NoRecords(&'static str),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("malformed checkpoint: {0}")]
    Checkpoint(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
