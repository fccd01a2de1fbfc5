use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("sequence of length {len} exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("conditioning vector has dimension {found}, model expects {expected}")]
    ConditioningDimMismatch { expected: usize, found: usize },
    #[error("token id {token} outside vocabulary of size {vocab_size}")]
    TokenOutOfRange { token: u32, vocab_size: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("training target does not match the model head")]
    ObjectiveMismatch,
    #[error("checkpoint vocabulary hash {found} does not match {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("malformed checkpoint: {0}")]
    MalformedCheckpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
