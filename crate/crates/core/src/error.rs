use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScoreError {
    #[error("field `{field}` out of range: {value}")]
    OutOfRangeField { field: &'static str, value: i64 },
}

impl ScoreError {
    pub(crate) fn out_of_range(field: &'static str, value: impl Into<i64>) -> Self {
        ScoreError::OutOfRangeField { field, value: value.into() }
    }
}

#[derive(Debug, Error)]
pub enum MidiError {
    #[error("malformed MIDI at byte {offset}: {reason}")]
    MalformedMidi { offset: usize, reason: String },
    #[error("unsupported SMF format {0}")]
    UnsupportedFormat(u16),
    #[error("ticks per quarter {0} must be a positive multiple of 12 below 32768")]
    InvalidResolution(u32),
    #[error("malformed score JSON: {0}")]
    MalformedJson(#[from] serde_json::Error),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

impl MidiError {
    pub(crate) fn malformed(offset: usize, reason: impl Into<String>) -> Self {
        MidiError::MalformedMidi { offset, reason: reason.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TokenizerError {
    #[error("duplicate label `{0}` in vocabulary list")]
    DuplicateLabel(String),
    #[error("label `{0}` is not a known class")]
    UnknownLabel(String),
    #[error("beat {0} exceeds the beat vocabulary")]
    BeatOverflow(u32),
    #[error("composer `{0}` not in vocabulary")]
    UnknownComposer(String),
    #[error("genre `{0}` not in vocabulary")]
    UnknownGenre(String),
    #[error("complexity `{0}` not in vocabulary")]
    UnknownComplexity(String),
    #[error("grammar violation at token {index}: expected {expected}, found {found}")]
    GrammarViolation { index: usize, expected: String, found: String },
    #[error("vocabulary hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },
    #[error("invalid vocabulary file: {0}")]
    InvalidVocab(String),
    #[error(transparent)]
    Score(#[from] ScoreError),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PipelineError {
    #[error("duplicate corpus id `{0}`")]
    DuplicateId(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("metric undefined: {0}")]
    Undefined(&'static str),
    #[error("insufficient data for `{0}`: need at least two defined values")]
    InsufficientData(&'static str),
}

#[derive(Debug, Error)]
pub enum CaptionError {
    #[error("completion backend unavailable: {0}")]
    BackendUnavailable(String),
}
