//! Symbolic music data layer: the quantized score model, Standard MIDI File
//! I/O, the tag-prefixed event tokenizer, metadata normalization, objective
//! metrics and caption generation.

pub mod caption;
pub mod error;
pub mod gm;
pub mod http;
pub mod io;
pub mod metadata;
pub mod metrics;
pub mod midi;
pub mod score;
pub mod tokenizer;

pub use error::{CaptionError, MetricError, MidiError, PipelineError, ScoreError, TokenizerError};
pub use score::{
    bars_of, canonicalize, Complexity, Genre, GenreSource, Metadata, Note, Score, TimeSignature,
    DRUM_PROGRAM, MAX_DURATION, RESOLUTION,
};
pub use tokenizer::{TagSet, TokenSequence, VocabSpec};
