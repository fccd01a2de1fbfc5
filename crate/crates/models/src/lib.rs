//! Genre tagger, tag- and text-conditioned generators and text embedders
//! built on the transformer backbone.

pub mod embed;
mod error;
pub mod generate;
pub mod sampler;
pub mod tagger;

pub use embed::{Embedder, FileEmbedder, HttpEmbedder, StubEmbedder, TextEmbedding, TEXT_EMBEDDING_DIM};
pub use error::ModelError;
pub use generate::{generate_tags, generate_text, Generation, GenerationMode, StopReason};
pub use sampler::SamplerConfig;
pub use tagger::{Tagger, TaggerOutput, ThresholdSet};
