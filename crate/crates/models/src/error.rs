use metascore_core::TokenizerError;
use metascore_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Tokenizer(#[from] TokenizerError),
    #[error("model was trained with vocabulary {found}, current vocabulary is {expected}")]
    VocabMismatch { expected: String, found: String },
    #[error("embedder unavailable: {0}")]
    EmbedderUnavailable(String),
    #[error("embedding has dimension {found}, expected {expected}")]
    EmbeddingDimMismatch { expected: usize, found: usize },
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error("invalid sampler config: {0}")]
    InvalidSampler(String),
    #[error("{0}")]
    WrongMode(String),
}
