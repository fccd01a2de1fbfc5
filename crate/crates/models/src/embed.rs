//! Sentence embedding providers for text conditioning.

use std::collections::HashMap;
use std::path::Path;

use metascore_core::http::JsonEndpoint;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::ModelError;

/// Output size of the sentence encoder the text model is designed around.
pub const TEXT_EMBEDDING_DIM: usize = 384;
pub const EMBEDDING_URL_ENV: &str = "METASCORE_EMBEDDING_URL";
pub const EMBEDDING_KEY_ENV: &str = "METASCORE_EMBEDDING_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextEmbedding {
    pub vector: Vec<f64>,
    pub provider_id: String,
}

pub trait Embedder: Send + Sync {
    fn dim(&self) -> usize;
    fn provider_id(&self) -> String;
    fn embed(&self, prompt: &str) -> Result<TextEmbedding, ModelError>;
}

/// Hex SHA-256 of the prompt, the key of file-backed embeddings.
pub fn prompt_key(prompt: &str) -> String {
    hex::encode(Sha256::digest(prompt.as_bytes()))
}

fn checked(vector: Vec<f64>, dim: usize, provider_id: String) -> Result<TextEmbedding, ModelError> {
    if vector.len() != dim {
        return Err(ModelError::EmbeddingDimMismatch { expected: dim, found: vector.len() });
    }
    if vector.iter().any(|x| !x.is_finite()) {
        return Err(ModelError::EmbedderUnavailable(format!("{provider_id} returned a non-finite value")));
    }
    Ok(TextEmbedding { vector, provider_id })
}

/// Deterministic stand-in: a unit vector drawn from a generator seeded with
/// the prompt hash.
#[derive(Debug, Clone)]
pub struct StubEmbedder {
    pub dim: usize,
}

impl Default for StubEmbedder {
    fn default() -> Self {
        StubEmbedder { dim: TEXT_EMBEDDING_DIM }
    }
}

impl Embedder for StubEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> String {
        format!("stub-sha256-{}", self.dim)
    }

    fn embed(&self, prompt: &str) -> Result<TextEmbedding, ModelError> {
        let digest = Sha256::digest(prompt.as_bytes());
        let seed: [u8; 32] = digest.into();
        let mut rng = ChaCha8Rng::from_seed(seed);
        let mut v: Vec<f64> = (0..self.dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= norm);
        Ok(TextEmbedding { vector: v, provider_id: self.provider_id() })
    }
}

/// Precomputed embeddings: a JSON object mapping [`prompt_key`] to vectors.
#[derive(Debug, Clone)]
pub struct FileEmbedder {
    pub dim: usize,
    table: HashMap<String, Vec<f64>>,
    source: String,
}

impl FileEmbedder {
    pub fn new(table: HashMap<String, Vec<f64>>, dim: usize) -> Self {
        FileEmbedder { dim, table, source: "memory".into() }
    }

    pub fn from_path(path: &Path, dim: usize) -> Result<Self, ModelError> {
        let unavailable = |e: String| ModelError::EmbedderUnavailable(format!("{}: {e}", path.display()));
        let text = std::fs::read_to_string(path).map_err(|e| unavailable(e.to_string()))?;
        let table = serde_json::from_str(&text).map_err(|e| unavailable(e.to_string()))?;
        Ok(FileEmbedder { dim, table, source: path.display().to_string() })
    }
}

impl Embedder for FileEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> String {
        format!("file:{}", self.source)
    }

    fn embed(&self, prompt: &str) -> Result<TextEmbedding, ModelError> {
        let key = prompt_key(prompt);
        let v = self
            .table
            .get(&key)
            .ok_or_else(|| ModelError::EmbedderUnavailable(format!("no precomputed embedding for prompt {key}")))?;
        checked(v.clone(), self.dim, self.provider_id())
    }
}

/// Embedding service speaking `{"text": …}` → `{"embedding": [...]}`.
#[derive(Debug, Clone)]
pub struct HttpEmbedder {
    pub endpoint: JsonEndpoint,
    pub dim: usize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embedding: Vec<f64>,
}

impl HttpEmbedder {
    pub fn from_env(dim: usize) -> Result<Self, ModelError> {
        let endpoint = JsonEndpoint::from_env(EMBEDDING_URL_ENV, EMBEDDING_KEY_ENV)
            .ok_or_else(|| ModelError::EmbedderUnavailable(format!("{EMBEDDING_URL_ENV} is not set")))?;
        Ok(HttpEmbedder { endpoint, dim })
    }
}

impl Embedder for HttpEmbedder {
    fn dim(&self) -> usize {
        self.dim
    }

    fn provider_id(&self) -> String {
        format!("http:{}", self.endpoint.url)
    }

    fn embed(&self, prompt: &str) -> Result<TextEmbedding, ModelError> {
        let resp: EmbedResponse =
            self.endpoint.post(&EmbedRequest { text: prompt }).map_err(ModelError::EmbedderUnavailable)?;
        checked(resp.embedding, self.dim, self.provider_id())
    }
}
