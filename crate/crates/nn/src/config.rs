use serde::{Deserialize, Serialize};

use crate::error::NnError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttentionKind {
    #[default]
    Softmax,
    /// Kernelized attention with the `elu(x) + 1` feature map.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum HeadKind {
    /// Per-position logits over the vocabulary.
    #[default]
    LanguageModel,
    /// Mean-pooled encoder states mapped to independent sigmoid logits.
    Multilabel { n_labels: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub causal: bool,
    /// Input dimension of the conditioning projection; 0 disables it.
    pub cond_dim: usize,
    pub attention: AttentionKind,
    pub head: HeadKind,
    /// Token id treated as padding: masked as an attention key, excluded
    /// from losses and pooling.
    pub pad_id: u32,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_size: 1812,
            d_model: 256,
            n_layers: 4,
            n_heads: 4,
            d_ff: 1024,
            max_seq_len: 1024,
            dropout_rate: 0.1,
            causal: true,
            cond_dim: 0,
            attention: AttentionKind::Softmax,
            head: HeadKind::LanguageModel,
            pad_id: 0,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), NnError> {
        let bad = |msg: String| Err(NnError::InvalidConfig(msg));
        if self.vocab_size == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return bad("vocab_size, d_model, n_heads and d_ff must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!("d_model {} is not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.max_seq_len == 0 {
            return bad("max_seq_len must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if let HeadKind::Multilabel { n_labels: 0 } = self.head {
            return bad("multilabel head needs at least one label".into());
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn output_dim(&self) -> usize {
        match self.head {
            HeadKind::LanguageModel => self.vocab_size,
            HeadKind::Multilabel { n_labels } => n_labels,
        }
    }
}
