//! Next-token cross-entropy and multilabel binary cross-entropy over a batch
//! of independent sequences.

use rayon::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::HeadKind;
use crate::error::NnError;
use crate::model::{Logits, Transformer};
use crate::ops::log_sum_exp;
use crate::params::Gradients;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    NextTokenCe,
    MultilabelBce,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    NextToken,
    /// One 0/1 (or soft) target per label.
    Labels(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub tokens: Vec<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cond: Option<Vec<f64>>,
    pub target: Target,
}

impl Example {
    pub fn next_token(tokens: Vec<u32>, cond: Option<Vec<f64>>) -> Self {
        Example { tokens, cond, target: Target::NextToken }
    }

    pub fn labels(tokens: Vec<u32>, labels: Vec<f64>) -> Self {
        Example { tokens, cond: None, target: Target::Labels(labels) }
    }

    pub fn objective(&self) -> Objective {
        match self.target {
            Target::NextToken => Objective::NextTokenCe,
            Target::Labels(_) => Objective::MultilabelBce,
        }
    }
}

/// Trailing pads are masked keys and never targets, so dropping them leaves
/// every loss and pooled state unchanged.
pub fn strip_trailing_pads(tokens: &[u32], pad: u32) -> &[u32] {
    let end = tokens.iter().rposition(|&t| t != pad).map_or(0, |i| i + 1);
    &tokens[..end]
}

fn n_targets(tokens: &[u32], pad: u32) -> usize {
    tokens.iter().skip(1).filter(|&&t| t != pad).count()
}

/// Summed next-token loss and its unnormalized logit gradient.
fn next_token_loss(logits: &Logits, tokens: &[u32], pad: u32) -> (f64, Vec<f64>) {
    let v = logits.cols;
    let mut grad = vec![0.0; logits.data.len()];
    let mut total = 0.0;
    for t in 0..tokens.len().saturating_sub(1) {
        let target = tokens[t + 1];
        if target == pad {
            continue;
        }
        let row = logits.row(t);
        let lse = log_sum_exp(row);
        total += lse - row[target as usize];
        let g = &mut grad[t * v..(t + 1) * v];
        for (gi, &z) in g.iter_mut().zip(row) {
            *gi = (z - lse).exp();
        }
        g[target as usize] -= 1.0;
    }
    (total, grad)
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Summed binary cross-entropy over labels and its logit gradient.
fn multilabel_loss(logits: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let loss = logits.iter().zip(targets).map(|(&z, &y)| z.max(0.0) - y * z + (-z.abs()).exp().ln_1p()).sum();
    let grad = logits.iter().zip(targets).map(|(&z, &y)| sigmoid(z) - y).collect();
    (loss, grad)
}

fn check_target(model: &Transformer, ex: &Example) -> Result<(), NnError> {
    match (&model.config().head, &ex.target) {
        (HeadKind::LanguageModel, Target::NextToken) => Ok(()),
        (HeadKind::Multilabel { n_labels }, Target::Labels(y)) if y.len() == *n_labels => Ok(()),
        _ => Err(NnError::ObjectiveMismatch),
    }
}

/// Batch normalizer: target positions for cross-entropy, example-label
/// pairs for binary cross-entropy.
fn normalizer(model: &Transformer, batch: &[Example]) -> Result<f64, NnError> {
    if batch.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    for ex in batch {
        check_target(model, ex)?;
    }
    let pad = model.config().pad_id;
    let n = match model.config().head {
        HeadKind::LanguageModel => batch.iter().map(|e| n_targets(&e.tokens, pad)).sum(),
        HeadKind::Multilabel { n_labels } => batch.len() * n_labels,
    };
    if n == 0 {
        return Err(NnError::EmptyBatch);
    }
    Ok(n as f64)
}

fn example_loss(model: &Transformer, ex: &Example, scale: f64, dropout_seed: Option<u64>) -> Result<(f64, Gradients), NnError> {
    let pad = model.config().pad_id;
    let tokens = strip_trailing_pads(&ex.tokens, pad);
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let (logits, cache) = model.forward_cached(tokens, ex.cond.as_deref(), rng.as_mut())?;
    let (loss, mut d_logits) = match &ex.target {
        Target::NextToken => next_token_loss(&logits, tokens, pad),
        Target::Labels(y) => multilabel_loss(&logits.data, y),
    };
    d_logits.iter_mut().for_each(|g| *g *= scale);
    Ok((loss * scale, model.backward(&cache, &d_logits)))
}

/// Mean loss over the batch and the gradient of every parameter.
///
/// Examples are processed in waves of `jobs` in parallel; each example's
/// gradient is computed into its own buffer and the buffers are summed in
/// batch order, so the result does not depend on `jobs` or thread timing.
/// `dropout_seeds`, when given, holds one dropout seed per example.
pub fn loss_and_grad(
    model: &Transformer,
    batch: &[Example],
    dropout_seeds: Option<&[u64]>,
    jobs: usize,
) -> Result<(f64, Gradients), NnError> {
    let scale = 1.0 / normalizer(model, batch)?;
    let mut total = model.params().zero_grads();
    let mut loss = 0.0;
    let seed_of = |i: usize| dropout_seeds.map(|s| s[i]);
    for (w, wave) in batch.chunks(jobs.max(1)).enumerate() {
        let base = w * jobs.max(1);
        let results: Vec<Result<(f64, Gradients), NnError>> = if wave.len() == 1 {
            vec![example_loss(model, &wave[0], scale, seed_of(base))]
        } else {
            wave.par_iter().enumerate().map(|(i, ex)| example_loss(model, ex, scale, seed_of(base + i))).collect()
        };
        for r in results {
            let (l, g) = r?;
            loss += l;
            total.add_assign(&g);
        }
    }
    Ok((loss, total))
}

/// Mean loss without gradients or dropout.
pub fn batch_loss(model: &Transformer, batch: &[Example]) -> Result<f64, NnError> {
    let scale = 1.0 / normalizer(model, batch)?;
    let pad = model.config().pad_id;
    let mut total = 0.0;
    for ex in batch {
        let tokens = strip_trailing_pads(&ex.tokens, pad);
        let logits = model.forward(tokens, ex.cond.as_deref())?;
        total += match &ex.target {
            Target::NextToken => next_token_loss(&logits, tokens, pad).0,
            Target::Labels(y) => multilabel_loss(&logits.data, y).0,
        };
    }
    Ok(total * scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_matches_naive_formula() {
        let z = [-3.0, 0.0, 2.5];
        let y = [0.0, 1.0, 1.0];
        let (loss, grad) = multilabel_loss(&z, &y);
        let naive: f64 = z
            .iter()
            .zip(&y)
            .map(|(&z, &y)| {
                let p = 1.0 / (1.0 + (-z).exp());
                -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
            })
            .sum();
        assert!((loss - naive).abs() < 1e-12);
        assert!((grad[1] + 0.5).abs() < 1e-15);
    }

    #[test]
    fn bce_is_stationary_at_its_own_probabilities() {
        let z = [-1.3, 0.2, 4.0, -7.5];
        let y: Vec<f64> = z.iter().map(|&v| sigmoid(v)).collect();
        let (_, grad) = multilabel_loss(&z, &y);
        assert!(grad.iter().all(|g| g.abs() < 1e-15));
    }

    #[test]
    fn strip_pads() {
        assert_eq!(strip_trailing_pads(&[3, 0, 4, 0, 0], 0), &[3, 0, 4]);
        assert_eq!(strip_trailing_pads(&[0, 0], 0), &[] as &[u32]);
    }

    #[test]
    fn cross_entropy_skips_pad_targets() {
        let logits = Logits { rows: 3, cols: 2, data: vec![0.0; 6] };
        let (loss, grad) = next_token_loss(&logits, &[1, 0, 1], 0);
        assert!((loss - 2f64.ln()).abs() < 1e-15);
        assert_eq!(&grad[..2], &[0.0, 0.0]);
        assert_eq!(&grad[2..4], &[0.5, -0.5]);
    }
}
