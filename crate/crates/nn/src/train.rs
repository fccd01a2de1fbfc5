use std::ops::ControlFlow;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::NnError;
use crate::loss::{loss_and_grad, Example};
use crate::model::Transformer;
use crate::optim::{Adam, AdamConfig, StepStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub seed: u64,
    /// Examples processed concurrently; results do not depend on it.
    pub jobs: usize,
    pub optimizer: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { steps: 1000, batch_size: 8, seed: 0, jobs: 1, optimizer: AdamConfig::default() }
    }
}

/// Dataset indices of the batch at global step `step`: consecutive slices of
/// per-epoch permutations, so a resumed run sees the same batches.
pub fn batch_indices(n: usize, batch_size: usize, seed: u64, step: u64) -> Vec<usize> {
    let mut out = Vec::with_capacity(batch_size);
    let mut cached: Option<(u64, Vec<usize>)> = None;
    for i in 0..batch_size as u64 {
        let sample = step * batch_size as u64 + i;
        let (epoch, offset) = (sample / n as u64, (sample % n as u64) as usize);
        if cached.as_ref().is_none_or(|(e, _)| *e != epoch) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(epoch);
            let mut perm: Vec<usize> = (0..n).collect();
            perm.shuffle(&mut rng);
            cached = Some((epoch, perm));
        }
        out.push(cached.as_ref().expect("permutation").1[offset]);
    }
    out
}

fn dropout_seeds(seed: u64, step: u64, batch_size: usize) -> Vec<u64> {
    (0..batch_size as u64).map(|i| seed ^ (step * batch_size as u64 + i + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)).collect()
}

/// Runs `steps` optimizer steps continuing from `adam.step` and returns the
/// training loss of each. `on_step` sees the global step number, the loss
/// and the update statistics, and may stop training early.
pub fn train(
    model: &mut Transformer,
    adam: &mut Adam,
    data: &[Example],
    config: &TrainConfig,
    mut on_step: impl FnMut(u64, f64, StepStats) -> ControlFlow<()>,
) -> Result<Vec<f64>, NnError> {
    if data.is_empty() {
        return Err(NnError::EmptyBatch);
    }
    let batch_size = config.batch_size.max(1);
    let use_dropout = model.config().dropout_rate > 0.0;
    let mut losses = Vec::with_capacity(config.steps as usize);
    for _ in 0..config.steps {
        let step = adam.step;
        let batch: Vec<Example> =
            batch_indices(data.len(), batch_size, config.seed, step).into_iter().map(|i| data[i].clone()).collect();
        let seeds = use_dropout.then(|| dropout_seeds(config.seed, step, batch_size));
        let (loss, mut grads) = loss_and_grad(model, &batch, seeds.as_deref(), config.jobs)?;
        let stats = adam.update(model.params_mut(), &mut grads);
        losses.push(loss);
        if on_step(step, loss, stats).is_break() {
            break;
        }
    }
    Ok(losses)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn batches_cover_each_epoch() {
        let mut seen: Vec<usize> = (0..5).flat_map(|s| batch_indices(10, 2, 7, s)).collect();
        seen.sort();
        assert_eq!(seen, (0..10).collect::<Vec<_>>());
        assert_eq!(batch_indices(10, 3, 7, 4), batch_indices(10, 3, 7, 4));
        assert_ne!(batch_indices(10, 10, 7, 0), batch_indices(10, 10, 7, 1));
    }

    #[test]
    fn batch_larger_than_dataset_spans_epochs() {
        let b = batch_indices(3, 7, 1, 0);
        assert_eq!(b.len(), 7);
        let mut first: Vec<usize> = b[..3].to_vec();
        first.sort();
        assert_eq!(first, vec![0, 1, 2]);
    }
}
