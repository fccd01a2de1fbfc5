use metascore_nn::{batch_loss, loss_and_grad, AttentionKind, Example, HeadKind, ModelConfig, Transformer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const STEP: f64 = 1e-5;
/// Relative error is measured against max(|analytic|, |numeric|, FLOOR).
const FLOOR: f64 = 1e-6;
const MAX_REL_ERR: f64 = 1e-4;
const SAMPLES: usize = 240;

fn tiny(attention: AttentionKind, head: HeadKind, causal: bool) -> ModelConfig {
    ModelConfig {
        vocab_size: 13,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        max_seq_len: 16,
        dropout_rate: 0.0,
        causal,
        cond_dim: 3,
        attention,
        head,
        pad_id: 0,
    }
}

/// Random weights everywhere, including the zero-initialized conditioning
/// projection, so no gradient is trivially zero.
fn randomized(config: ModelConfig, seed: u64) -> Transformer {
    let mut model = Transformer::new(config, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.4).unwrap();
    for t in &mut model.params_mut().tensors {
        let base = if t.name.ends_with(".g") { 1.0 } else { 0.0 };
        t.data.iter_mut().for_each(|x| *x = base + normal.sample(&mut rng));
    }
    model
}

fn batch(head: HeadKind, rng: &mut ChaCha8Rng) -> Vec<Example> {
    (0..3)
        .map(|i| {
            let len = 5 + i * 2;
            let mut tokens: Vec<u32> = (0..len).map(|_| rng.random_range(1..13)).collect();
            // an interior pad exercises key masking and target skipping
            tokens[2] = 0;
            let cond = Some((0..3).map(|_| rng.random_range(-1.0..1.0)).collect());
            match head {
                HeadKind::LanguageModel => Example::next_token(tokens, cond),
                HeadKind::Multilabel { n_labels } => Example {
                    tokens,
                    cond,
                    target: metascore_nn::Target::Labels((0..n_labels).map(|j| ((i + j) % 2) as f64).collect()),
                },
            }
        })
        .collect()
}

fn max_relative_error(config: ModelConfig, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = randomized(config.clone(), seed);
    let data = batch(config.head, &mut rng);
    let (_, grads) = loss_and_grad(&model, &data, None, 1).unwrap();
    let n_tensors = model.params().tensors.len();
    let mut worst: f64 = 0.0;
    for _ in 0..SAMPLES {
        let t = rng.random_range(0..n_tensors);
        let i = rng.random_range(0..model.params().tensors[t].len());
        let orig = model.params().tensors[t].data[i];
        model.params_mut().tensors[t].data[i] = orig + STEP;
        let up = batch_loss(&model, &data).unwrap();
        model.params_mut().tensors[t].data[i] = orig - STEP;
        let down = batch_loss(&model, &data).unwrap();
        model.params_mut().tensors[t].data[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let analytic = grads.data[t][i];
        let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
        worst = worst.max(rel);
    }
    println!("{:?}/{:?}: max relative error {worst:e}", config.attention, config.head);
    worst
}

#[test]
fn causal_softmax_language_model() {
    let err = max_relative_error(tiny(AttentionKind::Softmax, HeadKind::LanguageModel, true), 1);
    assert!(err < MAX_REL_ERR, "max relative error {err:e}");
}

#[test]
fn causal_linear_attention_language_model() {
    let err = max_relative_error(tiny(AttentionKind::Linear, HeadKind::LanguageModel, true), 2);
    assert!(err < MAX_REL_ERR, "max relative error {err:e}");
}

#[test]
fn bidirectional_multilabel_encoder() {
    let err = max_relative_error(tiny(AttentionKind::Softmax, HeadKind::Multilabel { n_labels: 4 }, false), 3);
    assert!(err < MAX_REL_ERR, "max relative error {err:e}");
}

#[test]
fn bidirectional_linear_multilabel_encoder() {
    let err = max_relative_error(tiny(AttentionKind::Linear, HeadKind::Multilabel { n_labels: 3 }, false), 4);
    assert!(err < MAX_REL_ERR, "max relative error {err:e}");
}
