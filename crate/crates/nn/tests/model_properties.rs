use metascore_nn::{
    batch_loss, AttentionKind, Example, HeadKind, ModelConfig, NnError, Transformer,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small(causal: bool, cond_dim: usize, attention: AttentionKind) -> ModelConfig {
    ModelConfig {
        vocab_size: 50,
        d_model: 16,
        n_layers: 2,
        n_heads: 4,
        d_ff: 32,
        max_seq_len: 40,
        dropout_rate: 0.0,
        causal,
        cond_dim,
        attention,
        head: HeadKind::LanguageModel,
        pad_id: 0,
    }
}

fn random_tokens(rng: &mut ChaCha8Rng, len: usize) -> Vec<u32> {
    (0..len).map(|_| rng.random_range(1..50)).collect()
}

#[test]
fn causal_prefix_invariance() {
    for attention in [AttentionKind::Softmax, AttentionKind::Linear] {
        let model = Transformer::new(small(true, 0, attention), 11).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let k = rng.random_range(1..20);
            let prefix = random_tokens(&mut rng, k);
            let mut a = prefix.clone();
            let (na, nb) = (rng.random_range(0..15), rng.random_range(1..15));
            a.extend(random_tokens(&mut rng, na));
            let mut b = prefix;
            b.extend(random_tokens(&mut rng, nb));
            let (la, lb) = (model.forward(&a, None).unwrap(), model.forward(&b, None).unwrap());
            for t in 0..k {
                assert_eq!(la.row(t), lb.row(t), "{attention:?} position {t}");
            }
        }
    }
}

#[test]
fn bidirectional_model_sees_future_tokens() {
    let model = Transformer::new(small(false, 0, AttentionKind::Softmax), 3).unwrap();
    let a = model.forward(&[5, 6, 7], None).unwrap();
    let b = model.forward(&[5, 6, 8], None).unwrap();
    assert_ne!(a.row(0), b.row(0));
}

#[test]
fn zero_projection_is_identity_for_any_conditioning() {
    let plain = Transformer::new(small(true, 0, AttentionKind::Softmax), 21).unwrap();
    let cond = Transformer::new(small(true, 6, AttentionKind::Softmax), 21).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..20 {
        let tokens = random_tokens(&mut rng, 12);
        let v: Vec<f64> = (0..6).map(|_| rng.random_range(-10.0..10.0)).collect();
        assert_eq!(plain.forward(&tokens, None).unwrap(), cond.forward(&tokens, Some(&v)).unwrap());
    }
}

#[test]
fn conditioning_changes_every_row_once_projection_is_nonzero() {
    let mut model = Transformer::new(small(true, 4, AttentionKind::Softmax), 2).unwrap();
    let (w, _) = model.cond_projection().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    model.params_mut().get_mut(w).iter_mut().for_each(|x| *x = rng.random_range(-0.1..0.1));
    let tokens = random_tokens(&mut rng, 10);
    let base = model.forward(&tokens, Some(&[0.1, 0.2, 0.3, 0.4])).unwrap();
    let moved = model.forward(&tokens, Some(&[0.1, 0.2, 0.3, 0.5])).unwrap();
    assert!(base.data.iter().all(|x| x.is_finite()));
    for t in 0..tokens.len() {
        assert_ne!(base.row(t), moved.row(t));
    }
}

#[test]
fn input_errors() {
    let model = Transformer::new(small(true, 3, AttentionKind::Softmax), 0).unwrap();
    let long = vec![1; 41];
    assert!(matches!(model.forward(&long, Some(&[0.0; 3])), Err(NnError::SequenceTooLong { len: 41, max: 40 })));
    assert!(matches!(
        model.forward(&[1, 2], Some(&[0.0; 2])),
        Err(NnError::ConditioningDimMismatch { expected: 3, found: 2 })
    ));
    assert!(matches!(model.forward(&[1, 50], Some(&[0.0; 3])), Err(NnError::TokenOutOfRange { token: 50, .. })));
    let bad = ModelConfig { d_model: 10, n_heads: 4, ..small(true, 0, AttentionKind::Softmax) };
    assert!(matches!(Transformer::new(bad, 0), Err(NnError::InvalidConfig(_))));
}

#[test]
fn uniform_logits_give_log_vocab_loss() {
    let mut model = Transformer::new(small(true, 0, AttentionKind::Softmax), 4).unwrap();
    let head = model.params().find("head.w").unwrap();
    model.params_mut().get_mut(head).fill(0.0);
    let batch = vec![Example::next_token(vec![1, 2, 3, 4, 5], None), Example::next_token(vec![7, 8, 0, 0], None)];
    let loss = batch_loss(&model, &batch).unwrap();
    assert!((loss - 50f64.ln()).abs() < 1e-12);
}

#[test]
fn empty_batch_is_an_error() {
    let model = Transformer::new(small(true, 0, AttentionKind::Softmax), 4).unwrap();
    assert!(matches!(batch_loss(&model, &[]), Err(NnError::EmptyBatch)));
    assert!(matches!(batch_loss(&model, &[Example::next_token(vec![3], None)]), Err(NnError::EmptyBatch)));
}

#[test]
fn incremental_decoding_matches_full_forward() {
    for attention in [AttentionKind::Softmax, AttentionKind::Linear] {
        let mut model = Transformer::new(small(true, 5, attention), 8).unwrap();
        let (w, b) = model.cond_projection().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        model.params_mut().get_mut(w).iter_mut().for_each(|x| *x = rng.random_range(-0.2..0.2));
        model.params_mut().get_mut(b).iter_mut().for_each(|x| *x = rng.random_range(-0.2..0.2));
        let cond: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut tokens = random_tokens(&mut rng, 25);
        tokens[4] = 0;
        let full = model.forward(&tokens, Some(&cond)).unwrap();
        let mut state = model.begin_decode(Some(&cond)).unwrap();
        for (t, &tok) in tokens.iter().enumerate() {
            let row = model.decode_step(&mut state, tok).unwrap();
            for (a, b) in row.iter().zip(full.row(t)) {
                assert!((a - b).abs() < 1e-9, "{attention:?} position {t}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn decoding_stops_at_context_limit() {
    let model = Transformer::new(ModelConfig { max_seq_len: 2, ..small(true, 0, AttentionKind::Softmax) }, 0).unwrap();
    let mut state = model.begin_decode(None).unwrap();
    model.decode_step(&mut state, 1).unwrap();
    model.decode_step(&mut state, 1).unwrap();
    assert!(matches!(model.decode_step(&mut state, 1), Err(NnError::SequenceTooLong { len: 3, max: 2 })));
}

#[test]
fn multilabel_pooling_ignores_trailing_pads_and_sees_every_token() {
    let config = ModelConfig { head: HeadKind::Multilabel { n_labels: 8 }, ..small(false, 0, AttentionKind::Softmax) };
    let model = Transformer::new(config, 6).unwrap();
    let a = model.forward(&[3, 4, 5], None).unwrap();
    let padded = model.forward(&[3, 4, 5, 0, 0, 0], None).unwrap();
    assert_eq!(a.rows, 1);
    assert_eq!(a.cols, 8);
    for (x, y) in a.data.iter().zip(&padded.data) {
        assert!((x - y).abs() < 1e-12);
    }
    // no causal constraint: perturbing any position moves every label logit
    for pos in 0..3 {
        let mut t = vec![3, 4, 5];
        t[pos] = 9;
        let b = model.forward(&t, None).unwrap();
        assert!(a.data.iter().zip(&b.data).all(|(x, y)| x != y), "position {pos}");
    }
}
