use metascore_core::tokenizer::{build_vocab, decode_strict, encode_prefix, Event};
use metascore_core::{Complexity, Genre, TagSet, VocabSpec};
use metascore_models::embed::StubEmbedder;
use metascore_models::sampler::sample;
use metascore_models::{generate_tags, generate_text, ModelError, SamplerConfig, StopReason};
use metascore_nn::{ModelCheckpoint, ModelConfig, Transformer};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn tiny(vocab: &VocabSpec, cond_dim: usize, max_seq_len: usize) -> Transformer {
    let config = ModelConfig {
        vocab_size: vocab.size(),
        d_model: 16,
        n_layers: 1,
        n_heads: 2,
        d_ff: 32,
        max_seq_len,
        dropout_rate: 0.0,
        cond_dim,
        ..ModelConfig::default()
    };
    Transformer::new(config, 3).unwrap()
}

fn tags() -> TagSet {
    TagSet {
        genres: vec![Genre::ALL[2]],
        composer: None,
        complexity: Some(Complexity::ALL[1]),
        instruments: [0u8, 33, 128].into_iter().collect(),
    }
}

#[test]
fn output_starts_with_forced_prefix_and_decodes_strictly() {
    let v = build_vocab();
    let m = tiny(&v, 0, 96);
    let prefix = encode_prefix(&tags(), &v).unwrap();
    for seed in 0..5 {
        let g = generate_tags(&m, &v, &tags(), &SamplerConfig { seed, max_tokens: 96, ..Default::default() }).unwrap();
        assert_eq!(&g.tokens.ids()[..prefix.len()], &prefix[..]);
        assert_eq!(g.prompt_len, prefix.len());
        assert_eq!(*g.tokens.ids().last().unwrap(), v.id(&Event::EndOfSong));
        assert!(g.tokens.len() <= 96);
        let (decoded_tags, score) = decode_strict(&g.tokens, &v).unwrap();
        assert_eq!(decoded_tags, tags());
        assert_eq!(score, g.score);
        assert!(score.is_canonical());
    }
}

#[test]
fn eleven_token_budget_yields_prompt_and_end() {
    let v = build_vocab();
    let m = tiny(&v, 0, 64);
    let g = generate_tags(&m, &v, &TagSet::default(), &SamplerConfig { max_tokens: 11, ..Default::default() }).unwrap();
    assert_eq!(g.tokens.len(), 11);
    assert_eq!(g.prompt_len, 10);
    assert_eq!(g.stop, StopReason::MaxTokens);
    assert!(g.score.notes.is_empty());
}

#[test]
fn budget_beyond_context_stops_at_context() {
    let v = build_vocab();
    let m = tiny(&v, 0, 40);
    let g = generate_tags(&m, &v, &TagSet::default(), &SamplerConfig { max_tokens: 500, ..Default::default() }).unwrap();
    assert!(g.tokens.len() <= 40);
    assert!(matches!(g.stop, StopReason::ContextLimit | StopReason::EndOfSong));
    decode_strict(&g.tokens, &v).unwrap();
}

#[test]
fn same_seed_same_output() {
    let v = build_vocab();
    let m = tiny(&v, 0, 80);
    let cfg = SamplerConfig { seed: 11, max_tokens: 80, ..Default::default() };
    let a = generate_tags(&m, &v, &tags(), &cfg).unwrap();
    let b = generate_tags(&m, &v, &tags(), &cfg).unwrap();
    assert_eq!(a, b);
    let outputs: std::collections::BTreeSet<Vec<u32>> = (0..4)
        .map(|seed| generate_tags(&m, &v, &tags(), &SamplerConfig { seed, max_tokens: 80, ..Default::default() }).unwrap().tokens.0)
        .collect();
    assert!(outputs.len() > 1);
}

#[test]
fn reloaded_checkpoint_generates_identically() {
    let v = build_vocab();
    let m = tiny(&v, 0, 64);
    let ckpt = ModelCheckpoint::new(&m, v.hash(), 3);
    let reloaded = metascore_models::generate::load_generator(&ModelCheckpoint::from_bytes(&ckpt.to_bytes()).unwrap(), &v).unwrap();
    let cfg = SamplerConfig { seed: 5, max_tokens: 64, ..Default::default() };
    assert_eq!(generate_tags(&m, &v, &tags(), &cfg).unwrap(), generate_tags(&reloaded, &v, &tags(), &cfg).unwrap());

    let mut foreign = ckpt.clone();
    foreign.vocab_hash = "0".repeat(64);
    assert!(matches!(
        metascore_models::generate::load_generator(&foreign, &v),
        Err(ModelError::VocabMismatch { .. })
    ));
}

#[test]
fn text_mode_uses_none_prefix_and_checks_dimensions() {
    let v = build_vocab();
    let mut m = tiny(&v, 8, 64);
    // a fresh projection is zero; give the prompt some influence
    let (w, _) = m.cond_projection().unwrap();
    for (i, x) in m.params_mut().get_mut(w).iter_mut().enumerate() {
        *x = if i % 3 == 0 { 4.0 } else { -4.0 };
    }
    let e = StubEmbedder { dim: 8 };
    let cfg = SamplerConfig { max_tokens: 64, ..Default::default() };
    let g = generate_text(&m, &v, "a slow sad piano piece", &e, &cfg).unwrap();
    let none = encode_prefix(&TagSet::default(), &v).unwrap();
    assert_eq!(&g.tokens.ids()[..none.len()], &none[..]);
    decode_strict(&g.tokens, &v).unwrap();

    let other = generate_text(&m, &v, "a loud fast metal piece", &e, &cfg).unwrap();
    assert_ne!(g.tokens, other.tokens);

    assert!(matches!(
        generate_text(&m, &v, "x", &StubEmbedder { dim: 9 }, &cfg),
        Err(ModelError::EmbeddingDimMismatch { expected: 8, found: 9 })
    ));
    assert!(matches!(generate_tags(&m, &v, &tags(), &cfg), Err(ModelError::WrongMode(_))));
    assert!(matches!(generate_text(&tiny(&v, 0, 64), &v, "x", &e, &cfg), Err(ModelError::WrongMode(_))));
}

#[test]
fn invalid_sampler_rejected() {
    let v = build_vocab();
    let m = tiny(&v, 0, 64);
    let cfg = SamplerConfig { temperature: 0.0, ..Default::default() };
    assert!(matches!(generate_tags(&m, &v, &tags(), &cfg), Err(ModelError::InvalidSampler(_))));
}

#[test]
fn sampling_frequencies_match_nucleus() {
    // nucleus of [.4, .25, .15, .1, .06, .04] at top_p .85 is the first four,
    // renormalized by their mass .9
    let probs = [0.4, 0.25, 0.15, 0.1, 0.06, 0.04];
    let expected = [0.4 / 0.9, 0.25 / 0.9, 0.15 / 0.9, 0.1 / 0.9, 0.0, 0.0];
    let logits: Vec<f64> = probs.iter().map(|p: &f64| p.ln() + 2.0).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let n = 100_000;
    let mut counts = [0usize; 6];
    for _ in 0..n {
        counts[sample(&logits, &[true; 6], 1.0, 0.85, &mut rng).unwrap()] += 1;
    }
    for (c, p) in counts.iter().zip(expected) {
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        assert!((*c as f64 - n as f64 * p).abs() <= 3.0 * sd, "count {c} for p {p}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]
    #[test]
    fn every_generation_is_well_formed(seed in any::<u64>(), temperature in 0.3f64..3.0, top_p in 0.2f64..1.0) {
        let v = build_vocab();
        let m = tiny(&v, 0, 48);
        let g = generate_tags(&m, &v, &tags(), &SamplerConfig { seed, temperature, top_p, max_tokens: 48 }).unwrap();
        prop_assert!(decode_strict(&g.tokens, &v).is_ok());
        prop_assert!(g.score.is_canonical());
        prop_assert!(g.tokens.len() <= 48);
    }
}
