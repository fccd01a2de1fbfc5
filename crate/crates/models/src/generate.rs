//! Tag- and text-conditioned generation with grammar-constrained nucleus
//! sampling.

use metascore_core::tokenizer::{decode, encode_prefix, encode_truncated, Event, Layout};
use metascore_core::{Score, TagSet, TokenSequence, VocabSpec, DRUM_PROGRAM};
use metascore_nn::{Example, ModelCheckpoint, Transformer};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::embed::Embedder;
use crate::error::ModelError;
use crate::sampler::{sample, SamplerConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenerationMode {
    Tags,
    Text,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    EndOfSong,
    MaxTokens,
    ContextLimit,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    pub tokens: TokenSequence,
    pub score: Score,
    pub prompt_len: usize,
    pub stop: StopReason,
}

/// Which token families may come next.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Expect {
    GroupStart,
    Position(u32),
    Instrument,
    Pitch,
    DrumPitch,
    Duration,
}

/// Note-region grammar with non-decreasing (beat, position).
#[derive(Debug, Clone)]
pub struct Grammar {
    expect: Expect,
    last_beat: u32,
    last_position: u32,
}

impl Default for Grammar {
    fn default() -> Self {
        Grammar { expect: Expect::GroupStart, last_beat: 0, last_position: 0 }
    }
}

fn allow(mask: &mut [bool], start: u32, end: u32) {
    mask[start as usize..end as usize].fill(true);
}

impl Grammar {
    pub fn at_group_boundary(&self) -> bool {
        self.expect == Expect::GroupStart
    }

    pub fn allowed(&self, layout: &Layout) -> Vec<bool> {
        let mut mask = vec![false; layout.size as usize];
        match self.expect {
            Expect::GroupStart => {
                allow(&mut mask, layout.beat.start + self.last_beat, layout.beat.end());
                mask[layout.end_of_song as usize] = true;
            }
            Expect::Position(beat) => {
                let from = if beat == self.last_beat { self.last_position } else { 0 };
                allow(&mut mask, layout.position.start + from, layout.position.end());
            }
            Expect::Instrument => allow(&mut mask, layout.instrument.start, layout.instrument.end()),
            Expect::Pitch => allow(&mut mask, layout.pitch.start, layout.pitch.end()),
            Expect::DrumPitch => allow(&mut mask, layout.drum_pitch.start, layout.drum_pitch.end()),
            Expect::Duration => allow(&mut mask, layout.duration.start, layout.duration.end()),
        }
        mask
    }

    /// Advances past a token that `allowed` permitted.
    pub fn advance(&mut self, event: Event) {
        self.expect = match (self.expect, event) {
            (Expect::GroupStart, Event::Beat(b)) => Expect::Position(b),
            (Expect::Position(b), Event::Position(p)) => {
                self.last_beat = b;
                self.last_position = p;
                Expect::Instrument
            }
            (Expect::Instrument, Event::Instrument(DRUM_PROGRAM)) => Expect::DrumPitch,
            (Expect::Instrument, Event::Instrument(_)) => Expect::Pitch,
            (Expect::Pitch, Event::Pitch(_)) => Expect::Duration,
            _ => Expect::GroupStart,
        };
    }
}

fn check_vocab(model: &Transformer, vocab: &VocabSpec) -> Result<(), ModelError> {
    if model.config().vocab_size != vocab.size() {
        return Err(ModelError::VocabMismatch {
            expected: vocab.hash().to_string(),
            found: format!("a {}-token vocabulary", model.config().vocab_size),
        });
    }
    Ok(())
}

/// Loads a generator checkpoint, refusing one trained on another vocabulary.
pub fn load_generator(ckpt: &ModelCheckpoint, vocab: &VocabSpec) -> Result<Transformer, ModelError> {
    if ckpt.vocab_hash != vocab.hash() {
        return Err(ModelError::VocabMismatch { expected: vocab.hash().to_string(), found: ckpt.vocab_hash.clone() });
    }
    Ok(ckpt.model()?)
}

/// Samples a continuation of `prefix`. The output always ends with
/// end-of-song: when the budget runs out, any incomplete trailing note group
/// is dropped and end-of-song appended.
pub fn sample_continuation(
    model: &Transformer,
    vocab: &VocabSpec,
    prefix: &[u32],
    cond: Option<&[f64]>,
    sampler: &SamplerConfig,
) -> Result<Generation, ModelError> {
    sampler.validate()?;
    check_vocab(model, vocab)?;
    let layout = vocab.layout();
    let max_seq_len = model.config().max_seq_len;
    let (budget, limit_reason) = if sampler.max_tokens <= max_seq_len {
        (sampler.max_tokens, StopReason::MaxTokens)
    } else {
        (max_seq_len, StopReason::ContextLimit)
    };
    let mut tokens = prefix.to_vec();
    let mut stop = limit_reason;
    let mut group_end = tokens.len();
    if tokens.len() + 1 < budget {
        let mut rng = ChaCha8Rng::seed_from_u64(sampler.seed);
        let mut state = model.begin_decode(cond)?;
        let mut logits = Vec::new();
        for &t in prefix {
            logits = model.decode_step(&mut state, t)?;
        }
        let mut grammar = Grammar::default();
        while tokens.len() + 1 < budget {
            let mask = grammar.allowed(layout);
            let next = sample(&logits, &mask, sampler.temperature, sampler.top_p, &mut rng)
                .expect("grammar always allows a token") as u32;
            tokens.push(next);
            if next == layout.end_of_song {
                stop = StopReason::EndOfSong;
                break;
            }
            grammar.advance(vocab.event(next).expect("sampled ids are in the vocabulary"));
            if grammar.at_group_boundary() {
                group_end = tokens.len();
            }
            logits = model.decode_step(&mut state, next)?;
        }
    }
    if stop != StopReason::EndOfSong {
        tokens.truncate(group_end);
        tokens.push(layout.end_of_song);
    }
    let tokens = TokenSequence(tokens);
    let (_, score) = decode(&tokens, vocab);
    Ok(Generation { tokens, score, prompt_len: prefix.len(), stop })
}

/// Generation conditioned on a forced tag prefix (through start-of-notes).
pub fn generate_tags(
    model: &Transformer,
    vocab: &VocabSpec,
    tags: &TagSet,
    sampler: &SamplerConfig,
) -> Result<Generation, ModelError> {
    if model.config().cond_dim != 0 {
        return Err(ModelError::WrongMode("model expects a text embedding; use text mode".into()));
    }
    let prefix = encode_prefix(tags, vocab)?;
    sample_continuation(model, vocab, &prefix, None, sampler)
}

/// Generation conditioned on a prompt embedding, after the all-None tag
/// prefix.
pub fn generate_text(
    model: &Transformer,
    vocab: &VocabSpec,
    prompt: &str,
    embedder: &dyn Embedder,
    sampler: &SamplerConfig,
) -> Result<Generation, ModelError> {
    let dim = model.config().cond_dim;
    if dim == 0 {
        return Err(ModelError::WrongMode("model is tag-conditioned; use tag mode".into()));
    }
    let emb = embedder.embed(prompt)?;
    if emb.vector.len() != dim {
        return Err(ModelError::EmbeddingDimMismatch { expected: dim, found: emb.vector.len() });
    }
    let prefix = encode_prefix(&TagSet::default(), vocab)?;
    sample_continuation(model, vocab, &prefix, Some(&emb.vector), sampler)
}

/// Training example for the tag-conditioned model, cut to `max_len` tokens.
pub fn tag_example(tags: &TagSet, score: &Score, vocab: &VocabSpec, max_len: usize) -> Result<Example, ModelError> {
    let (seq, _) = encode_truncated(tags, score, vocab)?;
    let mut ids = seq.0;
    ids.truncate(max_len);
    Ok(Example::next_token(ids, None))
}

/// Training example for the text-conditioned model: all-None prefix and
/// the caption embedding as conditioning.
pub fn text_example(
    caption: &str,
    score: &Score,
    vocab: &VocabSpec,
    embedder: &dyn Embedder,
    max_len: usize,
) -> Result<Example, ModelError> {
    let (seq, _) = encode_truncated(&TagSet::default(), score, vocab)?;
    let mut ids = seq.0;
    ids.truncate(max_len);
    Ok(Example::next_token(ids, Some(embedder.embed(caption)?.vector)))
}
