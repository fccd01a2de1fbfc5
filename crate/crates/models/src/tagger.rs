//! Multi-label genre tagger: a bidirectional encoder over an instrument
//! prefix plus three note segments, mean pooling and one sigmoid per genre.

use std::collections::BTreeSet;

use metascore_core::tokenizer::{instrument_tags, note_tokens, segment_for_tagger, Event, MAX_BEATS, TAGGER_INPUT_LEN};
use metascore_core::{Genre, Score, TokenSequence, VocabSpec};
use metascore_nn::{Example, HeadKind, ModelCheckpoint, ModelConfig, Transformer};
use serde::{Deserialize, Serialize};

use crate::error::ModelError;

pub const N_CLASSES: usize = Genre::ALL.len();
pub const DEFAULT_THRESHOLD: f64 = 0.5;
/// Longest instrument prefix: start-of-instrument, 129 programs, start-of-notes.
pub const MAX_PREFIX_LEN: usize = 131;

/// Candidate thresholds 0.05, 0.10, ..., 0.95.
pub fn threshold_grid() -> Vec<f64> {
    (1..=19).map(|i| i as f64 * 0.05).collect()
}

/// Encoder configuration for a vocabulary; the remaining fields keep the
/// backbone defaults.
pub fn tagger_config(vocab: &VocabSpec) -> ModelConfig {
    ModelConfig {
        vocab_size: vocab.size(),
        max_seq_len: TAGGER_INPUT_LEN + MAX_PREFIX_LEN,
        causal: false,
        head: HeadKind::Multilabel { n_labels: N_CLASSES },
        ..ModelConfig::default()
    }
}

/// `[start-of-instrument, tag_instrument..., start-of-notes]` followed by the
/// 1023-token segment selection of the note tokens. Notes beyond the beat
/// vocabulary are skipped.
pub fn tagger_input(score: &Score, vocab: &VocabSpec) -> TokenSequence {
    let mut ids = vec![vocab.id(&Event::StartOfInstrument)];
    ids.extend(instrument_tags(&score.programs(), vocab).expect("score programs are valid"));
    ids.push(vocab.id(&Event::StartOfNotes));
    let mut notes = score.notes.clone();
    notes.sort_unstable();
    notes.dedup();
    let note_ids: Vec<u32> = notes
        .iter()
        .filter(|n| n.beat < MAX_BEATS)
        .flat_map(|n| note_tokens(n, vocab).expect("canonical note"))
        .collect();
    ids.extend(segment_for_tagger(&note_ids));
    TokenSequence(ids)
}

pub fn multi_hot(genres: &[Genre]) -> Vec<f64> {
    let mut y = vec![0.0; N_CLASSES];
    for g in genres {
        y[g.index()] = 1.0;
    }
    y
}

pub fn training_example(score: &Score, genres: &[Genre], vocab: &VocabSpec) -> Example {
    Example::labels(tagger_input(score, vocab).0, multi_hot(genres))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSet {
    pub thresholds: Vec<f64>,
    /// Classes without validation positives, left at the default.
    #[serde(default)]
    pub flagged: Vec<Genre>,
}

impl Default for ThresholdSet {
    fn default() -> Self {
        ThresholdSet { thresholds: vec![DEFAULT_THRESHOLD; N_CLASSES], flagged: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaggerOutput {
    pub probabilities: Vec<f64>,
    pub predicted: Vec<Genre>,
}

/// Classes whose probability reaches their threshold.
pub fn apply_thresholds(probabilities: &[f64], thresholds: &ThresholdSet) -> Vec<Genre> {
    Genre::ALL
        .iter()
        .zip(probabilities.iter().zip(&thresholds.thresholds))
        .filter(|(_, (p, t))| p >= t)
        .map(|(g, _)| *g)
        .collect()
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// Per-class F1 of thresholding `probs` at `threshold`.
pub fn class_f1(probs: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (&p, &y) in probs.iter().zip(labels) {
        match (p >= threshold, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => {}
        }
    }
    f1(tp, fp, fn_)
}

/// Picks, for each class independently, the grid threshold with the best
/// F1 on the validation predictions; ties go to the lower threshold.
/// `probabilities[i][c]` and `labels[i]` describe validation example `i`.
pub fn tune_thresholds(probabilities: &[Vec<f64>], labels: &[Vec<Genre>]) -> Result<ThresholdSet, ModelError> {
    if probabilities.is_empty() {
        return Err(ModelError::EmptyValidationSet);
    }
    let grid = threshold_grid();
    let mut out = ThresholdSet::default();
    for (c, genre) in Genre::ALL.iter().enumerate() {
        let probs: Vec<f64> = probabilities.iter().map(|p| p[c]).collect();
        let truth: Vec<bool> = labels.iter().map(|l| l.contains(genre)).collect();
        if !truth.iter().any(|&y| y) {
            out.flagged.push(*genre);
            continue;
        }
        let mut best = (f64::NEG_INFINITY, DEFAULT_THRESHOLD);
        for &t in &grid {
            let score = class_f1(&probs, &truth, t);
            if score > best.0 {
                best = (score, t);
            }
        }
        out.thresholds[c] = best.1;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MicroScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

/// Micro-averaged precision, recall and F1 over all (example, class)
/// pairs. Undefined ratios are reported as 0.
pub fn micro_scores(predicted: &[Vec<Genre>], truth: &[Vec<Genre>]) -> MicroScores {
    let (mut tp, mut fp, mut fn_) = (0, 0, 0);
    for (p, t) in predicted.iter().zip(truth) {
        let p: BTreeSet<_> = p.iter().collect();
        let t: BTreeSet<_> = t.iter().collect();
        tp += p.intersection(&t).count();
        fp += p.difference(&t).count();
        fn_ += t.difference(&p).count();
    }
    let ratio = |a: usize, b: usize| if a + b == 0 { 0.0 } else { a as f64 / (a + b) as f64 };
    let (precision, recall) = (ratio(tp, fp), ratio(tp, fn_));
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    MicroScores { precision, recall, f1, tp, fp, fn_ }
}

#[derive(Debug, Clone)]
pub struct Tagger {
    pub model: Transformer,
    pub thresholds: ThresholdSet,
    pub vocab_hash: String,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct TaggerExtras {
    #[serde(default)]
    thresholds: Option<ThresholdSet>,
}

impl Tagger {
    pub fn new(model: Transformer, vocab: &VocabSpec) -> Self {
        Tagger { model, thresholds: ThresholdSet::default(), vocab_hash: vocab.hash().to_string() }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint, vocab: &VocabSpec) -> Result<Self, ModelError> {
        if ckpt.vocab_hash != vocab.hash() {
            return Err(ModelError::VocabMismatch { expected: vocab.hash().to_string(), found: ckpt.vocab_hash.clone() });
        }
        if !matches!(ckpt.config.head, HeadKind::Multilabel { n_labels: N_CLASSES }) {
            return Err(ModelError::WrongMode("checkpoint is not a genre tagger".into()));
        }
        let extras: TaggerExtras = serde_json::from_value(ckpt.extras.clone()).unwrap_or_default();
        Ok(Tagger {
            model: ckpt.model()?,
            thresholds: extras.thresholds.unwrap_or_default(),
            vocab_hash: ckpt.vocab_hash.clone(),
        })
    }

    /// Checkpoint carrying the thresholds in its extras.
    pub fn to_checkpoint(&self, rng_seed: u64) -> ModelCheckpoint {
        let mut ckpt = ModelCheckpoint::new(&self.model, self.vocab_hash.clone(), rng_seed);
        ckpt.extras = serde_json::json!({ "thresholds": self.thresholds });
        ckpt
    }

    pub fn probabilities(&self, score: &Score, vocab: &VocabSpec) -> Result<Vec<f64>, ModelError> {
        if vocab.hash() != self.vocab_hash {
            return Err(ModelError::VocabMismatch { expected: vocab.hash().to_string(), found: self.vocab_hash.clone() });
        }
        let input = tagger_input(score, vocab);
        let pad = self.model.config().pad_id;
        let tokens = metascore_nn::loss::strip_trailing_pads(input.ids(), pad);
        let logits = self.model.forward(tokens, None)?;
        Ok(logits.data.iter().map(|&z| 1.0 / (1.0 + (-z).exp())).collect())
    }

    pub fn predict(&self, score: &Score, vocab: &VocabSpec) -> Result<TaggerOutput, ModelError> {
        let probabilities = self.probabilities(score, vocab)?;
        let predicted = apply_thresholds(&probabilities, &self.thresholds);
        Ok(TaggerOutput { probabilities, predicted })
    }

    /// Tunes thresholds on `(score, genres)` validation pairs and stores them.
    pub fn tune(&mut self, validation: &[(Score, Vec<Genre>)], vocab: &VocabSpec) -> Result<&ThresholdSet, ModelError> {
        let probs = validation.iter().map(|(s, _)| self.probabilities(s, vocab)).collect::<Result<Vec<_>, _>>()?;
        let labels: Vec<Vec<Genre>> = validation.iter().map(|(_, g)| g.clone()).collect();
        self.thresholds = tune_thresholds(&probs, &labels)?;
        Ok(&self.thresholds)
    }

    pub fn evaluate(&self, test: &[(Score, Vec<Genre>)], vocab: &VocabSpec) -> Result<MicroScores, ModelError> {
        let predicted =
            test.iter().map(|(s, _)| self.predict(s, vocab).map(|o| o.predicted)).collect::<Result<Vec<_>, _>>()?;
        let truth: Vec<Vec<Genre>> = test.iter().map(|(_, g)| g.clone()).collect();
        Ok(micro_scores(&predicted, &truth))
    }
}
