//! Tag-prefixed event representation.
//!
//! A song is encoded as
//!
//! ```text
//! start-of-song
//! start-of-genre       tag_genre…       | tag_genre_None
//! start-of-composer    tag_composer     | tag_composer_None
//! start-of-complexity  tag_complexity   | tag_complexity_None
//! start-of-instrument  tag_instrument…  | tag_instrument_None
//! start-of-notes
//! (beat position instrument pitch duration | beat position instrument(128) drum_pitch)*
//! end-of-song
//! ```
//!
//! Every note emits its full group; there is no elision of repeated beats.

mod vocab;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

pub use vocab::{build_vocab, Event, IdRange, Layout, VocabConfig, VocabSpec, DEFAULT_COMPOSERS, MAX_BEATS, VOCAB_VERSION};

use crate::error::TokenizerError;
use crate::score::{canonicalize, Complexity, Genre, Metadata, Note, Score, DRUM_PROGRAM};

/// Length of each of the three tagger segments.
pub const SEGMENT_LEN: usize = 341;
/// Total tagger input length after segmentation.
pub const TAGGER_INPUT_LEN: usize = 3 * SEGMENT_LEN;

/// The four control fields. Empty `genres`/`instruments` mean the tag is missing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TagSet {
    pub genres: Vec<Genre>,
    pub composer: Option<String>,
    pub complexity: Option<Complexity>,
    pub instruments: BTreeSet<u8>,
}

impl TagSet {
    pub fn with_genre(mut self, genre: Genre) -> Self {
        self.genres = vec![genre];
        self
    }

    pub fn with_instruments(mut self, programs: impl IntoIterator<Item = u8>) -> Self {
        self.instruments = programs.into_iter().collect();
        self
    }

    /// Tags for a corpus entry: genres/complexity from the metadata, the
    /// composer only when the vocabulary knows it, instruments from the score.
    pub fn from_metadata(metadata: &Metadata, score: &Score, vocab: &VocabSpec) -> TagSet {
        let mut genres: Vec<Genre> =
            metadata.genre_tags.iter().copied().filter(|g| vocab.genres().contains(g)).collect();
        genres.sort();
        genres.dedup();
        TagSet {
            genres,
            composer: metadata.composer.clone().filter(|c| vocab.composer_index(c).is_some()),
            complexity: metadata.complexity.filter(|c| vocab.complexities().contains(c)),
            instruments: score.programs(),
        }
    }

    fn sorted_genres(&self) -> Vec<Genre> {
        let mut g = self.genres.clone();
        g.sort();
        g.dedup();
        g
    }
}

/// Flat integer token sequence.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TokenSequence(pub Vec<u32>);

impl TokenSequence {
    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl From<Vec<u32>> for TokenSequence {
    fn from(ids: Vec<u32>) -> Self {
        TokenSequence(ids)
    }
}

/// The tag prefix from start-of-song through start-of-notes.
pub fn encode_prefix(tags: &TagSet, vocab: &VocabSpec) -> Result<Vec<u32>, TokenizerError> {
    let mut ids = vec![vocab.id(&Event::StartOfSong), vocab.id(&Event::StartOfGenre)];
    let genres = tags.sorted_genres();
    if genres.is_empty() {
        ids.push(vocab.id(&Event::TagGenre(None)));
    }
    for g in genres {
        let id = vocab
            .try_id(&Event::TagGenre(Some(g)))
            .ok_or_else(|| TokenizerError::UnknownGenre(g.label().to_string()))?;
        ids.push(id);
    }

    ids.push(vocab.id(&Event::StartOfComposer));
    let composer = match &tags.composer {
        Some(name) => Some(
            vocab.composer_index(name).ok_or_else(|| TokenizerError::UnknownComposer(name.clone()))?,
        ),
        None => None,
    };
    ids.push(vocab.id(&Event::TagComposer(composer)));

    ids.push(vocab.id(&Event::StartOfComplexity));
    ids.push(
        vocab
            .try_id(&Event::TagComplexity(tags.complexity))
            .ok_or_else(|| TokenizerError::UnknownComplexity(tags.complexity.map(|c| c.to_string()).unwrap_or_default()))?,
    );

    ids.push(vocab.id(&Event::StartOfInstrument));
    ids.extend(instrument_tags(&tags.instruments, vocab)?);
    ids.push(vocab.id(&Event::StartOfNotes));
    Ok(ids)
}

/// `tag_instrument` tokens in ascending program order, or the None placeholder.
pub fn instrument_tags(programs: &BTreeSet<u8>, vocab: &VocabSpec) -> Result<Vec<u32>, TokenizerError> {
    if programs.is_empty() {
        return Ok(vec![vocab.id(&Event::TagInstrument(None))]);
    }
    programs
        .iter()
        .map(|&p| {
            vocab
                .try_id(&Event::TagInstrument(Some(p)))
                .ok_or(TokenizerError::Score(crate::ScoreError::OutOfRangeField { field: "program", value: p as i64 }))
        })
        .collect()
}

/// Token group of one note: 5 tokens, or 4 for drums (no duration).
pub fn note_tokens(note: &Note, vocab: &VocabSpec) -> Result<Vec<u32>, TokenizerError> {
    if note.beat >= MAX_BEATS {
        return Err(TokenizerError::BeatOverflow(note.beat));
    }
    note.validate()?;
    let mut ids = vec![
        vocab.id(&Event::Beat(note.beat)),
        vocab.id(&Event::Position(note.position)),
        vocab.id(&Event::Instrument(note.program)),
    ];
    if note.is_drum() {
        ids.push(vocab.id(&Event::DrumPitch(note.pitch)));
    } else {
        ids.push(vocab.id(&Event::Pitch(note.pitch)));
        ids.push(vocab.id(&Event::Duration(note.duration)));
    }
    Ok(ids)
}

/// Token ids of the note region (between start-of-notes and end-of-song).
pub fn encode_notes(score: &Score, vocab: &VocabSpec) -> Result<Vec<u32>, TokenizerError> {
    let mut notes = score.notes.clone();
    notes.sort_unstable();
    notes.dedup();
    let mut ids = Vec::with_capacity(notes.len() * 5);
    for n in &notes {
        ids.extend(note_tokens(n, vocab)?);
    }
    Ok(ids)
}

pub fn encode(tags: &TagSet, score: &Score, vocab: &VocabSpec) -> Result<TokenSequence, TokenizerError> {
    let mut ids = encode_prefix(tags, vocab)?;
    ids.extend(encode_notes(score, vocab)?);
    ids.push(vocab.id(&Event::EndOfSong));
    Ok(TokenSequence(ids))
}

/// Like [`encode`], but drops notes beyond the beat vocabulary instead of
/// failing. Returns the number of dropped notes.
pub fn encode_truncated(
    tags: &TagSet,
    score: &Score,
    vocab: &VocabSpec,
) -> Result<(TokenSequence, usize), TokenizerError> {
    let kept: Vec<Note> = score.notes.iter().copied().filter(|n| n.beat < MAX_BEATS).collect();
    let dropped = score.notes.len() - kept.len();
    if dropped > 0 {
        log::warn!("dropped {dropped} notes at or beyond beat {MAX_BEATS}");
    }
    let truncated = Score { notes: kept, ..score.clone() };
    Ok((encode(tags, &truncated, vocab)?, dropped))
}

#[derive(Default)]
struct PartialNote {
    beat: Option<u32>,
    position: Option<u32>,
    program: Option<u8>,
    pitch: Option<u8>,
}

/// Decodes any token sequence, recovering from grammar errors: unknown or
/// misplaced tokens are skipped, incomplete note groups dropped and a missing
/// end-of-song tolerated. Always returns a valid canonical score.
pub fn decode(tokens: &TokenSequence, vocab: &VocabSpec) -> (TagSet, Score) {
    let mut tags = TagSet::default();
    let mut notes = Vec::new();
    let mut in_notes = false;
    let mut partial = PartialNote::default();

    for &id in tokens.ids() {
        let Some(event) = vocab.event(id) else { continue };
        if !in_notes {
            match event {
                Event::TagGenre(Some(g)) => {
                    if !tags.genres.contains(&g) {
                        tags.genres.push(g);
                    }
                    continue;
                }
                Event::TagComposer(Some(i)) => {
                    if tags.composer.is_none() {
                        tags.composer = vocab.composer_name(i).map(str::to_string);
                    }
                    continue;
                }
                Event::TagComplexity(Some(c)) => {
                    tags.complexity.get_or_insert(c);
                    continue;
                }
                Event::TagInstrument(Some(p)) => {
                    tags.instruments.insert(p);
                    continue;
                }
                Event::StartOfNotes => {
                    in_notes = true;
                    continue;
                }
                Event::Beat(_) => in_notes = true,
                Event::EndOfSong => break,
                _ => continue,
            }
        }
        match event {
            Event::EndOfSong => break,
            Event::Beat(b) => partial = PartialNote { beat: Some(b), ..Default::default() },
            Event::Position(p) if partial.beat.is_some() && partial.position.is_none() => {
                partial.position = Some(p);
            }
            Event::Instrument(p) if partial.position.is_some() && partial.program.is_none() => {
                partial.program = Some(p);
            }
            Event::Pitch(p) if partial.program.is_some_and(|p| p != DRUM_PROGRAM) && partial.pitch.is_none() => {
                partial.pitch = Some(p);
            }
            Event::Duration(d) if partial.pitch.is_some() => {
                if let (Some(beat), Some(position), Some(program), Some(pitch)) =
                    (partial.beat, partial.position, partial.program, partial.pitch)
                {
                    notes.push(Note { beat, position, program, pitch, duration: d });
                }
                partial = PartialNote::default();
            }
            Event::DrumPitch(p) if partial.program == Some(DRUM_PROGRAM) => {
                if let (Some(beat), Some(position)) = (partial.beat, partial.position) {
                    notes.push(Note { beat, position, program: DRUM_PROGRAM, pitch: p, duration: 1 });
                }
                partial = PartialNote::default();
            }
            _ => {}
        }
    }
    tags.genres.sort();
    let score = canonicalize(Score::new(notes)).expect("decoded notes are in range");
    (tags, score)
}

struct StrictCursor<'a> {
    tokens: &'a [u32],
    vocab: &'a VocabSpec,
    index: usize,
}

impl StrictCursor<'_> {
    fn peek(&self) -> Option<Result<Event, u32>> {
        self.tokens.get(self.index).map(|&id| self.vocab.event(id).ok_or(id))
    }

    fn violation(&self, expected: &str) -> TokenizerError {
        let found = match self.peek() {
            None => "end of input".to_string(),
            Some(Ok(e)) => e.to_string(),
            Some(Err(id)) => format!("invalid id {id}"),
        };
        TokenizerError::GrammarViolation { index: self.index, expected: expected.to_string(), found }
    }

    fn next_if<T>(&mut self, f: impl FnOnce(&Event) -> Option<T>) -> Option<T> {
        let out = match self.peek() {
            Some(Ok(e)) => f(&e),
            _ => None,
        };
        if out.is_some() {
            self.index += 1;
        }
        out
    }

    fn expect<T>(&mut self, expected: &str, f: impl FnOnce(&Event) -> Option<T>) -> Result<T, TokenizerError> {
        let index = self.index;
        match self.next_if(f) {
            Some(v) => Ok(v),
            None => {
                self.index = index;
                Err(self.violation(expected))
            }
        }
    }

    fn expect_event(&mut self, event: Event) -> Result<(), TokenizerError> {
        let name = event.family();
        self.expect(name, |e| (*e == event).then_some(()))
    }
}

/// Decodes a sequence that must follow the grammar exactly. A sequence may
/// end without end-of-song only at a note-group boundary; after end-of-song
/// only padding is allowed.
pub fn decode_strict(tokens: &TokenSequence, vocab: &VocabSpec) -> Result<(TagSet, Score), TokenizerError> {
    let mut c = StrictCursor { tokens: tokens.ids(), vocab, index: 0 };
    let mut tags = TagSet::default();

    c.expect_event(Event::StartOfSong)?;
    c.expect_event(Event::StartOfGenre)?;
    let first = c.expect("tag_genre", |e| match e {
        Event::TagGenre(g) => Some(*g),
        _ => None,
    })?;
    if let Some(mut prev) = first {
        tags.genres.push(prev);
        while let Some(g) = c.next_if(|e| match e {
            Event::TagGenre(Some(g)) if *g > prev => Some(*g),
            _ => None,
        }) {
            tags.genres.push(g);
            prev = g;
        }
    }

    c.expect_event(Event::StartOfComposer)?;
    let composer = c.expect("tag_composer", |e| match e {
        Event::TagComposer(i) => Some(*i),
        _ => None,
    })?;
    tags.composer = composer.and_then(|i| vocab.composer_name(i)).map(str::to_string);

    c.expect_event(Event::StartOfComplexity)?;
    tags.complexity = c.expect("tag_complexity", |e| match e {
        Event::TagComplexity(x) => Some(*x),
        _ => None,
    })?;

    c.expect_event(Event::StartOfInstrument)?;
    let first = c.expect("tag_instrument", |e| match e {
        Event::TagInstrument(p) => Some(*p),
        _ => None,
    })?;
    if let Some(mut prev) = first {
        tags.instruments.insert(prev);
        while let Some(p) = c.next_if(|e| match e {
            Event::TagInstrument(Some(p)) if *p > prev => Some(*p),
            _ => None,
        }) {
            tags.instruments.insert(p);
            prev = p;
        }
    }
    c.expect_event(Event::StartOfNotes)?;

    let mut notes = Vec::new();
    loop {
        match c.peek() {
            None => break,
            Some(Ok(Event::EndOfSong)) => {
                c.index += 1;
                while c.index < c.tokens.len() {
                    c.expect_event(Event::Pad)?;
                }
                break;
            }
            _ => {}
        }
        let beat = c.expect("beat or end-of-song", |e| match e {
            Event::Beat(b) => Some(*b),
            _ => None,
        })?;
        let position = c.expect("position", |e| match e {
            Event::Position(p) => Some(*p),
            _ => None,
        })?;
        let program = c.expect("instrument", |e| match e {
            Event::Instrument(p) => Some(*p),
            _ => None,
        })?;
        if program == DRUM_PROGRAM {
            let pitch = c.expect("drum_pitch", |e| match e {
                Event::DrumPitch(p) => Some(*p),
                _ => None,
            })?;
            notes.push(Note { beat, position, program, pitch, duration: 1 });
        } else {
            let pitch = c.expect("pitch", |e| match e {
                Event::Pitch(p) => Some(*p),
                _ => None,
            })?;
            let duration = c.expect("duration", |e| match e {
                Event::Duration(d) => Some(*d),
                _ => None,
            })?;
            notes.push(Note { beat, position, program, pitch, duration });
        }
    }
    Ok((tags, canonicalize(Score::new(notes))?))
}

/// Slice of `tokens` strictly between start-of-notes and end-of-song. The
/// whole sequence is returned when no start-of-notes token is present.
pub fn note_region<'a>(tokens: &'a [u32], vocab: &VocabSpec) -> &'a [u32] {
    let son = vocab.id(&Event::StartOfNotes);
    let eos = vocab.id(&Event::EndOfSong);
    let start = tokens.iter().position(|&t| t == son).map_or(0, |i| i + 1);
    let end = tokens[start..].iter().position(|&t| t == eos).map_or(tokens.len(), |i| start + i);
    &tokens[start..end]
}

/// Selects 341 tokens from the start, the middle and the end of a note
/// region. Shorter regions are right-padded with the pad id (0) instead.
/// Output length is always 1023.
pub fn segment_for_tagger(tokens: &[u32]) -> Vec<u32> {
    let n = tokens.len();
    if n <= TAGGER_INPUT_LEN {
        let mut out = tokens.to_vec();
        out.resize(TAGGER_INPUT_LEN, 0);
        return out;
    }
    let half = SEGMENT_LEN / 2;
    let mid = n / 2;
    let mut out = Vec::with_capacity(TAGGER_INPUT_LEN);
    out.extend_from_slice(&tokens[..SEGMENT_LEN]);
    out.extend_from_slice(&tokens[mid - half..mid + half + 1]);
    out.extend_from_slice(&tokens[n - SEGMENT_LEN..]);
    out
}

#[cfg(test)]
mod tests;
