//! Quantized multitrack score: notes on a beat/position grid, time signatures
//! and the metadata attached to a song.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::ScoreError;

/// Sub-beat positions per beat.
pub const RESOLUTION: u32 = 12;
/// Longest representable duration, in positions (16 beats).
pub const MAX_DURATION: u32 = 192;
/// Program number reserved for the drum kit.
pub const DRUM_PROGRAM: u8 = 128;
/// Highest MIDI pitch.
pub const MAX_PITCH: u8 = 127;

/// A single note on the quantized grid.
///
/// Field order matches the canonical sort key, so the derived `Ord` is the
/// canonical order `(beat, position, program, pitch, duration)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Note {
    pub beat: u32,
    pub position: u32,
    pub program: u8,
    pub pitch: u8,
    pub duration: u32,
}

impl Note {
    /// Builds a validated note. Drum notes always carry duration 1.
    pub fn new(
        beat: u32,
        position: u32,
        pitch: u8,
        duration: u32,
        program: u8,
    ) -> Result<Self, ScoreError> {
        let duration = if program == DRUM_PROGRAM { 1 } else { duration };
        let note = Note { beat, position, program, pitch, duration };
        note.validate()?;
        Ok(note)
    }

    pub fn drum(beat: u32, position: u32, key: u8) -> Result<Self, ScoreError> {
        Self::new(beat, position, key, 1, DRUM_PROGRAM)
    }

    #[inline]
    pub fn is_drum(&self) -> bool {
        self.program == DRUM_PROGRAM
    }

    /// Onset in positions from the start of the song.
    #[inline]
    pub fn onset(&self) -> u64 {
        self.beat as u64 * RESOLUTION as u64 + self.position as u64
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.position >= RESOLUTION {
            return Err(ScoreError::out_of_range("position", self.position));
        }
        if self.pitch > MAX_PITCH {
            return Err(ScoreError::out_of_range("pitch", self.pitch));
        }
        if self.program > DRUM_PROGRAM {
            return Err(ScoreError::out_of_range("program", self.program));
        }
        if self.duration == 0 || self.duration > MAX_DURATION {
            return Err(ScoreError::out_of_range("duration", self.duration));
        }
        if self.is_drum() && self.duration != 1 {
            return Err(ScoreError::out_of_range("duration", self.duration));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TimeSignature {
    pub start_beat: u32,
    pub numerator: u32,
    pub denominator: u32,
}

impl TimeSignature {
    pub const COMMON: TimeSignature = TimeSignature { start_beat: 0, numerator: 4, denominator: 4 };

    pub fn new(start_beat: u32, numerator: u32, denominator: u32) -> Result<Self, ScoreError> {
        let ts = TimeSignature { start_beat, numerator, denominator };
        ts.validate()?;
        Ok(ts)
    }

    pub fn validate(&self) -> Result<(), ScoreError> {
        if self.numerator == 0 {
            return Err(ScoreError::out_of_range("numerator", self.numerator));
        }
        if !matches!(self.denominator, 1 | 2 | 4 | 8 | 16 | 32) {
            return Err(ScoreError::out_of_range("denominator", self.denominator));
        }
        Ok(())
    }

    /// Bar length in beats: `numerator * 4 / denominator`, rounded to the
    /// nearest integer (halves round up), never below one.
    pub fn beats_per_bar(&self) -> u32 {
        let scaled = self.numerator as u64 * 4;
        let den = self.denominator as u64;
        let rounded = (2 * scaled + den) / (2 * den);
        rounded.clamp(1, u32::MAX as u64) as u32
    }
}

impl fmt::Display for TimeSignature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.numerator, self.denominator)
    }
}

/// The eight merged genre classes. Variants are declared in lexicographic
/// order of their labels so that `Ord` sorts by label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Genre {
    #[serde(rename = "classical & traditional")]
    ClassicalTraditional,
    #[serde(rename = "electronic & dance")]
    ElectronicDance,
    #[serde(rename = "folk & country")]
    FolkCountry,
    #[serde(rename = "jazz & blues")]
    JazzBlues,
    #[serde(rename = "rock & metal")]
    RockMetal,
    #[serde(rename = "soundtrack & stage")]
    SoundtrackStage,
    #[serde(rename = "urban")]
    Urban,
    #[serde(rename = "world")]
    World,
}

impl Genre {
    pub const ALL: [Genre; 8] = [
        Genre::ClassicalTraditional,
        Genre::ElectronicDance,
        Genre::FolkCountry,
        Genre::JazzBlues,
        Genre::RockMetal,
        Genre::SoundtrackStage,
        Genre::Urban,
        Genre::World,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Genre::ClassicalTraditional => "classical & traditional",
            Genre::ElectronicDance => "electronic & dance",
            Genre::FolkCountry => "folk & country",
            Genre::JazzBlues => "jazz & blues",
            Genre::RockMetal => "rock & metal",
            Genre::SoundtrackStage => "soundtrack & stage",
            Genre::Urban => "urban",
            Genre::World => "world",
        }
    }

    /// Case-insensitive lookup by label.
    pub fn from_label(label: &str) -> Option<Genre> {
        let folded = label.trim().to_lowercase();
        Genre::ALL.into_iter().find(|g| g.label() == folded)
    }

    pub fn index(self) -> usize {
        Genre::ALL.iter().position(|g| *g == self).expect("genre in ALL")
    }
}

impl fmt::Display for Genre {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Complexity {
    Beginner,
    Intermediate,
    Advanced,
}

impl Complexity {
    pub const ALL: [Complexity; 3] =
        [Complexity::Beginner, Complexity::Intermediate, Complexity::Advanced];

    /// Maps the source integer levels `{0, 1, 2}`.
    pub fn from_level(level: i64) -> Option<Complexity> {
        match level {
            0 => Some(Complexity::Beginner),
            1 => Some(Complexity::Intermediate),
            2 => Some(Complexity::Advanced),
            _ => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Complexity::Beginner => "beginner",
            Complexity::Intermediate => "intermediate",
            Complexity::Advanced => "advanced",
        }
    }

    pub fn from_label(label: &str) -> Option<Complexity> {
        let folded = label.trim().to_lowercase();
        Complexity::ALL.into_iter().find(|c| c.label() == folded)
    }
}

impl fmt::Display for Complexity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GenreSource {
    User,
    Tagger,
    #[default]
    Absent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Major,
    Minor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeySignature {
    /// Sharps (positive) or flats (negative), in `[-7, 7]`.
    pub fifths: i8,
    pub mode: Mode,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserStats {
    pub views: u64,
    pub likes: u64,
    pub comments: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum License {
    PublicDomain,
    CreativeCommons,
    #[default]
    Other,
}

/// Normalized song metadata. Missing JSON fields deserialize as absent.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Metadata {
    pub genre_tags: Vec<Genre>,
    pub genre_source: GenreSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub composer: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub complexity: Option<Complexity>,
    pub free_tags: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub key: Option<KeySignature>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tempo_qpm: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub user_stats: Option<UserStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rating: Option<f64>,
    pub license: License,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Score {
    pub notes: Vec<Note>,
    pub time_signatures: Vec<TimeSignature>,
    pub metadata: Metadata,
}

impl Score {
    pub fn new(notes: Vec<Note>) -> Self {
        Score { notes, ..Default::default() }
    }

    pub fn is_empty(&self) -> bool {
        self.notes.is_empty()
    }

    /// Distinct programs used by the notes, ascending.
    pub fn programs(&self) -> BTreeSet<u8> {
        self.notes.iter().map(|n| n.program).collect()
    }

    pub fn last_beat(&self) -> Option<u32> {
        self.notes.iter().map(|n| n.beat).max()
    }

    pub fn is_canonical(&self) -> bool {
        self.notes.windows(2).all(|w| w[0] < w[1])
            && self.notes.iter().all(|n| n.validate().is_ok())
            && self.time_signatures.windows(2).all(|w| w[0].start_beat < w[1].start_beat)
            && self.time_signatures.iter().all(|t| t.validate().is_ok())
    }
}

/// Sorts notes canonically, removes exact duplicates and normalizes the time
/// signature list (sorted, last entry wins on a shared start beat).
pub fn canonicalize(mut score: Score) -> Result<Score, ScoreError> {
    for note in &score.notes {
        note.validate()?;
    }
    for ts in &score.time_signatures {
        ts.validate()?;
    }
    score.notes.sort_unstable();
    score.notes.dedup();

    // stable sort keeps input order among equal start beats
    score.time_signatures.sort_by_key(|t| t.start_beat);
    let mut signatures: Vec<TimeSignature> = Vec::with_capacity(score.time_signatures.len());
    for ts in score.time_signatures.drain(..) {
        match signatures.last_mut() {
            Some(last) if last.start_beat == ts.start_beat => *last = ts,
            _ => signatures.push(ts),
        }
    }
    score.time_signatures = signatures;
    Ok(score)
}

/// A bar as `(start_beat, beat_count)`.
pub type Bar = (u32, u32);

/// Partitions `[0, last_note_beat]` into bars.
///
/// A time signature applies from its start beat; 4/4 holds before the first
/// one. A bar still open when a new time signature starts is cut short there.
pub fn bars_of(score: &Score) -> Vec<Bar> {
    let Some(last_beat) = score.last_beat() else {
        return Vec::new();
    };
    let mut signatures: Vec<TimeSignature> = score.time_signatures.clone();
    signatures.sort_by_key(|t| t.start_beat);

    let mut bars = Vec::new();
    let mut start: u64 = 0;
    let mut next_ts = 0usize;
    let mut current = TimeSignature::COMMON;
    while start <= last_beat as u64 {
        while next_ts < signatures.len() && signatures[next_ts].start_beat as u64 <= start {
            current = signatures[next_ts];
            next_ts += 1;
        }
        let mut len = current.beats_per_bar() as u64;
        if let Some(ts) = signatures.get(next_ts) {
            len = len.min(ts.start_beat as u64 - start);
        }
        bars.push((start as u32, len as u32));
        start += len;
    }
    bars
}
