//! JSON score format and JSONL helpers.
//!
//! Score JSON:
//! `{"notes":[{"beat":0,"position":0,"pitch":60,"duration":12,"program":0}],
//!   "time_signatures":[{"start_beat":0,"numerator":4,"denominator":4}],
//!   "metadata":{...}}`. Unknown keys are ignored.

use std::collections::BTreeSet;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{MidiError, ScoreError};
use crate::midi::{parse_midi, MidiImportReport};
use crate::score::{canonicalize, Metadata, Note, Score, TimeSignature, DRUM_PROGRAM, MAX_DURATION};

#[derive(Deserialize)]
struct RawNote {
    beat: i64,
    position: i64,
    pitch: i64,
    duration: i64,
    program: i64,
}

#[derive(Deserialize)]
struct RawTimeSignature {
    start_beat: i64,
    numerator: i64,
    denominator: i64,
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct RawScore {
    notes: Vec<RawNote>,
    time_signatures: Vec<RawTimeSignature>,
    metadata: Metadata,
}

fn checked<T: TryFrom<i64>>(field: &'static str, value: i64) -> Result<T, ScoreError> {
    T::try_from(value).map_err(|_| ScoreError::OutOfRangeField { field, value })
}

/// Imports a JSON score with the same filtering rules as MIDI import:
/// negative pitches and programs outside General MIDI are dropped and
/// counted, durations are clipped to the vocabulary.
pub fn score_from_json(bytes: &[u8]) -> Result<(Score, MidiImportReport), MidiError> {
    let raw: RawScore = serde_json::from_slice(bytes)?;
    let mut report = MidiImportReport::default();
    let mut non_gm: BTreeSet<i64> = BTreeSet::new();
    let mut notes = Vec::with_capacity(raw.notes.len());
    for n in raw.notes {
        if n.pitch < 0 {
            report.notes_dropped_negative_pitch += 1;
            continue;
        }
        if !(0..=DRUM_PROGRAM as i64).contains(&n.program) {
            non_gm.insert(n.program);
            continue;
        }
        let program: u8 = checked("program", n.program)?;
        let mut duration = n.duration.max(1);
        if program != DRUM_PROGRAM && duration > MAX_DURATION as i64 {
            report.notes_clipped_duration += 1;
            duration = MAX_DURATION as i64;
        }
        notes.push(Note::new(
            checked("beat", n.beat)?,
            checked("position", n.position)?,
            checked("pitch", n.pitch)?,
            duration as u32,
            program,
        )?);
    }
    report.tracks_dropped_non_gm = non_gm.len() as u64;
    let time_signatures = raw
        .time_signatures
        .into_iter()
        .map(|t| {
            TimeSignature::new(
                checked("start_beat", t.start_beat)?,
                checked("numerator", t.numerator)?,
                checked("denominator", t.denominator)?,
            )
        })
        .collect::<Result<Vec<_>, _>>()?;
    let score = canonicalize(Score { notes, time_signatures, metadata: raw.metadata })?;
    report.notes_kept = score.notes.len() as u64;
    Ok((score, report))
}

pub fn score_to_json(score: &Score) -> String {
    serde_json::to_string(score).expect("score serializes")
}

#[derive(Debug, thiserror::Error)]
pub enum LoadError {
    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },
    #[error("{path}: {source}")]
    Parse { path: String, source: MidiError },
}

/// Loads a `.mid`/`.midi` or `.json` score file.
pub fn load_score(path: &Path) -> Result<(Score, MidiImportReport), LoadError> {
    let display = path.display().to_string();
    let bytes = fs::read(path).map_err(|source| LoadError::Io { path: display.clone(), source })?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let parsed = if is_json { score_from_json(&bytes) } else { parse_midi(&bytes) };
    parsed.map_err(|source| LoadError::Parse { path: display, source })
}

/// Reads one JSON value per non-empty line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> io::Result<Vec<T>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| {
            io::Error::new(io::ErrorKind::InvalidData, format!("{}:{}: {e}", path.display(), i + 1))
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> io::Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_import_filters() {
        let json = br#"{"notes":[
            {"beat":0,"position":0,"pitch":-3,"duration":12,"program":0},
            {"beat":0,"position":0,"pitch":60,"duration":400,"program":0},
            {"beat":1,"position":0,"pitch":62,"duration":12,"program":200},
            {"beat":1,"position":0,"pitch":36,"duration":12,"program":128}
        ], "extra": true}"#;
        let (score, report) = score_from_json(json).unwrap();
        assert_eq!(report.notes_dropped_negative_pitch, 1);
        assert_eq!(report.notes_clipped_duration, 1);
        assert_eq!(report.tracks_dropped_non_gm, 1);
        assert_eq!(report.notes_kept, 2);
        assert_eq!(score.notes[0].duration, 192);
        assert_eq!(score.notes[1].duration, 1);
    }

    #[test]
    fn json_round_trip() {
        let score = Score::new(vec![Note::new(2, 3, 64, 5, 7).unwrap()]);
        let (back, _) = score_from_json(score_to_json(&score).as_bytes()).unwrap();
        assert_eq!(back, score);
    }

    #[test]
    fn json_out_of_range_position_errors() {
        let json = br#"{"notes":[{"beat":0,"position":13,"pitch":60,"duration":1,"program":0}]}"#;
        assert!(matches!(score_from_json(json), Err(MidiError::Score(_))));
    }
}
