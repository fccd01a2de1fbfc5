//! Standard MIDI File (format 0/1) reader and writer.
//!
//! Reading quantizes every onset to the nearest of [`RESOLUTION`] positions
//! per beat (ties round down). Notes on channel 10 become drum notes; other
//! notes take the program active on their track and channel when they start.
//! Writing emits one track per program after a conductor track and is the
//! exact inverse of reading for canonical scores.

use std::collections::{BTreeMap, HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use crate::error::MidiError;
use crate::score::{
    canonicalize, KeySignature, Metadata, Mode, Note, Score, TimeSignature, DRUM_PROGRAM,
    MAX_DURATION, RESOLUTION,
};

pub const DEFAULT_TICKS_PER_QUARTER: u32 = 480;
const DRUM_CHANNEL: u8 = 9;
const NOTE_ON_VELOCITY: u8 = 100;
const NOTE_OFF_VELOCITY: u8 = 64;
/// Bank-select MSB values that still address General MIDI sounds (0 = GM,
/// 121 = GM2 melodic).
const GM_BANKS: [u8; 2] = [0, 121];

/// Counters describing what an import kept, dropped or altered.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MidiImportReport {
    pub notes_kept: u64,
    pub notes_dropped_negative_pitch: u64,
    pub notes_clipped_duration: u64,
    pub tracks_dropped_non_gm: u64,
}

/// Rounds `ticks / ticks_per_quarter * per_quarter` to the nearest integer,
/// ties toward zero.
fn quantize(ticks: u64, ticks_per_quarter: u64, per_quarter: u64) -> u128 {
    let num = ticks as u128 * per_quarter as u128;
    let den = ticks_per_quarter as u128;
    let (q, r) = (num / den, num % den);
    if 2 * r > den {
        q + 1
    } else {
        q
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Reader { bytes, pos: 0 }
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MidiError> {
        if self.remaining() < n {
            return Err(MidiError::malformed(self.pos, format!("need {n} bytes, {} left", self.remaining())));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u8(&mut self) -> Result<u8, MidiError> {
        Ok(self.take(1)?[0])
    }

    fn peek(&self) -> Result<u8, MidiError> {
        self.bytes
            .get(self.pos)
            .copied()
            .ok_or_else(|| MidiError::malformed(self.pos, "unexpected end of data"))
    }

    fn u32(&mut self) -> Result<u32, MidiError> {
        let b = self.take(4)?;
        Ok(u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn vlq(&mut self) -> Result<u32, MidiError> {
        let start = self.pos;
        let mut value: u32 = 0;
        for _ in 0..4 {
            let b = self.u8()?;
            value = (value << 7) | (b & 0x7F) as u32;
            if b & 0x80 == 0 {
                return Ok(value);
            }
        }
        Err(MidiError::malformed(start, "variable-length quantity longer than 4 bytes"))
    }

    fn data_byte(&mut self) -> Result<u8, MidiError> {
        let at = self.pos;
        let b = self.u8()?;
        if b & 0x80 != 0 {
            return Err(MidiError::malformed(at, format!("expected data byte, found {b:#04x}")));
        }
        Ok(b)
    }
}

struct RawNote {
    start: u64,
    end: u64,
    pitch: u8,
    program: u8,
    channel: u8,
    gm_bank: bool,
}

#[derive(Default)]
struct TrackEvents {
    notes: Vec<RawNote>,
    time_signatures: Vec<(u64, u32, u32)>,
    tempo: Option<(u64, u32)>,
    key: Option<(u64, KeySignature)>,
}

struct OpenNote {
    start: u64,
    program: u8,
    gm_bank: bool,
}

fn parse_track(data: &[u8], base: usize) -> Result<TrackEvents, MidiError> {
    let mut r = Reader::new(data);
    let mut out = TrackEvents::default();
    let mut tick: u64 = 0;
    let mut running: Option<u8> = None;
    let mut programs = [0u8; 16];
    let mut banks = [0u8; 16];
    let mut open: HashMap<(u8, u8), VecDeque<OpenNote>> = HashMap::new();
    let err_at = |e: MidiError| match e {
        MidiError::MalformedMidi { offset, reason } => MidiError::malformed(base + offset, reason),
        other => other,
    };

    while r.remaining() > 0 {
        tick += r.vlq().map_err(err_at)? as u64;
        let at = r.pos;
        let first = r.peek().map_err(err_at)?;
        let status = if first & 0x80 != 0 {
            r.pos += 1;
            first
        } else {
            running.ok_or_else(|| MidiError::malformed(base + at, "data byte without running status"))?
        };
        match status {
            0xFF => {
                running = None;
                let kind = r.u8().map_err(err_at)?;
                let len = r.vlq().map_err(err_at)? as usize;
                let body = r.take(len).map_err(err_at)?;
                match kind {
                    0x2F => break,
                    0x51 if len == 3 => {
                        let mpq = u32::from_be_bytes([0, body[0], body[1], body[2]]);
                        if mpq > 0 && out.tempo.is_none() {
                            out.tempo = Some((tick, mpq));
                        }
                    }
                    0x58 if len >= 2 => {
                        let (num, pow) = (body[0] as u32, body[1] as u32);
                        if num >= 1 && pow <= 5 {
                            out.time_signatures.push((tick, num, 1 << pow));
                        }
                    }
                    0x59 if len == 2 => {
                        let fifths = body[0] as i8;
                        let mode = match body[1] {
                            0 => Some(Mode::Major),
                            1 => Some(Mode::Minor),
                            _ => None,
                        };
                        if let (Some(mode), true) = (mode, (-7..=7).contains(&fifths)) {
                            if out.key.is_none() {
                                out.key = Some((tick, KeySignature { fifths, mode }));
                            }
                        }
                    }
                    _ => {}
                }
            }
            0xF0 | 0xF7 => {
                running = None;
                let len = r.vlq().map_err(err_at)? as usize;
                r.take(len).map_err(err_at)?;
            }
            0x80..=0xEF => {
                running = Some(status);
                let channel = status & 0x0F;
                match status & 0xF0 {
                    0x80 | 0x90 => {
                        let pitch = r.data_byte().map_err(err_at)?;
                        let velocity = r.data_byte().map_err(err_at)?;
                        let queue = open.entry((channel, pitch)).or_default();
                        if status & 0xF0 == 0x90 && velocity > 0 {
                            let program =
                                if channel == DRUM_CHANNEL { DRUM_PROGRAM } else { programs[channel as usize] };
                            let gm_bank =
                                channel == DRUM_CHANNEL || GM_BANKS.contains(&banks[channel as usize]);
                            queue.push_back(OpenNote { start: tick, program, gm_bank });
                        } else if let Some(note) = queue.pop_front() {
                            out.notes.push(RawNote {
                                start: note.start,
                                end: tick,
                                pitch,
                                program: note.program,
                                channel,
                                gm_bank: note.gm_bank,
                            });
                        }
                    }
                    0xB0 => {
                        let controller = r.data_byte().map_err(err_at)?;
                        let value = r.data_byte().map_err(err_at)?;
                        if controller == 0 {
                            banks[channel as usize] = value;
                        }
                    }
                    0xC0 => programs[channel as usize] = r.data_byte().map_err(err_at)?,
                    0xD0 => {
                        r.data_byte().map_err(err_at)?;
                    }
                    _ => {
                        r.data_byte().map_err(err_at)?;
                        r.data_byte().map_err(err_at)?;
                    }
                }
            }
            other => {
                return Err(MidiError::malformed(base + at, format!("unexpected status byte {other:#04x}")));
            }
        }
    }

    // Notes still sounding at the end of the track close there.
    let mut dangling: Vec<_> = open.into_iter().collect();
    dangling.sort_by_key(|((ch, p), _)| (*ch, *p));
    for ((channel, pitch), queue) in dangling {
        for note in queue {
            out.notes.push(RawNote {
                start: note.start,
                end: tick,
                pitch,
                program: note.program,
                channel,
                gm_bank: note.gm_bank,
            });
        }
    }
    Ok(out)
}

/// Parses an SMF byte buffer into a canonical [`Score`].
pub fn parse_midi(bytes: &[u8]) -> Result<(Score, MidiImportReport), MidiError> {
    let mut r = Reader::new(bytes);
    if r.take(4)? != b"MThd" {
        return Err(MidiError::malformed(0, "missing MThd header"));
    }
    let header_len = r.u32()? as usize;
    if header_len < 6 {
        return Err(MidiError::malformed(4, format!("header length {header_len} < 6")));
    }
    let header = r.take(header_len)?;
    let format = u16::from_be_bytes([header[0], header[1]]);
    let n_tracks = u16::from_be_bytes([header[2], header[3]]);
    let division = u16::from_be_bytes([header[4], header[5]]);
    if format > 1 {
        return Err(MidiError::UnsupportedFormat(format));
    }
    if division & 0x8000 != 0 {
        return Err(MidiError::malformed(12, "SMPTE time division is not supported"));
    }
    if division == 0 {
        return Err(MidiError::malformed(12, "zero ticks per quarter"));
    }
    let tpq = division as u64;

    let mut tracks = Vec::with_capacity(n_tracks as usize);
    while tracks.len() < n_tracks as usize {
        let chunk_at = r.pos;
        let kind = r.take(4)?;
        let len = r.u32()? as usize;
        let body_at = r.pos;
        let body = r.take(len).map_err(|_| {
            MidiError::malformed(chunk_at, format!("chunk length {len} exceeds file size"))
        })?;
        if kind == b"MTrk" {
            tracks.push(parse_track(body, body_at)?);
        }
    }

    let mut report = MidiImportReport::default();
    let mut notes = Vec::new();
    let mut time_signatures = Vec::new();
    let mut metadata = Metadata::default();
    let mut tempo: Option<(u64, u32)> = None;
    let mut key: Option<(u64, KeySignature)> = None;

    for track in tracks {
        if let Some(t) = track.tempo {
            if tempo.is_none_or(|cur| t.0 < cur.0) {
                tempo = Some(t);
            }
        }
        if let Some(k) = track.key {
            if key.is_none_or(|cur| k.0 < cur.0) {
                key = Some(k);
            }
        }
        for (tick, num, den) in track.time_signatures {
            let beat = quantize(tick, tpq, 1);
            let beat = u32::try_from(beat)
                .map_err(|_| MidiError::malformed(0, "time signature beyond representable range"))?;
            time_signatures.push(TimeSignature { start_beat: beat, numerator: num, denominator: den });
        }

        let mut non_gm_channels: Vec<u8> =
            track.notes.iter().filter(|n| !n.gm_bank).map(|n| n.channel).collect();
        non_gm_channels.sort_unstable();
        non_gm_channels.dedup();
        report.tracks_dropped_non_gm += non_gm_channels.len() as u64;

        for raw in track.notes {
            if non_gm_channels.contains(&raw.channel) {
                continue;
            }
            let start = quantize(raw.start, tpq, RESOLUTION as u64);
            let end = quantize(raw.end, tpq, RESOLUTION as u64);
            let beat = u32::try_from(start / RESOLUTION as u128)
                .map_err(|_| MidiError::malformed(0, "note onset beyond representable range"))?;
            let position = (start % RESOLUTION as u128) as u32;
            let duration = if raw.program == DRUM_PROGRAM {
                1
            } else {
                let d = end.saturating_sub(start).max(1);
                if d > MAX_DURATION as u128 {
                    report.notes_clipped_duration += 1;
                    MAX_DURATION
                } else {
                    d as u32
                }
            };
            notes.push(Note { beat, position, program: raw.program, pitch: raw.pitch, duration });
        }
    }

    if let Some((_, mpq)) = tempo {
        metadata.tempo_qpm = Some(60_000_000.0 / mpq as f64);
    }
    metadata.key = key.map(|(_, k)| k);

    let score = canonicalize(Score { notes, time_signatures, metadata })?;
    report.notes_kept = score.notes.len() as u64;
    Ok((score, report))
}

fn push_vlq(out: &mut Vec<u8>, mut value: u32) {
    let mut buf = [0u8; 4];
    let mut i = 3;
    buf[i] = (value & 0x7F) as u8;
    value >>= 7;
    while value > 0 {
        i -= 1;
        buf[i] = ((value & 0x7F) as u8) | 0x80;
        value >>= 7;
    }
    out.extend_from_slice(&buf[i..]);
}

/// Timed events for one track; `order` puts note-offs before note-ons on a
/// shared tick.
struct TimedEvent {
    tick: u64,
    order: u8,
    bytes: Vec<u8>,
}

fn encode_track(mut events: Vec<TimedEvent>) -> Result<Vec<u8>, MidiError> {
    events.sort_by_key(|e| (e.tick, e.order));
    let mut body = Vec::new();
    let mut last = 0u64;
    for e in &events {
        let delta = u32::try_from(e.tick - last)
            .ok()
            .filter(|d| *d <= 0x0FFF_FFFF)
            .ok_or_else(|| MidiError::malformed(0, "delta time exceeds SMF range"))?;
        push_vlq(&mut body, delta);
        body.extend_from_slice(&e.bytes);
        last = e.tick;
    }
    body.extend_from_slice(&[0x00, 0xFF, 0x2F, 0x00]);
    let mut chunk = Vec::with_capacity(body.len() + 8);
    chunk.extend_from_slice(b"MTrk");
    chunk.extend_from_slice(&(body.len() as u32).to_be_bytes());
    chunk.extend_from_slice(&body);
    Ok(chunk)
}

const MELODIC_CHANNELS: [u8; 15] = [0, 1, 2, 3, 4, 5, 6, 7, 8, 10, 11, 12, 13, 14, 15];

/// Assigns each note of one program to a channel so that first-in first-out
/// note-off pairing on every (channel, pitch) reproduces the note exactly.
fn assign_channels(notes: &[Note]) -> Vec<u8> {
    if notes.first().is_some_and(|n| n.is_drum()) {
        return vec![DRUM_CHANNEL; notes.len()];
    }
    // per allocated channel: pitch -> end of the last note assigned there
    let mut last_end: Vec<HashMap<u8, u64>> = Vec::new();
    notes
        .iter()
        .map(|n| {
            let end = n.onset() + n.duration as u64;
            let slot = last_end
                .iter()
                .position(|m| m.get(&n.pitch).is_none_or(|&e| e <= end))
                .or_else(|| {
                    (last_end.len() < MELODIC_CHANNELS.len()).then(|| {
                        last_end.push(HashMap::new());
                        last_end.len() - 1
                    })
                })
                .unwrap_or(0);
            last_end[slot].insert(n.pitch, end);
            MELODIC_CHANNELS[slot]
        })
        .collect()
}

/// Renders a score as an SMF format 1 byte buffer.
pub fn write_midi(score: &Score, ticks_per_quarter: u32) -> Result<Vec<u8>, MidiError> {
    if ticks_per_quarter == 0 || !ticks_per_quarter.is_multiple_of(RESOLUTION) || ticks_per_quarter > 0x7FFF {
        return Err(MidiError::InvalidResolution(ticks_per_quarter));
    }
    let score = canonicalize(score.clone())?;
    let ticks_per_slot = (ticks_per_quarter / RESOLUTION) as u64;
    let tpq = ticks_per_quarter as u64;

    let mut by_program: BTreeMap<u8, Vec<Note>> = BTreeMap::new();
    for n in &score.notes {
        by_program.entry(n.program).or_default().push(*n);
    }

    let mut out = Vec::new();
    out.extend_from_slice(b"MThd");
    out.extend_from_slice(&6u32.to_be_bytes());
    out.extend_from_slice(&1u16.to_be_bytes());
    out.extend_from_slice(&(1 + by_program.len() as u16).to_be_bytes());
    out.extend_from_slice(&(ticks_per_quarter as u16).to_be_bytes());

    let mut conductor = Vec::new();
    if let Some(qpm) = score.metadata.tempo_qpm.filter(|q| q.is_finite() && *q > 0.0) {
        let mpq = (60_000_000.0 / qpm).round().clamp(1.0, 0xFF_FFFF as f64) as u32;
        let b = mpq.to_be_bytes();
        conductor.push(TimedEvent { tick: 0, order: 0, bytes: vec![0xFF, 0x51, 0x03, b[1], b[2], b[3]] });
    }
    if let Some(key) = score.metadata.key {
        let mode = matches!(key.mode, Mode::Minor) as u8;
        conductor.push(TimedEvent { tick: 0, order: 1, bytes: vec![0xFF, 0x59, 0x02, key.fifths as u8, mode] });
    }
    for ts in &score.time_signatures {
        let pow = ts.denominator.trailing_zeros() as u8;
        let num = u8::try_from(ts.numerator)
            .map_err(|_| MidiError::malformed(0, format!("numerator {} exceeds SMF range", ts.numerator)))?;
        conductor.push(TimedEvent {
            tick: ts.start_beat as u64 * tpq,
            order: 2,
            bytes: vec![0xFF, 0x58, 0x04, num, pow, 24, 8],
        });
    }
    out.extend(encode_track(conductor)?);

    for (program, notes) in &by_program {
        let channels = assign_channels(notes);
        let mut events = Vec::with_capacity(notes.len() * 2 + 16);
        if *program != DRUM_PROGRAM {
            let mut used = channels.clone();
            used.sort_unstable();
            used.dedup();
            for ch in used {
                events.push(TimedEvent { tick: 0, order: 0, bytes: vec![0xC0 | ch, *program] });
            }
        }
        for (note, ch) in notes.iter().zip(channels) {
            let start = note.onset() * ticks_per_slot;
            let end = start + note.duration as u64 * ticks_per_slot;
            events.push(TimedEvent { tick: start, order: 2, bytes: vec![0x90 | ch, note.pitch, NOTE_ON_VELOCITY] });
            events.push(TimedEvent { tick: end, order: 1, bytes: vec![0x80 | ch, note.pitch, NOTE_OFF_VELOCITY] });
        }
        out.extend(encode_track(events)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn header(format: u16, tracks: u16, tpq: u16) -> Vec<u8> {
        let mut v = b"MThd".to_vec();
        v.extend_from_slice(&6u32.to_be_bytes());
        v.extend_from_slice(&format.to_be_bytes());
        v.extend_from_slice(&tracks.to_be_bytes());
        v.extend_from_slice(&tpq.to_be_bytes());
        v
    }

    fn track(body: &[u8]) -> Vec<u8> {
        let mut v = b"MTrk".to_vec();
        v.extend_from_slice(&(body.len() as u32).to_be_bytes());
        v.extend_from_slice(body);
        v
    }

    #[test]
    fn quantize_ties_round_down() {
        assert_eq!(quantize(20, 480, 12), 0);
        assert_eq!(quantize(21, 480, 12), 1);
        assert_eq!(quantize(60, 480, 12), 1);
        assert_eq!(quantize(61, 480, 12), 2);
    }

    #[test]
    fn single_note_one_beat() {
        let mut bytes = header(0, 1, 480);
        // delta 0 note-on, delta 480 (0x83 0x60) note-off
        bytes.extend(track(&[0x00, 0x90, 60, 100, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xFF, 0x2F, 0x00]));
        let (score, report) = parse_midi(&bytes).unwrap();
        assert_eq!(score.notes, vec![Note::new(0, 0, 60, 12, 0).unwrap()]);
        assert_eq!(report.notes_kept, 1);
    }

    #[test]
    fn onset_tie_rounds_down() {
        let mut bytes = header(0, 1, 480);
        bytes.extend(track(&[0x14, 0x90, 60, 100, 0x83, 0x60, 0x80, 60, 0, 0x00, 0xFF, 0x2F, 0x00]));
        let (score, _) = parse_midi(&bytes).unwrap();
        assert_eq!(score.notes[0].position, 0);
        assert_eq!(score.notes[0].beat, 0);
    }

    #[test]
    fn header_only_is_empty() {
        let (score, report) = parse_midi(&header(1, 0, 480)).unwrap();
        assert!(score.notes.is_empty());
        assert_eq!(report, MidiImportReport::default());
    }

    #[test]
    fn format_two_is_rejected() {
        assert!(matches!(parse_midi(&header(2, 0, 480)), Err(MidiError::UnsupportedFormat(2))));
    }

    #[test]
    fn truncated_file_is_malformed() {
        let mut bytes = header(0, 1, 480);
        bytes.extend(b"MTrk\x00\x00\x00\x10\x00\x90");
        assert!(matches!(parse_midi(&bytes), Err(MidiError::MalformedMidi { .. })));
        assert!(matches!(parse_midi(b"RIFF"), Err(MidiError::MalformedMidi { .. })));
    }

    #[test]
    fn channel_ten_is_drums_and_running_status() {
        let mut bytes = header(0, 1, 480);
        // running status: second note-on reuses 0x99, note-offs via velocity 0
        bytes.extend(track(&[
            0x00, 0x99, 36, 100, 0x00, 38, 100, 0x78, 36, 0, 0x00, 38, 0, 0x00, 0xFF, 0x2F, 0x00,
        ]));
        let (score, _) = parse_midi(&bytes).unwrap();
        assert_eq!(score.notes, vec![Note::drum(0, 0, 36).unwrap(), Note::drum(0, 0, 38).unwrap()]);
    }

    #[test]
    fn overlapping_same_pitch_closes_fifo() {
        let mut bytes = header(0, 1, 12);
        // on@0, on@2, off@4 closes the first, off@10 closes the second
        bytes.extend(track(&[
            0x00, 0x90, 60, 100, 0x02, 0x90, 60, 100, 0x02, 0x80, 60, 0, 0x06, 0x80, 60, 0, 0x00, 0xFF,
            0x2F, 0x00,
        ]));
        let (score, _) = parse_midi(&bytes).unwrap();
        assert_eq!(
            score.notes,
            vec![Note::new(0, 0, 60, 4, 0).unwrap(), Note::new(0, 2, 60, 8, 0).unwrap()]
        );
    }

    #[test]
    fn zero_length_and_long_notes() {
        let mut bytes = header(0, 1, 12);
        // program 5; zero-length note then a 200-slot note
        bytes.extend(track(&[
            0x00, 0xC0, 5, 0x00, 0x90, 60, 100, 0x00, 0x80, 60, 0, 0x00, 0x90, 62, 100, 0x81, 0x48, 0x80,
            62, 0, 0x00, 0xFF, 0x2F, 0x00,
        ]));
        let (score, report) = parse_midi(&bytes).unwrap();
        assert_eq!(score.notes[0], Note::new(0, 0, 60, 1, 5).unwrap());
        assert_eq!(score.notes[1], Note::new(0, 0, 62, 192, 5).unwrap());
        assert_eq!(report.notes_clipped_duration, 1);
    }

    #[test]
    fn non_gm_bank_drops_channel() {
        let mut bytes = header(0, 1, 12);
        bytes.extend(track(&[
            0x00, 0xB0, 0, 5, 0x00, 0x90, 60, 100, 0x0C, 0x80, 60, 0, 0x00, 0x91, 64, 100, 0x0C, 0x81, 64,
            0, 0x00, 0xFF, 0x2F, 0x00,
        ]));
        let (score, report) = parse_midi(&bytes).unwrap();
        assert_eq!(report.tracks_dropped_non_gm, 1);
        assert_eq!(score.notes.len(), 1);
        assert_eq!(score.notes[0].pitch, 64);
    }

    #[test]
    fn empty_score_writes_header_and_end_of_track() {
        let bytes = write_midi(&Score::default(), 480).unwrap();
        let mut expected = header(1, 1, 480);
        expected.extend(track(&[0x00, 0xFF, 0x2F, 0x00]));
        assert_eq!(bytes, expected);
        let (score, _) = parse_midi(&bytes).unwrap();
        assert_eq!(score, Score::default());
    }

    #[test]
    fn invalid_resolution() {
        assert!(matches!(write_midi(&Score::default(), 100), Err(MidiError::InvalidResolution(100))));
        assert!(matches!(write_midi(&Score::default(), 0), Err(MidiError::InvalidResolution(0))));
    }

    #[test]
    fn one_note_round_trip() {
        let score = Score::new(vec![Note::new(3, 5, 67, 7, 24).unwrap()]);
        let (back, _) = parse_midi(&write_midi(&score, 480).unwrap()).unwrap();
        assert_eq!(back, score);
    }

    #[test]
    fn drum_track_goes_to_channel_ten() {
        let score = Score::new(vec![Note::new(0, 0, 60, 12, 0).unwrap(), Note::drum(0, 0, 36).unwrap()]);
        let bytes = write_midi(&score, 480).unwrap();
        assert_eq!(u16::from_be_bytes([bytes[10], bytes[11]]), 3);
        // walk the chunks and collect note-on status bytes per track
        let mut pos = 14;
        let mut statuses = Vec::new();
        while pos < bytes.len() {
            let len = u32::from_be_bytes(bytes[pos + 4..pos + 8].try_into().unwrap()) as usize;
            let body = &bytes[pos + 8..pos + 8 + len];
            statuses.push(body.iter().copied().filter(|b| b & 0xF0 == 0x90).collect::<Vec<_>>());
            pos += 8 + len;
        }
        assert_eq!(statuses, vec![vec![], vec![0x90], vec![0x99]]);
    }

    #[test]
    fn metadata_tempo_and_key_round_trip() {
        let mut score = Score::new(vec![Note::new(0, 0, 60, 12, 0).unwrap()]);
        score.metadata.tempo_qpm = Some(100.0);
        score.metadata.key = Some(KeySignature { fifths: -3, mode: Mode::Minor });
        score.time_signatures = vec![TimeSignature::new(0, 3, 4).unwrap(), TimeSignature::new(6, 7, 8).unwrap()];
        let (back, _) = parse_midi(&write_midi(&score, 480).unwrap()).unwrap();
        assert_eq!(back, score);
    }

    #[test]
    fn overlapping_same_pitch_round_trips() {
        let score = canonicalize(Score::new(vec![
            Note::new(0, 0, 60, 24, 0).unwrap(),
            Note::new(1, 0, 60, 6, 0).unwrap(),
            Note::new(1, 0, 60, 3, 0).unwrap(),
        ]))
        .unwrap();
        let (back, _) = parse_midi(&write_midi(&score, 480).unwrap()).unwrap();
        assert_eq!(back, score);
    }
}
