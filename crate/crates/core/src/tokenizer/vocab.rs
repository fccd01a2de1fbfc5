//! Bijection between symbolic events and integer token ids.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::TokenizerError;
use crate::score::{Complexity, Genre, DRUM_PROGRAM, MAX_DURATION, RESOLUTION};

pub const VOCAB_VERSION: &str = "mst-1";
pub const MAX_BEATS: u32 = 1024;
pub const N_PROGRAMS: u32 = DRUM_PROGRAM as u32 + 1;
pub const N_PITCHES: u32 = 128;

/// Composers kept in the default tag vocabulary.
pub const DEFAULT_COMPOSERS: [&str; 47] = [
    "johann sebastian bach",
    "wolfgang amadeus mozart",
    "ludwig van beethoven",
    "frederic chopin",
    "franz schubert",
    "robert schumann",
    "johannes brahms",
    "pyotr ilyich tchaikovsky",
    "antonio vivaldi",
    "george frideric handel",
    "joseph haydn",
    "claude debussy",
    "maurice ravel",
    "erik satie",
    "franz liszt",
    "felix mendelssohn",
    "sergei rachmaninoff",
    "edvard grieg",
    "antonin dvorak",
    "giuseppe verdi",
    "giacomo puccini",
    "scott joplin",
    "george gershwin",
    "johann pachelbel",
    "gustav holst",
    "camille saint-saens",
    "gabriel faure",
    "modest mussorgsky",
    "nikolai rimsky-korsakov",
    "sergei prokofiev",
    "dmitri shostakovich",
    "igor stravinsky",
    "richard wagner",
    "gustav mahler",
    "john williams",
    "hans zimmer",
    "joe hisaishi",
    "koji kondo",
    "nobuo uematsu",
    "yiruma",
    "ludovico einaudi",
    "howard shore",
    "ennio morricone",
    "toby fox",
    "alan menken",
    "danny elfman",
    "ramin djawadi",
];

/// One symbolic event of the representation.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Event {
    Pad,
    StartOfSong,
    StartOfGenre,
    /// `None` is the missing-tag placeholder.
    TagGenre(Option<Genre>),
    StartOfComposer,
    TagComposer(Option<usize>),
    StartOfComplexity,
    TagComplexity(Option<Complexity>),
    StartOfInstrument,
    TagInstrument(Option<u8>),
    StartOfNotes,
    EndOfSong,
    Beat(u32),
    Position(u32),
    Instrument(u8),
    Pitch(u8),
    /// Duration in positions, `1..=192`.
    Duration(u32),
    DrumPitch(u8),
}

impl Event {
    /// Family name used in grammar diagnostics.
    pub fn family(&self) -> &'static str {
        match self {
            Event::Pad => "pad",
            Event::StartOfSong => "start-of-song",
            Event::StartOfGenre => "start-of-genre",
            Event::TagGenre(_) => "tag_genre",
            Event::StartOfComposer => "start-of-composer",
            Event::TagComposer(_) => "tag_composer",
            Event::StartOfComplexity => "start-of-complexity",
            Event::TagComplexity(_) => "tag_complexity",
            Event::StartOfInstrument => "start-of-instrument",
            Event::TagInstrument(_) => "tag_instrument",
            Event::StartOfNotes => "start-of-notes",
            Event::EndOfSong => "end-of-song",
            Event::Beat(_) => "beat",
            Event::Position(_) => "position",
            Event::Instrument(_) => "instrument",
            Event::Pitch(_) => "pitch",
            Event::Duration(_) => "duration",
            Event::DrumPitch(_) => "drum_pitch",
        }
    }
}

impl fmt::Display for Event {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let family = self.family();
        match self {
            Event::TagGenre(None)
            | Event::TagComposer(None)
            | Event::TagComplexity(None)
            | Event::TagInstrument(None) => write!(f, "{family}_None"),
            Event::TagGenre(Some(g)) => write!(f, "{family}_{g}"),
            Event::TagComposer(Some(i)) => write!(f, "{family}_{i}"),
            Event::TagComplexity(Some(c)) => write!(f, "{family}_{c}"),
            Event::TagInstrument(Some(v))
            | Event::Instrument(v)
            | Event::Pitch(v)
            | Event::DrumPitch(v) => write!(f, "{family}_{v}"),
            Event::Beat(v) | Event::Position(v) | Event::Duration(v) => write!(f, "{family}_{v}"),
            _ => f.write_str(family),
        }
    }
}

/// Contiguous id range `[start, start + len)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdRange {
    pub start: u32,
    pub len: u32,
}

impl IdRange {
    fn offset_of(&self, id: u32) -> Option<u32> {
        (id >= self.start && id < self.start + self.len).then(|| id - self.start)
    }

    pub fn end(&self) -> u32 {
        self.start + self.len
    }
}

/// Id ranges of every event family, in layout order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub pad: u32,
    pub start_of_song: u32,
    pub start_of_genre: u32,
    /// Genres followed by the None placeholder.
    pub tag_genre: IdRange,
    pub start_of_composer: u32,
    pub tag_composer: IdRange,
    pub start_of_complexity: u32,
    pub tag_complexity: IdRange,
    pub start_of_instrument: u32,
    pub tag_instrument: IdRange,
    pub start_of_notes: u32,
    pub end_of_song: u32,
    pub beat: IdRange,
    pub position: IdRange,
    pub instrument: IdRange,
    pub pitch: IdRange,
    pub duration: IdRange,
    pub drum_pitch: IdRange,
    pub size: u32,
}

impl Layout {
    fn new(n_genres: u32, n_composers: u32, n_complexities: u32) -> Layout {
        let mut next = 0u32;
        let mut range = |len: u32| {
            let r = IdRange { start: next, len };
            next += len;
            r
        };
        let pad = range(1).start;
        let start_of_song = range(1).start;
        let start_of_genre = range(1).start;
        let tag_genre = range(n_genres + 1);
        let start_of_composer = range(1).start;
        let tag_composer = range(n_composers + 1);
        let start_of_complexity = range(1).start;
        let tag_complexity = range(n_complexities + 1);
        let start_of_instrument = range(1).start;
        let tag_instrument = range(N_PROGRAMS + 1);
        let start_of_notes = range(1).start;
        let end_of_song = range(1).start;
        let beat = range(MAX_BEATS);
        let position = range(RESOLUTION);
        let instrument = range(N_PROGRAMS);
        let pitch = range(N_PITCHES);
        let duration = range(MAX_DURATION);
        let drum_pitch = range(N_PITCHES);
        Layout {
            pad,
            start_of_song,
            start_of_genre,
            tag_genre,
            start_of_composer,
            tag_composer,
            start_of_complexity,
            tag_complexity,
            start_of_instrument,
            tag_instrument,
            start_of_notes,
            end_of_song,
            beat,
            position,
            instrument,
            pitch,
            duration,
            drum_pitch,
            size: next,
        }
    }
}

/// Label lists the vocabulary is built from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabConfig {
    pub genres: Vec<String>,
    pub composers: Vec<String>,
    pub complexities: Vec<String>,
}

impl Default for VocabConfig {
    fn default() -> Self {
        VocabConfig {
            genres: Genre::ALL.iter().map(|g| g.label().to_string()).collect(),
            composers: DEFAULT_COMPOSERS.iter().map(|c| c.to_string()).collect(),
            complexities: Complexity::ALL.iter().map(|c| c.label().to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabSpec {
    version: String,
    genres: Vec<Genre>,
    composers: Vec<String>,
    complexities: Vec<Complexity>,
    layout: Layout,
    hash: String,
}

fn check_unique(labels: &[String]) -> Result<(), TokenizerError> {
    let mut seen = HashSet::new();
    for l in labels {
        if !seen.insert(l.as_str()) {
            return Err(TokenizerError::DuplicateLabel(l.clone()));
        }
    }
    Ok(())
}

/// Builds the default vocabulary (1812 ids).
pub fn build_vocab() -> VocabSpec {
    VocabSpec::from_config(&VocabConfig::default()).expect("default vocabulary is valid")
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    version: String,
    hash: String,
    vocab_size: u32,
    genres: Vec<String>,
    composers: Vec<String>,
    complexities: Vec<String>,
    layout: Layout,
}

impl VocabSpec {
    pub fn from_config(config: &VocabConfig) -> Result<VocabSpec, TokenizerError> {
        check_unique(&config.genres)?;
        check_unique(&config.composers)?;
        check_unique(&config.complexities)?;
        let genres = config
            .genres
            .iter()
            .map(|l| Genre::from_label(l).ok_or_else(|| TokenizerError::UnknownLabel(l.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        let complexities = config
            .complexities
            .iter()
            .map(|l| Complexity::from_label(l).ok_or_else(|| TokenizerError::UnknownLabel(l.clone())))
            .collect::<Result<Vec<_>, _>>()?;
        // labels that differ only by case collapse onto the same class
        check_unique(&genres.iter().map(|g| g.label().to_string()).collect::<Vec<_>>())?;
        check_unique(&complexities.iter().map(|c| c.label().to_string()).collect::<Vec<_>>())?;
        let layout = Layout::new(genres.len() as u32, config.composers.len() as u32, complexities.len() as u32);
        let mut spec = VocabSpec {
            version: VOCAB_VERSION.to_string(),
            genres,
            composers: config.composers.clone(),
            complexities,
            layout,
            hash: String::new(),
        };
        spec.hash = spec.content_hash();
        Ok(spec)
    }

    fn content_hash(&self) -> String {
        let content = serde_json::json!({
            "version": self.version,
            "genres": self.genres,
            "composers": self.composers,
            "complexities": self.complexities,
            "layout": self.layout,
        });
        let digest = Sha256::digest(content.to_string().as_bytes());
        hex::encode(digest)
    }

    pub fn size(&self) -> usize {
        self.layout.size as usize
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn hash(&self) -> &str {
        &self.hash
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn genres(&self) -> &[Genre] {
        &self.genres
    }

    pub fn composers(&self) -> &[String] {
        &self.composers
    }

    pub fn complexities(&self) -> &[Complexity] {
        &self.complexities
    }

    pub fn composer_index(&self, name: &str) -> Option<usize> {
        self.composers.iter().position(|c| c == name)
    }

    pub fn composer_name(&self, index: usize) -> Option<&str> {
        self.composers.get(index).map(String::as_str)
    }

    /// Id of an event. Panics on events outside the vocabulary; use
    /// [`VocabSpec::try_id`] for unchecked input.
    pub fn id(&self, event: &Event) -> u32 {
        self.try_id(event).unwrap_or_else(|| panic!("event {event} not in vocabulary"))
    }

    pub fn try_id(&self, event: &Event) -> Option<u32> {
        let l = &self.layout;
        let within = |r: &IdRange, off: u32| (off < r.len).then(|| r.start + off);
        match event {
            Event::Pad => Some(l.pad),
            Event::StartOfSong => Some(l.start_of_song),
            Event::StartOfGenre => Some(l.start_of_genre),
            Event::TagGenre(g) => match g {
                Some(g) => self.genres.iter().position(|x| x == g).map(|i| l.tag_genre.start + i as u32),
                None => Some(l.tag_genre.end() - 1),
            },
            Event::StartOfComposer => Some(l.start_of_composer),
            Event::TagComposer(c) => match c {
                Some(i) if *i < self.composers.len() => Some(l.tag_composer.start + *i as u32),
                Some(_) => None,
                None => Some(l.tag_composer.end() - 1),
            },
            Event::StartOfComplexity => Some(l.start_of_complexity),
            Event::TagComplexity(c) => match c {
                Some(c) => self
                    .complexities
                    .iter()
                    .position(|x| x == c)
                    .map(|i| l.tag_complexity.start + i as u32),
                None => Some(l.tag_complexity.end() - 1),
            },
            Event::StartOfInstrument => Some(l.start_of_instrument),
            Event::TagInstrument(p) => match p {
                Some(p) => (*p as u32 <= DRUM_PROGRAM as u32).then(|| l.tag_instrument.start + *p as u32),
                None => Some(l.tag_instrument.end() - 1),
            },
            Event::StartOfNotes => Some(l.start_of_notes),
            Event::EndOfSong => Some(l.end_of_song),
            Event::Beat(b) => within(&l.beat, *b),
            Event::Position(p) => within(&l.position, *p),
            Event::Instrument(p) => within(&l.instrument, *p as u32),
            Event::Pitch(p) => within(&l.pitch, *p as u32),
            Event::Duration(d) => d.checked_sub(1).and_then(|o| within(&l.duration, o)),
            Event::DrumPitch(p) => within(&l.drum_pitch, *p as u32),
        }
    }

    /// Event for an id, `None` when the id is outside the vocabulary.
    pub fn event(&self, id: u32) -> Option<Event> {
        let l = &self.layout;
        if id >= l.size {
            return None;
        }
        let singles = [
            (l.pad, Event::Pad),
            (l.start_of_song, Event::StartOfSong),
            (l.start_of_genre, Event::StartOfGenre),
            (l.start_of_composer, Event::StartOfComposer),
            (l.start_of_complexity, Event::StartOfComplexity),
            (l.start_of_instrument, Event::StartOfInstrument),
            (l.start_of_notes, Event::StartOfNotes),
            (l.end_of_song, Event::EndOfSong),
        ];
        if let Some((_, e)) = singles.into_iter().find(|(i, _)| *i == id) {
            return Some(e);
        }
        let tag = |r: &IdRange| r.offset_of(id).map(|o| (o < r.len - 1).then_some(o as usize));
        if let Some(g) = tag(&l.tag_genre) {
            return Some(Event::TagGenre(g.map(|i| self.genres[i])));
        }
        if let Some(c) = tag(&l.tag_composer) {
            return Some(Event::TagComposer(c));
        }
        if let Some(c) = tag(&l.tag_complexity) {
            return Some(Event::TagComplexity(c.map(|i| self.complexities[i])));
        }
        if let Some(p) = tag(&l.tag_instrument) {
            return Some(Event::TagInstrument(p.map(|p| p as u8)));
        }
        if let Some(o) = l.beat.offset_of(id) {
            return Some(Event::Beat(o));
        }
        if let Some(o) = l.position.offset_of(id) {
            return Some(Event::Position(o));
        }
        if let Some(o) = l.instrument.offset_of(id) {
            return Some(Event::Instrument(o as u8));
        }
        if let Some(o) = l.pitch.offset_of(id) {
            return Some(Event::Pitch(o as u8));
        }
        if let Some(o) = l.duration.offset_of(id) {
            return Some(Event::Duration(o + 1));
        }
        l.drum_pitch.offset_of(id).map(|o| Event::DrumPitch(o as u8))
    }

    pub fn to_json(&self) -> String {
        let file = VocabFile {
            version: self.version.clone(),
            hash: self.hash.clone(),
            vocab_size: self.layout.size,
            genres: self.genres.iter().map(|g| g.label().to_string()).collect(),
            composers: self.composers.clone(),
            complexities: self.complexities.iter().map(|c| c.label().to_string()).collect(),
            layout: self.layout.clone(),
        };
        serde_json::to_string_pretty(&file).expect("vocab serializes")
    }

    /// Parses a vocabulary file and verifies its layout and content hash.
    pub fn from_json(json: &str) -> Result<VocabSpec, TokenizerError> {
        let file: VocabFile =
            serde_json::from_str(json).map_err(|e| TokenizerError::InvalidVocab(e.to_string()))?;
        if file.version != VOCAB_VERSION {
            return Err(TokenizerError::InvalidVocab(format!("unsupported version `{}`", file.version)));
        }
        let spec = VocabSpec::from_config(&VocabConfig {
            genres: file.genres,
            composers: file.composers,
            complexities: file.complexities,
        })?;
        if spec.layout != file.layout || spec.layout.size != file.vocab_size {
            return Err(TokenizerError::InvalidVocab("layout does not match label lists".into()));
        }
        if spec.hash != file.hash {
            return Err(TokenizerError::HashMismatch { expected: file.hash, found: spec.hash });
        }
        Ok(spec)
    }

    /// Per-family id ranges keyed by family name.
    pub fn ranges(&self) -> BTreeMap<&'static str, IdRange> {
        let l = &self.layout;
        let one = |start| IdRange { start, len: 1 };
        BTreeMap::from([
            ("pad", one(l.pad)),
            ("start-of-song", one(l.start_of_song)),
            ("start-of-genre", one(l.start_of_genre)),
            ("tag_genre", l.tag_genre),
            ("start-of-composer", one(l.start_of_composer)),
            ("tag_composer", l.tag_composer),
            ("start-of-complexity", one(l.start_of_complexity)),
            ("tag_complexity", l.tag_complexity),
            ("start-of-instrument", one(l.start_of_instrument)),
            ("tag_instrument", l.tag_instrument),
            ("start-of-notes", one(l.start_of_notes)),
            ("end-of-song", one(l.end_of_song)),
            ("beat", l.beat),
            ("position", l.position),
            ("instrument", l.instrument),
            ("pitch", l.pitch),
            ("duration", l.duration),
            ("drum_pitch", l.drum_pitch),
        ])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_size_matches_layout_sum() {
        let sum: u32 = [1, 1, 1, 9, 1, 48, 1, 4, 1, 130, 1, 1, 1024, 12, 129, 128, 192, 128].iter().sum();
        assert_eq!(sum, 1812);
        assert_eq!(build_vocab().size(), 1812);
    }

    #[test]
    fn anchors() {
        let v = build_vocab();
        assert_eq!(v.event(0), Some(Event::Pad));
        assert_eq!(v.event(1), Some(Event::StartOfSong));
        assert_eq!(v.id(&Event::StartOfGenre), 2);
        assert_eq!(v.id(&Event::TagGenre(None)), 11);
        assert_eq!(v.id(&Event::StartOfNotes), 197);
        assert_eq!(v.id(&Event::EndOfSong), 198);
        assert_eq!(v.id(&Event::DrumPitch(127)), 1811);
        assert_eq!(v.event(1812), None);
    }

    #[test]
    fn bijective() {
        let v = build_vocab();
        for id in 0..v.size() as u32 {
            let e = v.event(id).unwrap();
            assert_eq!(v.id(&e), id, "{e}");
        }
    }

    #[test]
    fn duplicate_composer_rejected() {
        let mut cfg = VocabConfig::default();
        cfg.composers.push("johann sebastian bach".into());
        assert_eq!(
            VocabSpec::from_config(&cfg),
            Err(TokenizerError::DuplicateLabel("johann sebastian bach".into()))
        );
    }

    #[test]
    fn unknown_genre_label_rejected() {
        let mut cfg = VocabConfig::default();
        cfg.genres.push("darkwave".into());
        assert!(matches!(VocabSpec::from_config(&cfg), Err(TokenizerError::UnknownLabel(_))));
    }

    #[test]
    fn json_round_trip_and_hash_check() {
        let v = build_vocab();
        let json = v.to_json();
        assert_eq!(VocabSpec::from_json(&json).unwrap(), v);
        let tampered = json.replace(v.hash(), &"0".repeat(64));
        assert!(matches!(VocabSpec::from_json(&tampered), Err(TokenizerError::HashMismatch { .. })));
    }

    #[test]
    fn hash_is_stable_and_content_dependent() {
        assert_eq!(build_vocab().hash(), build_vocab().hash());
        let mut cfg = VocabConfig::default();
        cfg.composers.pop();
        assert_ne!(VocabSpec::from_config(&cfg).unwrap().hash(), build_vocab().hash());
    }
}
