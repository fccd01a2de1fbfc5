//! Metadata normalization: composer canonicalization, genre merging, corpus
//! filtering and train/valid/test splits.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PipelineError;
use crate::midi::MidiImportReport;
use crate::score::{Complexity, Genre, GenreSource, KeySignature, License, Metadata, Score, UserStats};
use crate::tokenizer::DEFAULT_COMPOSERS;

/// Minimum corpus count for a composer to be retained.
pub const COMPOSER_MIN_COUNT: usize = 100;
const MAX_NAME_WORDS: usize = 6;
const URL_MARKERS: [&str; 7] = ["http:", "https:", "www.", "://", ".com", ".org", ".net"];

const DEFAULT_ALIASES: [(&str, &str); 62] = [
    ("bach", "johann sebastian bach"),
    ("j.s. bach", "johann sebastian bach"),
    ("js bach", "johann sebastian bach"),
    ("j. s. bach", "johann sebastian bach"),
    ("mozart", "wolfgang amadeus mozart"),
    ("w.a. mozart", "wolfgang amadeus mozart"),
    ("w. a. mozart", "wolfgang amadeus mozart"),
    ("beethoven", "ludwig van beethoven"),
    ("l. v. beethoven", "ludwig van beethoven"),
    ("chopin", "frederic chopin"),
    ("frédéric chopin", "frederic chopin"),
    ("fryderyk chopin", "frederic chopin"),
    ("schubert", "franz schubert"),
    ("schumann", "robert schumann"),
    ("brahms", "johannes brahms"),
    ("tchaikovsky", "pyotr ilyich tchaikovsky"),
    ("tchaikowsky", "pyotr ilyich tchaikovsky"),
    ("peter ilyich tchaikovsky", "pyotr ilyich tchaikovsky"),
    ("vivaldi", "antonio vivaldi"),
    ("handel", "george frideric handel"),
    ("händel", "george frideric handel"),
    ("haydn", "joseph haydn"),
    ("franz joseph haydn", "joseph haydn"),
    ("debussy", "claude debussy"),
    ("ravel", "maurice ravel"),
    ("satie", "erik satie"),
    ("liszt", "franz liszt"),
    ("mendelssohn", "felix mendelssohn"),
    ("rachmaninoff", "sergei rachmaninoff"),
    ("rachmaninov", "sergei rachmaninoff"),
    ("sergei rachmaninov", "sergei rachmaninoff"),
    ("grieg", "edvard grieg"),
    ("dvorak", "antonin dvorak"),
    ("antonín dvořák", "antonin dvorak"),
    ("verdi", "giuseppe verdi"),
    ("puccini", "giacomo puccini"),
    ("joplin", "scott joplin"),
    ("gershwin", "george gershwin"),
    ("pachelbel", "johann pachelbel"),
    ("holst", "gustav holst"),
    ("saint-saens", "camille saint-saens"),
    ("saint-saëns", "camille saint-saens"),
    ("faure", "gabriel faure"),
    ("fauré", "gabriel faure"),
    ("mussorgsky", "modest mussorgsky"),
    ("rimsky-korsakov", "nikolai rimsky-korsakov"),
    ("prokofiev", "sergei prokofiev"),
    ("shostakovich", "dmitri shostakovich"),
    ("stravinsky", "igor stravinsky"),
    ("wagner", "richard wagner"),
    ("mahler", "gustav mahler"),
    ("zimmer", "hans zimmer"),
    ("hisaishi", "joe hisaishi"),
    ("koji kondo", "koji kondo"),
    ("kondo", "koji kondo"),
    ("uematsu", "nobuo uematsu"),
    ("einaudi", "ludovico einaudi"),
    ("morricone", "ennio morricone"),
    ("elfman", "danny elfman"),
    ("djawadi", "ramin djawadi"),
    ("menken", "alan menken"),
    ("tobyfox", "toby fox"),
];

fn fold(raw: &str) -> String {
    raw.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Alias resolution plus the list of retained composers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComposerTable {
    pub aliases: BTreeMap<String, String>,
    pub retained: BTreeSet<String>,
}

impl Default for ComposerTable {
    fn default() -> Self {
        ComposerTable {
            aliases: DEFAULT_ALIASES.iter().map(|(a, c)| (a.to_string(), c.to_string())).collect(),
            retained: DEFAULT_COMPOSERS.iter().map(|c| c.to_string()).collect(),
        }
    }
}

impl ComposerTable {
    /// Lowercased, alias-resolved name that passed the human-name filter,
    /// whether or not it is retained.
    pub fn resolve(&self, raw: &str) -> Option<String> {
        let folded = fold(raw);
        if folded.is_empty() || !looks_like_human_name(&folded) {
            return None;
        }
        Some(self.aliases.get(&folded).cloned().unwrap_or(folded))
    }

    /// Recomputes the retained list: canonical names with at least
    /// `min_count` occurrences among `raw_names`.
    pub fn retain_by_count<'a>(&mut self, raw_names: impl IntoIterator<Item = &'a str>, min_count: usize) {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for raw in raw_names {
            if let Some(name) = self.resolve(raw) {
                *counts.entry(name).or_default() += 1;
            }
        }
        self.retained = counts.into_iter().filter(|(_, n)| *n >= min_count).map(|(c, _)| c).collect();
    }
}

/// Human-name filter: no digits, no URL fragments, at most six words.
pub fn looks_like_human_name(name: &str) -> bool {
    !name.chars().any(|c| c.is_ascii_digit())
        && !URL_MARKERS.iter().any(|m| name.contains(m))
        && name.split_whitespace().count() <= MAX_NAME_WORDS
}

pub fn normalize_composer(raw: &str, table: &ComposerTable) -> Option<String> {
    table.resolve(raw).filter(|name| table.retained.contains(name))
}

/// Raw genre string to merged class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenreMergeTable {
    pub mapping: BTreeMap<String, Genre>,
    /// Genres excluded as noisy; dropped even if a mapping exists.
    pub excluded: BTreeSet<String>,
}

impl Default for GenreMergeTable {
    fn default() -> Self {
        use Genre::*;
        let pairs = [
            ("classical", ClassicalTraditional),
            ("religious", ClassicalTraditional),
            ("new age", ClassicalTraditional),
            ("soundtrack", SoundtrackStage),
            ("comedy", SoundtrackStage),
            ("pop", RockMetal),
            ("rock", RockMetal),
            ("metal", RockMetal),
            ("folk", FolkCountry),
            ("country", FolkCountry),
            ("hip hop", Urban),
            ("r&b", Urban),
            ("funk&soul", Urban),
            ("electronic", ElectronicDance),
            ("disco", ElectronicDance),
            ("world music", World),
            ("reggae&ska", World),
            ("jazz", JazzBlues),
            ("blues", JazzBlues),
        ];
        GenreMergeTable {
            mapping: pairs.iter().map(|(k, g)| (k.to_string(), *g)).collect(),
            excluded: ["darkwave", "experimental"].iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl GenreMergeTable {
    /// Lookup key: lowercase, whitespace collapsed, no spaces around `&`.
    pub fn key(raw: &str) -> String {
        fold(raw).replace(" & ", "&").replace(" &", "&").replace("& ", "&")
    }

    pub fn lookup(&self, raw: &str) -> Option<Genre> {
        let key = Self::key(raw);
        if self.excluded.contains(&key) {
            return None;
        }
        self.mapping.get(&key).copied()
    }
}

/// Merges raw genre tags into sorted, deduplicated classes. Unmapped and
/// excluded genres are dropped.
pub fn merge_genres<S: AsRef<str>>(raw_tags: &[S], table: &GenreMergeTable) -> Vec<Genre> {
    let set: BTreeSet<Genre> = raw_tags.iter().filter_map(|t| table.lookup(t.as_ref())).collect();
    set.into_iter().collect()
}

/// Deterministic shuffled split: `ceil(0.9n)` / `floor(0.05n)` / remainder.
pub fn make_splits<T: Clone + Eq + std::hash::Hash + ToString>(
    ids: &[T],
    seed: u64,
) -> Result<(Vec<T>, Vec<T>, Vec<T>), PipelineError> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id) {
            return Err(PipelineError::DuplicateId(id.to_string()));
        }
    }
    let n = ids.len();
    let n_train = (9 * n).div_ceil(10);
    let n_valid = n / 20;
    let mut shuffled = ids.to_vec();
    shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = shuffled.split_off(n_train + n_valid);
    let valid = shuffled.split_off(n_train);
    Ok((shuffled, valid, test))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    NonGm,
    NegativePitch,
    Empty,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "decision", content = "reason")]
pub enum FilterDecision {
    Keep,
    Drop(DropReason),
}

/// Corpus admission rule applied after import.
pub fn filter_corpus(score: &Score, report: &MidiImportReport) -> FilterDecision {
    if report.notes_dropped_negative_pitch > 0 {
        FilterDecision::Drop(DropReason::NegativePitch)
    } else if score.notes.is_empty() && report.tracks_dropped_non_gm > 0 {
        FilterDecision::Drop(DropReason::NonGm)
    } else if score.notes.is_empty() {
        FilterDecision::Drop(DropReason::Empty)
    } else {
        FilterDecision::Keep
    }
}

/// Metadata as scraped, before normalization.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RawMetadata {
    pub genres: Vec<String>,
    pub composer: Option<String>,
    /// Source complexity level, `0..=2`.
    pub complexity: Option<i64>,
    pub free_tags: Vec<String>,
    pub key: Option<KeySignature>,
    pub tempo_qpm: Option<f64>,
    pub user_stats: Option<UserStats>,
    pub rating: Option<f64>,
    pub license: Option<String>,
}

#[derive(Debug, Clone, Default)]
pub struct Tables {
    pub composers: ComposerTable,
    pub genres: GenreMergeTable,
}

fn parse_license(raw: &str) -> License {
    let folded = fold(raw).replace(['-', '_'], " ");
    if folded.contains("public domain") {
        License::PublicDomain
    } else if folded.starts_with("cc") || folded.contains("creative commons") {
        License::CreativeCommons
    } else {
        License::Other
    }
}

pub fn normalize_metadata(raw: &RawMetadata, tables: &Tables) -> Metadata {
    let genre_tags = merge_genres(&raw.genres, &tables.genres);
    let genre_source = if genre_tags.is_empty() { GenreSource::Absent } else { GenreSource::User };
    Metadata {
        genre_source,
        genre_tags,
        composer: raw.composer.as_deref().and_then(|c| normalize_composer(c, &tables.composers)),
        complexity: raw.complexity.and_then(Complexity::from_level),
        free_tags: raw.free_tags.iter().map(|t| fold(t)).filter(|t| !t.is_empty()).collect(),
        key: raw.key.filter(|k| (-7..=7).contains(&k.fifths)),
        tempo_qpm: raw.tempo_qpm.filter(|t| t.is_finite() && *t > 0.0),
        user_stats: raw.user_stats,
        rating: raw.rating.filter(|r| (1.0..=5.0).contains(r)),
        license: raw.license.as_deref().map(parse_license).unwrap_or_default(),
    }
}

/// One corpus manifest line: `{id, score_path, metadata}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry<M = Metadata> {
    pub id: String,
    pub score_path: String,
    #[serde(default)]
    pub metadata: M,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub caption: Option<String>,
}

pub type RawManifestEntry = ManifestEntry<RawMetadata>;
