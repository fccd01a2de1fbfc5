//! Pseudo captions from metadata: an in-context prompt for a completion
//! endpoint with output filtering, or a deterministic template.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::CaptionError;
use crate::gm::program_name;
use crate::http::JsonEndpoint;
use crate::score::{KeySignature, Metadata, Mode, TimeSignature};
use crate::tokenizer::TagSet;

pub const MAX_CAPTION_TOKENS: usize = 32;
pub const MIN_ASCII_RATIO: f64 = 0.9;
/// A caption is corrupted when some 4-gram occurs more than this many times.
pub const MAX_NGRAM_REPEATS: usize = 3;
pub const COMPLETION_URL_ENV: &str = "METASCORE_COMPLETION_URL";
pub const COMPLETION_KEY_ENV: &str = "METASCORE_COMPLETION_KEY";

const INSTRUCTION: &str = "Write a one-sentence English description of a piece of music from its tags.";

/// In-context examples: (tag line, caption).
const EXAMPLES: [(&str, &str); 5] = [
    (
        "genre: classical & traditional; composer: frederic chopin; complexity: advanced; instruments: acoustic grand piano; time signature: 3/4; key: c# minor; tempo: 60 bpm; tags: nocturne, romantic",
        "A demanding romantic nocturne for solo piano in C# minor, in the style of Chopin, unfolding slowly in 3/4.",
    ),
    (
        "genre: rock & metal; complexity: intermediate; instruments: distortion guitar, electric bass (finger), drums; time signature: 4/4; key: e minor; tempo: 140 bpm; tags: riff, energetic",
        "An energetic rock track in E minor driven by distorted guitar riffs, bass and drums at 140 bpm.",
    ),
    (
        "genre: soundtrack & stage; composer: joe hisaishi; complexity: beginner; instruments: string ensemble 1, flute; time signature: 4/4; key: f major; tempo: 80 bpm; tags: film, gentle",
        "A gentle, easy film theme for strings and flute in F major, reminiscent of Joe Hisaishi.",
    ),
    (
        "genre: jazz & blues; instruments: acoustic bass, tenor sax, drums; time signature: 4/4; key: b- major; tempo: 120 bpm; tags: swing",
        "A swinging jazz tune in B-flat major with walking bass, tenor saxophone and brushed drums.",
    ),
    (
        "genre: electronic & dance; complexity: intermediate; instruments: lead 2 (sawtooth), synth bass 1, drums; time signature: 4/4; tempo: 128 bpm; tags: edm, club",
        "A club-ready electronic dance track with a sawtooth lead and punchy synth bass at 128 bpm.",
    ),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionMode {
    Llm,
    Template,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    NonEnglish,
    Corrupted,
    Empty,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionRecord {
    pub source_id: String,
    pub caption: String,
    pub mode: CaptionMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rejected_reason: Option<RejectReason>,
}

impl CaptionRecord {
    pub fn is_accepted(&self) -> bool {
        self.rejected_reason.is_none()
    }
}

pub fn key_name(key: &KeySignature) -> String {
    const MAJOR: [&str; 15] = ["cb", "gb", "db", "ab", "eb", "bb", "f", "c", "g", "d", "a", "e", "b", "f#", "c#"];
    const MINOR: [&str; 15] = ["ab", "eb", "bb", "f", "c", "g", "d", "a", "e", "b", "f#", "c#", "g#", "d#", "a#"];
    let i = (key.fifths.clamp(-7, 7) + 7) as usize;
    match key.mode {
        Mode::Major => format!("{} major", MAJOR[i]),
        Mode::Minor => format!("{} minor", MINOR[i]),
    }
}

fn join_names(items: &[String], last_sep: &str) -> String {
    match items {
        [] => String::new(),
        [one] => one.clone(),
        [init @ .., last] => format!("{}{last_sep}{last}", init.join(", ")),
    }
}

/// `name: value` pairs in fixed order; absent fields are omitted.
fn tag_fields(metadata: &Metadata, tags: &TagSet, time_signature: Option<&TimeSignature>) -> Vec<(&'static str, String)> {
    let mut fields = Vec::new();
    let genres: Vec<String> = if tags.genres.is_empty() {
        metadata.genre_tags.iter().map(|g| g.to_string()).collect()
    } else {
        tags.genres.iter().map(|g| g.to_string()).collect()
    };
    if !genres.is_empty() {
        fields.push(("genre", genres.join(", ")));
    }
    if let Some(c) = tags.composer.as_ref().or(metadata.composer.as_ref()) {
        fields.push(("composer", c.clone()));
    }
    if let Some(c) = tags.complexity.or(metadata.complexity) {
        fields.push(("complexity", c.to_string()));
    }
    if !tags.instruments.is_empty() {
        let names: Vec<String> = tags.instruments.iter().map(|&p| program_name(p).to_string()).collect();
        fields.push(("instruments", names.join(", ")));
    }
    if let Some(ts) = time_signature {
        fields.push(("time signature", ts.to_string()));
    }
    if let Some(k) = &metadata.key {
        fields.push(("key", key_name(k)));
    }
    if let Some(t) = metadata.tempo_qpm {
        fields.push(("tempo", format!("{t:.0} bpm")));
    }
    if !metadata.free_tags.is_empty() {
        fields.push(("tags", metadata.free_tags.join(", ")));
    }
    fields
}

/// Completion prompt: instruction, five example pairs, then the target's tags.
pub fn build_prompt(metadata: &Metadata, tags: &TagSet, time_signature: Option<&TimeSignature>) -> String {
    let mut prompt = format!("{INSTRUCTION}\n\n");
    for (fields, caption) in EXAMPLES {
        prompt.push_str(&format!("Tags: {fields}\nCaption: {caption}\n\n"));
    }
    let fields: Vec<String> =
        tag_fields(metadata, tags, time_signature).into_iter().map(|(k, v)| format!("{k}: {v}")).collect();
    prompt.push_str(&format!("Tags: {}\nCaption:", fields.join("; ")));
    prompt
}

fn article_for(word: &str) -> &'static str {
    if word.starts_with(['a', 'e', 'i', 'o', 'u']) {
        "an"
    } else {
        "a"
    }
}

/// Deterministic caption, e.g. "an urban piece for acoustic grand piano".
pub fn template_caption(metadata: &Metadata, tags: &TagSet) -> String {
    let mut head = Vec::new();
    if let Some(c) = tags.complexity.or(metadata.complexity) {
        head.push(c.to_string());
    }
    let genres = if tags.genres.is_empty() { &metadata.genre_tags } else { &tags.genres };
    if let Some(g) = genres.first() {
        head.push(g.to_string());
    }
    head.push("piece".to_string());
    let mut text = format!("{} {}", article_for(&head[0]), head.join(" "));
    if !tags.instruments.is_empty() {
        let names: Vec<String> = tags.instruments.iter().map(|&p| program_name(p).to_string()).collect();
        text.push_str(&format!(" for {}", join_names(&names, " and ")));
    }
    if let Some(c) = tags.composer.as_ref().or(metadata.composer.as_ref()) {
        text.push_str(&format!(" in the style of {c}"));
    }
    truncate_tokens(&text, MAX_CAPTION_TOKENS)
}

pub fn truncate_tokens(text: &str, max: usize) -> String {
    text.split_whitespace().take(max).collect::<Vec<_>>().join(" ")
}

pub fn ascii_ratio(text: &str) -> f64 {
    let total = text.chars().count();
    if total == 0 {
        return 1.0;
    }
    text.chars().filter(char::is_ascii).count() as f64 / total as f64
}

pub fn has_repeated_ngram(text: &str, n: usize, max_repeats: usize) -> bool {
    let words: Vec<String> = text.split_whitespace().map(str::to_lowercase).collect();
    let mut counts: HashMap<&[String], usize> = HashMap::new();
    words.windows(n).any(|w| {
        let c = counts.entry(w).or_default();
        *c += 1;
        *c > max_repeats
    })
}

/// Cleans a raw completion: keeps the first line (the model tends to go on
/// with another example), truncates to 32 tokens and applies the filters.
pub fn filter_completion(raw: &str) -> Result<String, RejectReason> {
    let first = raw.trim_start().lines().next().unwrap_or("");
    let first = first.split("Tags:").next().unwrap_or("");
    let text = truncate_tokens(first, MAX_CAPTION_TOKENS);
    if text.is_empty() {
        return Err(RejectReason::Empty);
    }
    if ascii_ratio(&text) < MIN_ASCII_RATIO {
        return Err(RejectReason::NonEnglish);
    }
    if has_repeated_ngram(&text, 4, MAX_NGRAM_REPEATS) {
        return Err(RejectReason::Corrupted);
    }
    Ok(text)
}

pub trait CompletionBackend: Send + Sync {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, CaptionError>;
}

/// Generic completion endpoint: `{"prompt", "max_tokens"}` → `{"text"}`.
#[derive(Debug, Clone)]
pub struct HttpCompletion {
    pub endpoint: JsonEndpoint,
}

#[derive(Serialize)]
struct CompletionRequest<'a> {
    prompt: &'a str,
    max_tokens: usize,
}

#[derive(Deserialize)]
struct CompletionResponse {
    text: String,
}

impl HttpCompletion {
    pub fn new(endpoint: JsonEndpoint) -> Self {
        HttpCompletion { endpoint }
    }

    pub fn from_env() -> Result<Self, CaptionError> {
        JsonEndpoint::from_env(COMPLETION_URL_ENV, COMPLETION_KEY_ENV)
            .map(HttpCompletion::new)
            .ok_or_else(|| CaptionError::BackendUnavailable(format!("{COMPLETION_URL_ENV} is not set")))
    }
}

impl CompletionBackend for HttpCompletion {
    fn complete(&self, prompt: &str, max_tokens: usize) -> Result<String, CaptionError> {
        let resp: CompletionResponse = self
            .endpoint
            .post(&CompletionRequest { prompt, max_tokens })
            .map_err(CaptionError::BackendUnavailable)?;
        Ok(resp.text)
    }
}

pub enum CaptionBackend<'a> {
    Template,
    Llm(&'a dyn CompletionBackend),
}

/// Captions one corpus entry. Filter failures produce a rejected record, not
/// an error.
pub fn caption(
    source_id: &str,
    metadata: &Metadata,
    tags: &TagSet,
    time_signature: Option<&TimeSignature>,
    backend: &CaptionBackend<'_>,
) -> Result<CaptionRecord, CaptionError> {
    match backend {
        CaptionBackend::Template => Ok(CaptionRecord {
            source_id: source_id.to_string(),
            caption: template_caption(metadata, tags),
            mode: CaptionMode::Template,
            rejected_reason: None,
        }),
        CaptionBackend::Llm(llm) => {
            let prompt = build_prompt(metadata, tags, time_signature);
            // whitespace tokens usually undercount model tokens, leave headroom
            let raw = llm.complete(&prompt, 2 * MAX_CAPTION_TOKENS)?;
            let (caption, rejected_reason) = match filter_completion(&raw) {
                Ok(text) => (text, None),
                Err(reason) => (String::new(), Some(reason)),
            };
            Ok(CaptionRecord { source_id: source_id.to_string(), caption, mode: CaptionMode::Llm, rejected_reason })
        }
    }
}
