//! vocab, ingest, normalize, splits, tokenize, detokenize, render.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use metascore_core::io::{load_score, score_to_json};
use metascore_core::metadata::{
    filter_corpus, make_splits, normalize_metadata, ComposerTable, FilterDecision, GenreMergeTable, ManifestEntry,
    RawManifestEntry, RawMetadata, Tables,
};
use metascore_core::midi::{write_midi, MidiImportReport, DEFAULT_TICKS_PER_QUARTER};
use metascore_core::tokenizer::{decode, decode_strict, encode_truncated, VocabConfig};
use metascore_core::{GenreSource, Metadata, Score, TagSet, TokenSequence, VocabSpec};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::util::*;

#[derive(Args, Debug, Serialize)]
pub struct VocabArgs {
    /// Where to write the vocabulary JSON.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON list of composer names replacing the built-in list.
    #[arg(long)]
    pub composers: Option<PathBuf>,
}

pub fn vocab(ctx: &Ctx, args: &VocabArgs) -> Result<()> {
    let mut config = VocabConfig::default();
    if let Some(p) = &args.composers {
        let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
        config.composers = serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?;
    }
    let spec = VocabSpec::from_config(&config)?;
    write_file(ctx, &args.out, spec.to_json() + "\n")?;
    let mut m = RunManifest::new("vocab", args);
    m.outputs.push(args.out.display().to_string());
    m.vocab_hash = Some(spec.hash().to_string());
    m.summary = json!({ "vocab_size": spec.size(), "composers": spec.composers().len() });
    m.write(ctx, &args.out)?;
    report(ctx, &json!({ "vocab": args.out.display().to_string(), "vocab_size": spec.size(), "hash": spec.hash() }));
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct IngestArgs {
    /// Directory of .mid/.midi/.json scores, or a raw manifest JSONL.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    /// Raw manifest of the kept entries.
    #[arg(long)]
    pub out: PathBuf,
}

fn collect_scores(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let mut entries: Vec<PathBuf> =
        fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>()?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            collect_scores(&p, out)?;
        } else if p
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| ["mid", "midi", "json"].contains(&e.to_ascii_lowercase().as_str()))
        {
            out.push(p);
        }
    }
    Ok(())
}

fn id_of(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}

fn add_report(total: &mut MidiImportReport, r: &MidiImportReport) {
    total.notes_kept += r.notes_kept;
    total.notes_dropped_negative_pitch += r.notes_dropped_negative_pitch;
    total.notes_clipped_duration += r.notes_clipped_duration;
    total.tracks_dropped_non_gm += r.tracks_dropped_non_gm;
}

pub fn ingest(ctx: &Ctx, args: &IngestArgs) -> Result<()> {
    ensure_writable(ctx, &args.out)?;
    let entries: Vec<RawManifestEntry> = if args.input.is_dir() {
        let mut paths = Vec::new();
        collect_scores(&args.input, &mut paths)?;
        paths
            .iter()
            .map(|p| ManifestEntry {
                id: id_of(&args.input, p),
                score_path: absolute(p),
                metadata: RawMetadata::default(),
                caption: None,
            })
            .collect()
    } else {
        read_lines(&args.input)?
    };
    let ids: BTreeSet<&str> = entries.iter().map(|e| e.id.as_str()).collect();
    if ids.len() != entries.len() {
        bail!("duplicate ids in {}", args.input.display());
    }
    let loaded: Vec<Result<(Score, MidiImportReport), String>> = in_pool(ctx.jobs, || {
        entries
            .par_iter()
            .map(|e| load_score(&resolve(&args.input, &e.score_path)).map_err(|err| err.to_string()))
            .collect()
    })?;
    let mut kept = Vec::new();
    let mut dropped: BTreeMap<String, String> = BTreeMap::new();
    let mut totals = MidiImportReport::default();
    for (entry, result) in entries.into_iter().zip(loaded) {
        match result {
            Err(e) => {
                dropped.insert(entry.id.clone(), format!("unreadable: {e}"));
            }
            Ok((score, rep)) => {
                add_report(&mut totals, &rep);
                match filter_corpus(&score, &rep) {
                    FilterDecision::Keep => kept.push(ManifestEntry {
                        score_path: absolute(&resolve(&args.input, &entry.score_path)),
                        ..entry
                    }),
                    FilterDecision::Drop(reason) => {
                        dropped.insert(entry.id.clone(), serde_json::to_value(reason)?.as_str().unwrap_or("").into());
                    }
                }
            }
        }
    }
    write_lines(ctx, &args.out, &kept)?;
    let summary = json!({
        "kept": kept.len(),
        "dropped": dropped.len(),
        "import": totals,
    });
    let mut m = RunManifest::new("ingest", args);
    m.inputs.push(args.input.display().to_string());
    m.outputs.push(args.out.display().to_string());
    m.summary = json!({ "kept": kept.len(), "dropped": dropped, "import": totals });
    m.write(ctx, &args.out)?;
    report(ctx, &summary);
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct NormalizeArgs {
    /// Raw manifest JSONL.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    /// Normalized manifest JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Composer alias table JSON (`{"aliases": {...}, "retained": [...]}`).
    #[arg(long)]
    pub composer_table: Option<PathBuf>,
    /// Genre merge table JSON (`{"mapping": {...}, "excluded": [...]}`).
    #[arg(long)]
    pub genre_table: Option<PathBuf>,
    /// Recompute the retained composers from this corpus with this minimum count.
    #[arg(long)]
    pub min_composer_count: Option<usize>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

pub fn normalize(ctx: &Ctx, args: &NormalizeArgs) -> Result<()> {
    ensure_writable(ctx, &args.out)?;
    let raw: Vec<RawManifestEntry> = read_lines(&args.input)?;
    let mut composers: ComposerTable = match &args.composer_table {
        Some(p) => read_json(p)?,
        None => ComposerTable::default(),
    };
    let genres: GenreMergeTable = match &args.genre_table {
        Some(p) => read_json(p)?,
        None => GenreMergeTable::default(),
    };
    if let Some(min) = args.min_composer_count {
        composers.retain_by_count(raw.iter().filter_map(|e| e.metadata.composer.as_deref()), min);
    }
    let tables = Tables { composers, genres };
    let out: Vec<ManifestEntry> = raw
        .iter()
        .map(|e| ManifestEntry {
            id: e.id.clone(),
            score_path: absolute(&resolve(&args.input, &e.score_path)),
            metadata: normalize_metadata(&e.metadata, &tables),
            caption: e.caption.clone(),
        })
        .collect();
    write_lines(ctx, &args.out, &out)?;
    let summary = json!({
        "entries": out.len(),
        "with_genres": out.iter().filter(|e| !e.metadata.genre_tags.is_empty()).count(),
        "with_composer": out.iter().filter(|e| e.metadata.composer.is_some()).count(),
        "with_complexity": out.iter().filter(|e| e.metadata.complexity.is_some()).count(),
        "retained_composers": tables.composers.retained.len(),
    });
    let mut m = RunManifest::new("normalize", args);
    m.inputs.push(args.input.display().to_string());
    m.outputs.push(args.out.display().to_string());
    m.summary = summary.clone();
    m.write(ctx, &args.out)?;
    report(ctx, &summary);
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct SplitsArgs {
    /// Manifest JSONL to split.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    /// Directory receiving train.jsonl, valid.jsonl and test.jsonl.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

pub fn splits(ctx: &Ctx, args: &SplitsArgs) -> Result<()> {
    let entries: Vec<serde_json::Value> = read_lines(&args.input)?;
    let mut by_id = BTreeMap::new();
    let mut ids = Vec::with_capacity(entries.len());
    for e in &entries {
        let id = e.get("id").and_then(|v| v.as_str()).context("manifest entry without an `id`")?.to_string();
        let path = e.get("score_path").and_then(|v| v.as_str()).unwrap_or_default();
        let mut e = e.clone();
        e["score_path"] = json!(absolute(&resolve(&args.input, path)));
        by_id.insert(id.clone(), e);
        ids.push(id);
    }
    let (train, valid, test) = make_splits(&ids, args.seed)?;
    let names = ["train", "valid", "test"];
    let mut m = RunManifest::new("splits", args);
    m.seed = Some(args.seed);
    m.inputs.push(args.input.display().to_string());
    for (name, part) in names.iter().zip([&train, &valid, &test]) {
        let path = args.out_dir.join(format!("{name}.jsonl"));
        let rows: Vec<&serde_json::Value> = part.iter().map(|id| &by_id[id]).collect();
        write_lines(ctx, &path, &rows)?;
        m.outputs.push(path.display().to_string());
    }
    let summary = json!({ "train": train.len(), "valid": valid.len(), "test": test.len() });
    m.summary = summary.clone();
    m.write(ctx, &args.out_dir.join("splits"))?;
    report(ctx, &summary);
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct TokenizeArgs {
    /// Normalized manifest JSONL.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    /// Vocabulary JSON; the built-in vocabulary when omitted.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output JSONL of `{id, tokens}`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct TokenRecord {
    pub id: String,
    pub tokens: TokenSequence,
}

pub fn tokenize(ctx: &Ctx, args: &TokenizeArgs) -> Result<()> {
    ensure_writable(ctx, &args.out)?;
    let vocab = load_vocab(args.vocab.as_deref())?;
    let entries: Vec<ManifestEntry> = read_lines(&args.input)?;
    let encoded: Vec<Result<(TokenRecord, usize)>> = in_pool(ctx.jobs, || {
        entries
            .par_iter()
            .map(|e| {
                let (score, _) = load_entry_score(&args.input, e)?;
                let tags = TagSet::from_metadata(&e.metadata, &score, &vocab);
                let (tokens, dropped) = encode_truncated(&tags, &score, &vocab)?;
                Ok((TokenRecord { id: e.id.clone(), tokens }, dropped))
            })
            .collect()
    })?;
    let mut records = Vec::with_capacity(encoded.len());
    let mut dropped_notes = 0;
    for r in encoded {
        let (rec, dropped) = r?;
        dropped_notes += dropped;
        records.push(rec);
    }
    write_lines(ctx, &args.out, &records)?;
    let total: usize = records.iter().map(|r| r.tokens.len()).sum();
    let summary = json!({ "sequences": records.len(), "tokens": total, "notes_beyond_beat_vocabulary": dropped_notes });
    let mut m = RunManifest::new("tokenize", args);
    m.inputs.push(args.input.display().to_string());
    m.outputs.push(args.out.display().to_string());
    m.vocab_hash = Some(vocab.hash().to_string());
    m.summary = summary.clone();
    m.write(ctx, &args.out)?;
    report(ctx, &summary);
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct DetokenizeArgs {
    /// JSONL of `{id, tokens}`.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Output manifest JSONL; scores are written next to it.
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for the score JSON files (default: `<out>.scores`).
    #[arg(long)]
    pub scores_dir: Option<PathBuf>,
    /// Reject sequences that break the token grammar instead of recovering.
    #[arg(long)]
    pub strict: bool,
}

fn file_stem_for(id: &str) -> String {
    id.chars().map(|c| if c.is_ascii_alphanumeric() || "-_.".contains(c) { c } else { '_' }).collect()
}

pub fn detokenize(ctx: &Ctx, args: &DetokenizeArgs) -> Result<()> {
    ensure_writable(ctx, &args.out)?;
    let vocab = load_vocab(args.vocab.as_deref())?;
    let records: Vec<TokenRecord> = read_lines(&args.input)?;
    let dir = args.scores_dir.clone().unwrap_or_else(|| {
        let mut name = args.out.file_name().unwrap_or_default().to_os_string();
        name.push(".scores");
        args.out.with_file_name(name)
    });
    let mut used = BTreeSet::new();
    let mut out = Vec::with_capacity(records.len());
    for r in &records {
        let (tags, score) = if args.strict {
            decode_strict(&r.tokens, &vocab).with_context(|| format!("sequence `{}`", r.id))?
        } else {
            decode(&r.tokens, &vocab)
        };
        let stem = file_stem_for(&r.id);
        if !used.insert(stem.clone()) {
            bail!("ids map to the same file name `{stem}`");
        }
        let path = dir.join(format!("{stem}.json"));
        write_file(ctx, &path, score_to_json(&score) + "\n")?;
        let metadata = Metadata {
            genre_source: if tags.genres.is_empty() { GenreSource::Absent } else { GenreSource::User },
            genre_tags: tags.genres,
            composer: tags.composer,
            complexity: tags.complexity,
            ..Metadata::default()
        };
        out.push(ManifestEntry { id: r.id.clone(), score_path: absolute(&path), metadata, caption: None });
    }
    write_lines(ctx, &args.out, &out)?;
    let summary = json!({ "scores": out.len(), "scores_dir": dir.display().to_string() });
    let mut m = RunManifest::new("detokenize", args);
    m.inputs.push(args.input.display().to_string());
    m.outputs.push(args.out.display().to_string());
    m.vocab_hash = Some(vocab.hash().to_string());
    m.summary = summary.clone();
    m.write(ctx, &args.out)?;
    report(ctx, &summary);
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct RenderArgs {
    /// Score as .mid/.midi or .json.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    /// Output .mid/.midi or .json, chosen by extension.
    #[arg(long)]
    pub out: PathBuf,
    /// MIDI resolution of the written file.
    #[arg(long, default_value_t = DEFAULT_TICKS_PER_QUARTER)]
    pub ticks_per_quarter: u32,
}

pub fn is_json(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"))
}

pub fn render(ctx: &Ctx, args: &RenderArgs) -> Result<()> {
    let (score, rep) = load_score(&args.input)?;
    let bytes = if is_json(&args.out) {
        (score_to_json(&score) + "\n").into_bytes()
    } else {
        write_midi(&score, args.ticks_per_quarter)?
    };
    write_file(ctx, &args.out, bytes)?;
    let summary = json!({ "notes": score.notes.len(), "import": rep });
    let mut m = RunManifest::new("render", args);
    m.inputs.push(args.input.display().to_string());
    m.outputs.push(args.out.display().to_string());
    m.summary = summary.clone();
    m.write(ctx, &args.out)?;
    report(ctx, &summary);
    Ok(())
}
