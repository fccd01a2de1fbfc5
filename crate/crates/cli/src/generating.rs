//! train-gen, generate.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, ValueEnum};
use metascore_core::io::score_to_json;
use metascore_core::metadata::ManifestEntry;
use metascore_core::midi::{write_midi, DEFAULT_TICKS_PER_QUARTER};
use metascore_core::{Complexity, Genre, TagSet, DRUM_PROGRAM};
use metascore_models::embed::TEXT_EMBEDDING_DIM;
use metascore_models::generate::{load_generator, tag_example, text_example};
use metascore_models::{
    generate_tags, generate_text, Embedder, FileEmbedder, Generation, HttpEmbedder, SamplerConfig, StubEmbedder,
};
use metascore_nn::{batch_loss, Example, ModelCheckpoint, ModelConfig};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::data::is_json;
use crate::train::{self, ModelArgs, TrainArgs};
use crate::util::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Tags,
    Text,
}

/// `stub`, `http` or `file:<path>`.
pub fn make_embedder(spec: &str, dim: usize) -> Result<Box<dyn Embedder>> {
    Ok(match spec {
        "stub" => Box::new(StubEmbedder { dim }),
        "http" => Box::new(HttpEmbedder::from_env(dim)?),
        other => match other.strip_prefix("file:") {
            Some(path) => Box::new(FileEmbedder::from_path(Path::new(path), dim)?),
            None => return Err(usage("--embedder", format!("expected stub, http or file:<path>, got `{other}`"))),
        },
    })
}

#[derive(Args, Debug, Serialize)]
pub struct TrainGenArgs {
    /// Training manifest (text mode reads each entry's `caption`).
    #[arg(long)]
    pub train: PathBuf,
    /// Manifest to report the final validation loss on.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Tags)]
    pub mode: Mode,
    /// Text embedder for text mode: stub, http or file:<path>.
    #[arg(long, default_value = "stub")]
    pub embedder: String,
    #[arg(long, default_value_t = TEXT_EMBEDDING_DIM)]
    pub embedding_dim: usize,
    /// Context length; longer sequences are cut.
    #[arg(long, default_value_t = 1024)]
    pub max_seq_len: usize,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainArgs,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct GenExtras {
    mode: Option<Mode>,
    embedder: Option<String>,
}

fn examples(
    ctx: &Ctx,
    manifest: &Path,
    args: &TrainGenArgs,
    vocab: &metascore_core::VocabSpec,
    embedder: Option<&dyn Embedder>,
) -> Result<(Vec<Example>, usize)> {
    let entries: Vec<ManifestEntry> = read_lines(manifest)?;
    let usable: Vec<&ManifestEntry> =
        entries.iter().filter(|e| args.mode == Mode::Tags || e.caption.is_some()).collect();
    let skipped = entries.len() - usable.len();
    let built: Vec<Result<Example>> = in_pool(ctx.jobs, || {
        usable
            .par_iter()
            .map(|e| {
                let (score, _) = load_entry_score(manifest, e)?;
                Ok(match (args.mode, embedder) {
                    (Mode::Text, Some(emb)) => {
                        text_example(e.caption.as_deref().unwrap_or_default(), &score, vocab, emb, args.max_seq_len)?
                    }
                    _ => {
                        let tags = TagSet::from_metadata(&e.metadata, &score, vocab);
                        tag_example(&tags, &score, vocab, args.max_seq_len)?
                    }
                })
            })
            .collect()
    })?;
    Ok((built.into_iter().collect::<Result<_>>()?, skipped))
}

pub fn train_gen(ctx: &Ctx, args: &TrainGenArgs) -> Result<()> {
    ensure_writable(ctx, &args.out)?;
    let vocab = load_vocab(args.vocab.as_deref())?;
    let embedder = match args.mode {
        Mode::Text => Some(make_embedder(&args.embedder, args.embedding_dim)?),
        Mode::Tags => None,
    };
    let (data, skipped) = examples(ctx, &args.train, args, &vocab, embedder.as_deref())?;
    if data.is_empty() {
        bail!("{} yields no training sequences", args.train.display());
    }
    let base = ModelConfig {
        vocab_size: vocab.size(),
        max_seq_len: args.max_seq_len,
        cond_dim: if args.mode == Mode::Text { args.embedding_dim } else { 0 },
        ..ModelConfig::default()
    };
    let trained = train::run(ctx, &args.training, args.model.apply(base), vocab.hash(), &data)?;
    let mut summary = trained.summary();
    summary["train_sequences"] = json!(data.len());
    summary["skipped_without_caption"] = json!(skipped);
    if let Some(valid) = &args.valid {
        let (vdata, _) = examples(ctx, valid, args, &vocab, embedder.as_deref())?;
        if !vdata.is_empty() {
            summary["valid_loss"] = json!(batch_loss(&trained.model, &vdata)?);
        }
    }
    let extras = serde_json::to_value(GenExtras { mode: Some(args.mode), embedder: embedder.map(|e| e.provider_id()) })?;
    trained.checkpoint(vocab.hash(), args.training.seed, extras).save(&args.out)?;
    let mut m = RunManifest::new("train-gen", args);
    m.seed = Some(args.training.seed);
    m.inputs.push(args.train.display().to_string());
    m.outputs.push(args.out.display().to_string());
    m.vocab_hash = Some(vocab.hash().to_string());
    m.summary = json!({ "result": summary, "loss_curve": trained.losses });
    m.write(ctx, &args.out)?;
    report(ctx, &summary);
    Ok(())
}

fn parse_genre(s: &str) -> Result<Genre, String> {
    Genre::from_label(s).ok_or_else(|| {
        format!("unknown genre; expected one of: {}", Genre::ALL.map(|g| g.label()).join(", "))
    })
}

fn parse_complexity(s: &str) -> Result<Complexity, String> {
    Complexity::from_label(s).ok_or_else(|| "expected beginner, intermediate or advanced".to_string())
}

#[derive(Args, Debug, Serialize)]
pub struct GenerateArgs {
    /// Generator checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Conditioning mode; defaults to the mode the checkpoint was trained in.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Genre tag (repeatable), e.g. "jazz & blues".
    #[arg(long, value_parser = parse_genre)]
    pub genre: Vec<Genre>,
    #[arg(long)]
    pub composer: Option<String>,
    #[arg(long, value_parser = parse_complexity)]
    pub complexity: Option<Complexity>,
    /// Comma-separated General MIDI programs, 128 for drums.
    #[arg(long, value_delimiter = ',', value_parser = clap::value_parser!(u8).range(0..=DRUM_PROGRAM as i64))]
    pub instruments: Option<Vec<u8>>,
    /// Text prompt (text mode).
    #[arg(long)]
    pub prompt: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    #[arg(long, default_value_t = 0.95)]
    pub top_p: f64,
    /// Budget for the whole sequence, prompt included.
    #[arg(long, default_value_t = 1024)]
    pub max_tokens: usize,
    /// Output score, .mid or .json.
    #[arg(long)]
    pub out: PathBuf,
    /// Also write the token sequence as JSON.
    #[arg(long)]
    pub emit_tokens: Option<PathBuf>,
    /// Number of samples; seeds seed..seed+n, files suffixed `_<i>`.
    #[arg(long, default_value_t = 1)]
    pub num_samples: usize,
    #[arg(long, default_value = "stub")]
    pub embedder: String,
}

fn numbered(path: &Path, i: usize, n: usize) -> PathBuf {
    if n == 1 {
        return path.to_path_buf();
    }
    let stem = path.file_stem().unwrap_or_default().to_string_lossy();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{i}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{i}"),
    };
    path.with_file_name(name)
}

#[derive(Serialize)]
struct TokenFile<'a> {
    tokens: &'a [u32],
    prompt_len: usize,
    stop: metascore_models::StopReason,
    mode: Mode,
    sampler: &'a SamplerConfig,
}

fn validate(args: &GenerateArgs, mode: Mode) -> Result<SamplerConfig> {
    if !(args.temperature.is_finite() && args.temperature > 0.0) {
        return Err(usage("--temperature", "must be positive"));
    }
    if !(args.top_p > 0.0 && args.top_p <= 1.0) {
        return Err(usage("--top-p", "must be in (0, 1]"));
    }
    if args.num_samples == 0 {
        return Err(usage("--num-samples", "must be at least 1"));
    }
    match mode {
        Mode::Tags if args.prompt.is_some() => return Err(usage("--prompt", "only valid with --mode text")),
        Mode::Text => {
            if args.prompt.is_none() {
                return Err(usage("--prompt", "required with --mode text"));
            }
            let tag_flags = [
                ("--genre", !args.genre.is_empty()),
                ("--composer", args.composer.is_some()),
                ("--complexity", args.complexity.is_some()),
                ("--instruments", args.instruments.is_some()),
            ];
            if let Some((flag, _)) = tag_flags.iter().find(|(_, set)| *set) {
                return Err(usage(flag, "tag flags are only valid with --mode tags"));
            }
        }
        Mode::Tags => {}
    }
    Ok(SamplerConfig { temperature: args.temperature, top_p: args.top_p, max_tokens: args.max_tokens, seed: args.seed })
}

pub fn generate(ctx: &Ctx, args: &GenerateArgs) -> Result<()> {
    let vocab = load_vocab(args.vocab.as_deref())?;
    let ckpt = ModelCheckpoint::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let extras: GenExtras = serde_json::from_value(ckpt.extras.clone()).unwrap_or_default();
    let trained_mode = extras.mode.unwrap_or(if ckpt.config.cond_dim > 0 { Mode::Text } else { Mode::Tags });
    let mode = args.mode.unwrap_or(trained_mode);
    let sampler = validate(args, mode)?;
    let tags = TagSet {
        genres: args.genre.clone(),
        composer: args.composer.as_ref().map(|c| c.trim().to_lowercase()),
        complexity: args.complexity,
        instruments: args.instruments.iter().flatten().copied().collect(),
    };
    if let Some(c) = &tags.composer {
        if vocab.composer_index(c).is_none() {
            return Err(usage("--composer", format!("`{c}` is not in the vocabulary")));
        }
    }
    let model = load_generator(&ckpt, &vocab)?;
    let embedder = match mode {
        Mode::Text => {
            let e = make_embedder(&args.embedder, ckpt.config.cond_dim)?;
            if let Some(trained_with) = &extras.embedder {
                if *trained_with != e.provider_id() {
                    eprintln!("note: model was trained with embedder {trained_with}, generating with {}", e.provider_id());
                }
            }
            Some(e)
        }
        Mode::Tags => None,
    };
    let n = args.num_samples;
    let mut outputs = Vec::with_capacity(n);
    let mut samples = Vec::with_capacity(n);
    for i in 0..n {
        let cfg = SamplerConfig { seed: args.seed.wrapping_add(i as u64), ..sampler.clone() };
        let g: Generation = match (&embedder, &args.prompt) {
            (Some(e), Some(prompt)) => generate_text(&model, &vocab, prompt, e.as_ref(), &cfg)?,
            _ => generate_tags(&model, &vocab, &tags, &cfg)?,
        };
        let out = numbered(&args.out, i, n);
        let bytes =
            if is_json(&out) { (score_to_json(&g.score) + "\n").into_bytes() } else { write_midi(&g.score, DEFAULT_TICKS_PER_QUARTER)? };
        write_file(ctx, &out, bytes)?;
        outputs.push(out.display().to_string());
        if let Some(tp) = &args.emit_tokens {
            let tp = numbered(tp, i, n);
            let file = TokenFile { tokens: g.tokens.ids(), prompt_len: g.prompt_len, stop: g.stop, mode, sampler: &cfg };
            write_file(ctx, &tp, serde_json::to_string(&file)? + "\n")?;
            outputs.push(tp.display().to_string());
        }
        let programs: BTreeSet<u8> = g.score.programs();
        samples.push(json!({
            "out": out.display().to_string(),
            "seed": cfg.seed,
            "tokens": g.tokens.len(),
            "notes": g.score.notes.len(),
            "stop": g.stop,
            "instruments_within_request": (mode == Mode::Tags && !tags.instruments.is_empty())
                .then(|| programs.is_subset(&tags.instruments)),
        }));
    }
    let summary = json!({ "mode": mode, "sampler": sampler, "samples": samples });
    let mut m = RunManifest::new("generate", args);
    m.seed = Some(args.seed);
    m.inputs.push(args.model.display().to_string());
    m.outputs = outputs;
    m.vocab_hash = Some(vocab.hash().to_string());
    m.summary = summary.clone();
    m.write(ctx, &args.out)?;
    report(ctx, &summary);
    Ok(())
}
