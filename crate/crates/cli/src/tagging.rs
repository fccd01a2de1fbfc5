//! train-tagger, tune-thresholds, tag.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use metascore_core::metadata::ManifestEntry;
use metascore_core::{Genre, GenreSource, Score, VocabSpec};
use metascore_models::tagger::{micro_scores, tagger_config, training_example, MicroScores};
use metascore_models::Tagger;
use metascore_nn::ModelCheckpoint;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::train::{self, ModelArgs, TrainArgs};
use crate::util::*;

type Labeled = Vec<(Score, Vec<Genre>)>;

/// Entries with genre labels, paired with their scores.
fn labeled(ctx: &Ctx, manifest: &Path) -> Result<Labeled> {
    let entries: Vec<ManifestEntry> = read_lines(manifest)?;
    let with_labels: Vec<&ManifestEntry> = entries.iter().filter(|e| !e.metadata.genre_tags.is_empty()).collect();
    let loaded: Vec<Result<(Score, Vec<Genre>)>> = in_pool(ctx.jobs, || {
        with_labels
            .par_iter()
            .map(|e| Ok((load_entry_score(manifest, e)?.0, e.metadata.genre_tags.clone())))
            .collect()
    })?;
    loaded.into_iter().collect()
}

fn scores_json(s: &MicroScores) -> serde_json::Value {
    json!({ "precision": s.precision, "recall": s.recall, "f1": s.f1, "tp": s.tp, "fp": s.fp, "fn": s.fn_ })
}

fn predict_all(ctx: &Ctx, tagger: &Tagger, set: &Labeled, vocab: &VocabSpec) -> Result<MicroScores> {
    let predicted: Vec<Vec<Genre>> = in_pool(ctx.jobs, || {
        set.par_iter().map(|(s, _)| tagger.predict(s, vocab).map(|o| o.predicted)).collect::<Result<_, _>>()
    })??;
    let truth: Vec<Vec<Genre>> = set.iter().map(|(_, g)| g.clone()).collect();
    Ok(micro_scores(&predicted, &truth))
}

#[derive(Args, Debug, Serialize)]
pub struct TrainTaggerArgs {
    /// Training manifest; entries without genres are skipped.
    #[arg(long)]
    pub train: PathBuf,
    /// Validation manifest for threshold tuning.
    #[arg(long)]
    pub valid: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    #[serde(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    #[serde(flatten)]
    pub training: TrainArgs,
}

pub fn train_tagger(ctx: &Ctx, args: &TrainTaggerArgs) -> Result<()> {
    ensure_writable(ctx, &args.out)?;
    let vocab = load_vocab(args.vocab.as_deref())?;
    let train_set = labeled(ctx, &args.train)?;
    if train_set.is_empty() {
        bail!("{} has no entries with genre labels", args.train.display());
    }
    let data: Vec<_> = train_set.iter().map(|(s, g)| training_example(s, g, &vocab)).collect();
    let config = args.model.apply(tagger_config(&vocab));
    let trained = train::run(ctx, &args.training, config, vocab.hash(), &data)?;
    let mut tagger = Tagger::new(trained.model.clone(), &vocab);
    let mut summary = trained.summary();
    summary["train_examples"] = json!(data.len());
    if let Some(valid) = &args.valid {
        let valid_set = labeled(ctx, valid)?;
        tagger.tune(&valid_set, &vocab)?;
        summary["thresholds"] = json!(tagger.thresholds);
        summary["valid"] = scores_json(&predict_all(ctx, &tagger, &valid_set, &vocab)?);
    }
    let extras = tagger.to_checkpoint(args.training.seed).extras;
    trained.checkpoint(vocab.hash(), args.training.seed, extras).save(&args.out)?;
    let mut m = RunManifest::new("train-tagger", args);
    m.seed = Some(args.training.seed);
    m.inputs.push(args.train.display().to_string());
    m.inputs.extend(args.valid.iter().map(|p| p.display().to_string()));
    m.outputs.push(args.out.display().to_string());
    m.vocab_hash = Some(vocab.hash().to_string());
    m.summary = json!({ "result": summary, "loss_curve": trained.losses });
    m.write(ctx, &args.out)?;
    report(ctx, &summary);
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct TuneArgs {
    /// Tagger checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Validation manifest.
    #[arg(long)]
    pub valid: PathBuf,
    /// Held-out manifest to report micro precision/recall/F1 on.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Checkpoint with the tuned thresholds.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn tune_thresholds(ctx: &Ctx, args: &TuneArgs) -> Result<()> {
    ensure_writable(ctx, &args.out)?;
    let vocab = load_vocab(args.vocab.as_deref())?;
    let mut ckpt = ModelCheckpoint::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let mut tagger = Tagger::from_checkpoint(&ckpt, &vocab)?;
    let valid_set = labeled(ctx, &args.valid)?;
    tagger.tune(&valid_set, &vocab)?;
    let mut summary = json!({
        "thresholds": tagger.thresholds,
        "valid": scores_json(&predict_all(ctx, &tagger, &valid_set, &vocab)?),
    });
    if let Some(test) = &args.test {
        summary["test"] = scores_json(&predict_all(ctx, &tagger, &labeled(ctx, test)?, &vocab)?);
    }
    ckpt.extras = tagger.to_checkpoint(ckpt.rng_seed).extras;
    ckpt.save(&args.out)?;
    let mut m = RunManifest::new("tune-thresholds", args);
    m.inputs.extend([&args.model, &args.valid].iter().map(|p| p.display().to_string()));
    m.outputs.push(args.out.display().to_string());
    m.vocab_hash = Some(vocab.hash().to_string());
    m.summary = summary.clone();
    m.write(ctx, &args.out)?;
    report(ctx, &summary);
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct TagArgs {
    /// Tagger checkpoint.
    #[arg(long)]
    pub model: PathBuf,
    /// Manifest to label.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Labeled manifest.
    #[arg(long)]
    pub out: PathBuf,
    /// Relabel entries that already carry genres.
    #[arg(long)]
    pub all: bool,
}

pub fn tag(ctx: &Ctx, args: &TagArgs) -> Result<()> {
    ensure_writable(ctx, &args.out)?;
    let vocab = load_vocab(args.vocab.as_deref())?;
    let ckpt = ModelCheckpoint::load(&args.model).with_context(|| format!("loading {}", args.model.display()))?;
    let tagger = Tagger::from_checkpoint(&ckpt, &vocab)?;
    let mut entries: Vec<ManifestEntry> = read_lines(&args.input)?;
    let targets: Vec<usize> =
        (0..entries.len()).filter(|&i| args.all || entries[i].metadata.genre_tags.is_empty()).collect();
    let predictions: Vec<Result<Vec<Genre>>> = in_pool(ctx.jobs, || {
        targets
            .par_iter()
            .map(|&i| {
                let (score, _) = load_entry_score(&args.input, &entries[i])?;
                Ok(tagger.predict(&score, &vocab)?.predicted)
            })
            .collect()
    })?;
    let mut labeled = 0;
    for (&i, p) in targets.iter().zip(predictions) {
        let genres = p?;
        labeled += usize::from(!genres.is_empty());
        let e = &mut entries[i];
        e.metadata.genre_tags = genres;
        e.metadata.genre_source = GenreSource::Tagger;
    }
    for e in &mut entries {
        e.score_path = absolute(&resolve(&args.input, &e.score_path));
    }
    write_lines(ctx, &args.out, &entries)?;
    let summary = json!({ "entries": entries.len(), "tagged": targets.len(), "with_predicted_genres": labeled });
    let mut m = RunManifest::new("tag", args);
    m.inputs.extend([&args.model, &args.input].iter().map(|p| p.display().to_string()));
    m.outputs.push(args.out.display().to_string());
    m.vocab_hash = Some(vocab.hash().to_string());
    m.summary = summary.clone();
    m.write(ctx, &args.out)?;
    report(ctx, &summary);
    Ok(())
}
