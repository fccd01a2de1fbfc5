use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, ValueEnum};
use metascore_core::caption::{caption as make_caption, CaptionBackend, CaptionRecord, HttpCompletion};
use metascore_core::metadata::ManifestEntry;
use metascore_core::TagSet;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::util::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Backend {
    Template,
    Llm,
}

#[derive(Args, Debug, Serialize)]
pub struct CaptionArgs {
    /// Normalized manifest JSONL.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    /// Manifest with `caption` filled for accepted captions.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = Backend::Template)]
    pub backend: Backend,
    /// Also write every caption record, rejected ones included.
    #[arg(long)]
    pub records: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
}

pub fn caption(ctx: &Ctx, args: &CaptionArgs) -> Result<()> {
    ensure_writable(ctx, &args.out)?;
    let vocab = load_vocab(args.vocab.as_deref())?;
    let http = match args.backend {
        Backend::Llm => Some(HttpCompletion::from_env()?),
        Backend::Template => None,
    };
    let backend = match &http {
        Some(h) => CaptionBackend::Llm(h),
        None => CaptionBackend::Template,
    };
    let mut entries: Vec<ManifestEntry> = read_lines(&args.input)?;
    let records: Vec<Result<CaptionRecord>> = in_pool(ctx.jobs, || {
        entries
            .par_iter()
            .map(|e| {
                let (score, _) = load_entry_score(&args.input, e)?;
                let tags = TagSet::from_metadata(&e.metadata, &score, &vocab);
                Ok(make_caption(&e.id, &e.metadata, &tags, score.time_signatures.first(), &backend)?)
            })
            .collect()
    })?;
    let records: Vec<CaptionRecord> = records.into_iter().collect::<Result<_>>()?;
    let mut rejected: BTreeMap<String, usize> = BTreeMap::new();
    for (e, r) in entries.iter_mut().zip(&records) {
        e.score_path = absolute(&resolve(&args.input, &e.score_path));
        match r.rejected_reason {
            None => e.caption = Some(r.caption.clone()),
            Some(reason) => {
                e.caption = None;
                *rejected.entry(serde_json::to_value(reason)?.as_str().unwrap_or("").to_string()).or_default() += 1;
            }
        }
    }
    write_lines(ctx, &args.out, &entries)?;
    if let Some(p) = &args.records {
        write_lines(ctx, p, &records)?;
    }
    let accepted = records.iter().filter(|r| r.is_accepted()).count();
    let summary = json!({ "entries": records.len(), "accepted": accepted, "rejected": rejected });
    let mut m = RunManifest::new("caption", args);
    m.inputs.push(args.input.display().to_string());
    m.outputs.push(args.out.display().to_string());
    m.outputs.extend(args.records.iter().map(|p| p.display().to_string()));
    m.summary = summary.clone();
    m.write(ctx, &args.out)?;
    report(ctx, &summary);
    Ok(())
}
