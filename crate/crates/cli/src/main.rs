//! `metascore`: ingest → normalize → tokenize → train → generate → evaluate.

mod captioning;
mod data;
mod evaluating;
mod generating;
mod tagging;
mod train;
mod util;

use std::process::ExitCode;

use clap::error::{ContextKind, ContextValue, ErrorKind};
use clap::{Parser, Subcommand};
use serde_json::json;

use util::{Ctx, UsageError};

#[derive(Parser, Debug)]
#[command(name = "metascore", version, about = "Metadata-conditioned symbolic music toolkit")]
struct Cli {
    /// Structured JSON output and errors.
    #[arg(long, global = true)]
    json: bool,
    /// Overwrite existing outputs.
    #[arg(long, global = true)]
    force: bool,
    /// Worker threads for per-file and per-example work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// JSON object of flag values (keys are long flag names); flags given on
    /// the command line win.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<std::path::PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Write the token vocabulary.
    Vocab(data::VocabArgs),
    /// Import MIDI/JSON scores and drop unusable files.
    Ingest(data::IngestArgs),
    /// Normalize composer names, genres and other metadata.
    Normalize(data::NormalizeArgs),
    /// Split a manifest 90/5/5 into train, valid and test.
    Splits(data::SplitsArgs),
    /// Encode manifest entries as token sequences.
    Tokenize(data::TokenizeArgs),
    /// Decode token sequences back into scores and a manifest.
    Detokenize(data::DetokenizeArgs),
    /// Convert a score between MIDI and JSON.
    Render(data::RenderArgs),
    /// Train the multi-label genre tagger.
    TrainTagger(tagging::TrainTaggerArgs),
    /// Tune per-genre decision thresholds on validation data.
    TuneThresholds(tagging::TuneArgs),
    /// Fill missing genres with tagger predictions.
    Tag(tagging::TagArgs),
    /// Train a tag- or text-conditioned generator.
    TrainGen(generating::TrainGenArgs),
    /// Sample scores from a generator.
    Generate(generating::GenerateArgs),
    /// Write pseudo captions from metadata.
    Caption(captioning::CaptionArgs),
    /// Objective metrics with mean and 95% confidence half-width.
    Evaluate(evaluating::EvaluateArgs),
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let ctx = Ctx { json: cli.json, force: cli.force, jobs: cli.jobs.max(1) };
    match &cli.command {
        Command::Vocab(a) => data::vocab(&ctx, a),
        Command::Ingest(a) => data::ingest(&ctx, a),
        Command::Normalize(a) => data::normalize(&ctx, a),
        Command::Splits(a) => data::splits(&ctx, a),
        Command::Tokenize(a) => data::tokenize(&ctx, a),
        Command::Detokenize(a) => data::detokenize(&ctx, a),
        Command::Render(a) => data::render(&ctx, a),
        Command::TrainTagger(a) => tagging::train_tagger(&ctx, a),
        Command::TuneThresholds(a) => tagging::tune_thresholds(&ctx, a),
        Command::Tag(a) => tagging::tag(&ctx, a),
        Command::TrainGen(a) => generating::train_gen(&ctx, a),
        Command::Generate(a) => generating::generate(&ctx, a),
        Command::Caption(a) => captioning::caption(&ctx, a),
        Command::Evaluate(a) => evaluating::evaluate(&ctx, a),
    }
}

fn fail(json_errors: bool, kind: &str, flag: Option<&str>, message: &str) {
    if json_errors {
        let err = json!({ "error": { "kind": kind, "flag": flag, "message": message } });
        eprintln!("{err}");
    } else {
        eprintln!("error: {message}");
    }
}

fn main() -> ExitCode {
    let raw: Vec<std::ffi::OsString> = std::env::args_os().collect();
    let json_errors = raw.iter().any(|a| a == "--json");
    let args = match util::merge_config(raw) {
        Ok(a) => a,
        Err(e) => {
            let flag = e.downcast_ref::<UsageError>().map(|u| u.flag.clone());
            fail(json_errors, "usage", flag.as_deref(), &format!("{e:#}"));
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            if json_errors {
                let flag = match e.get(ContextKind::InvalidArg) {
                    Some(ContextValue::String(s)) => Some(s.clone()),
                    Some(ContextValue::Strings(v)) => Some(v.join(", ")),
                    _ => None,
                };
                let message = e.render().to_string();
                fail(true, "usage", flag.as_deref(), message.trim());
            } else {
                let _ = e.print();
            }
            return ExitCode::from(2);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => match e.downcast_ref::<UsageError>() {
            Some(u) => {
                fail(cli.json, "usage", Some(&u.flag), &u.to_string());
                ExitCode::from(2)
            }
            None => {
                fail(cli.json, "domain", None, &format!("{e:#}"));
                ExitCode::from(1)
            }
        },
    }
}
