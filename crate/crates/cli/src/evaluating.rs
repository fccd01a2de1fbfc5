use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Result};
use clap::Args;
use metascore_core::io::load_score;
use metascore_core::metadata::ManifestEntry;
use metascore_core::metrics::{
    aggregate, MetricReport, Summary, GROOVE_CONSISTENCY, PITCH_CLASS_ENTROPY, SCALE_CONSISTENCY,
};
use metascore_core::MetricError;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::util::*;

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    /// Directory of .mid/.midi/.json scores, or a manifest JSONL.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: PathBuf,
    /// Also write the metrics JSON here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn score_paths(input: &Path) -> Result<Vec<PathBuf>> {
    if input.is_dir() {
        let mut paths: Vec<PathBuf> = fs::read_dir(input)?
            .map(|e| e.map(|e| e.path()))
            .collect::<std::io::Result<Vec<_>>>()?
            .into_iter()
            .filter(|p| {
                p.is_file()
                    && p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| ["mid", "midi", "json"].contains(&e.to_ascii_lowercase().as_str()))
                    && !p.to_string_lossy().ends_with(".manifest.json")
            })
            .collect();
        paths.sort();
        Ok(paths)
    } else {
        let entries: Vec<ManifestEntry<serde_json::Value>> = read_lines(input)?;
        Ok(entries.iter().map(|e| resolve(input, &e.score_path)).collect())
    }
}

fn value_of(r: &MetricReport, name: &str) -> Option<f64> {
    match name {
        PITCH_CLASS_ENTROPY => r.pitch_class_entropy,
        SCALE_CONSISTENCY => r.scale_consistency,
        GROOVE_CONSISTENCY => r.groove_consistency,
        _ => None,
    }
}

/// `{metric: {mean, ci95, n, n_undefined}}`; metrics with too few defined
/// values get null mean and half-width plus an `error`.
pub fn metrics_json(summaries: &BTreeMap<&'static str, Result<Summary, MetricError>>, reports: &[MetricReport]) -> serde_json::Value {
    let mut out = serde_json::Map::new();
    for (name, s) in summaries {
        let value = match s {
            Ok(s) => json!({ "mean": s.mean, "ci95": s.ci95, "n": s.n, "n_undefined": s.n_undefined }),
            Err(e) => {
                let defined = reports.iter().filter(|r| value_of(r, name).is_some()).count();
                json!({
                    "mean": null,
                    "ci95": null,
                    "n": defined,
                    "n_undefined": reports.len() - defined,
                    "error": e.to_string(),
                })
            }
        };
        out.insert(name.to_string(), value);
    }
    serde_json::Value::Object(out)
}

pub fn evaluate(ctx: &Ctx, args: &EvaluateArgs) -> Result<()> {
    let paths = score_paths(&args.input)?;
    if paths.is_empty() {
        bail!("no scores found in {}", args.input.display());
    }
    let reports: Vec<Result<MetricReport>> = in_pool(ctx.jobs, || {
        paths.par_iter().map(|p| Ok(MetricReport::of(&load_score(p)?.0))).collect()
    })?;
    let reports: Vec<MetricReport> = reports.into_iter().collect::<Result<_>>()?;
    let summaries = aggregate(&reports);
    let value = metrics_json(&summaries, &reports);
    if let Some(out) = &args.out {
        write_file(ctx, out, serde_json::to_string_pretty(&value)? + "\n")?;
        let mut m = RunManifest::new("evaluate", args);
        m.inputs.push(args.input.display().to_string());
        m.outputs.push(out.display().to_string());
        m.summary = json!({ "scores": reports.len() });
        m.write(ctx, out)?;
    }
    if ctx.json {
        println!("{}", serde_json::to_string_pretty(&value)?);
    } else {
        for (name, s) in &summaries {
            match s {
                Ok(s) => println!("{name}: {s} (n={}, undefined={})", s.n, s.n_undefined),
                Err(e) => println!("{name}: n/a ({e})"),
            }
        }
    }
    Ok(())
}
