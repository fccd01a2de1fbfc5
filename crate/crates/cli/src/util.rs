use std::ffi::OsString;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use metascore_core::io::{load_score, read_jsonl, write_jsonl};
use metascore_core::metadata::ManifestEntry;
use metascore_core::midi::MidiImportReport;
use metascore_core::tokenizer::build_vocab;
use metascore_core::{Score, VocabSpec};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Flags shared by every subcommand.
#[derive(Debug, Clone, Copy)]
pub struct Ctx {
    pub json: bool,
    pub force: bool,
    pub jobs: usize,
}

/// Bad or conflicting flags; exits with status 2.
#[derive(Debug)]
pub struct UsageError {
    pub flag: String,
    pub message: String,
}

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.flag, self.message)
    }
}

impl std::error::Error for UsageError {}

pub fn usage(flag: &str, message: impl Into<String>) -> anyhow::Error {
    UsageError { flag: flag.to_string(), message: message.into() }.into()
}

/// Inserts `--key value` pairs from a JSON config file after the subcommand
/// name, for every key not already given on the command line.
pub fn merge_config(args: Vec<OsString>) -> Result<Vec<String>> {
    let mut args: Vec<String> = args
        .into_iter()
        .map(|a| a.into_string().map_err(|a| usage("arguments", format!("not valid UTF-8: {a:?}"))))
        .collect::<Result<_>>()?;
    let mut config_path = None;
    let mut subcommand = None;
    let mut i = 1;
    while i < args.len() {
        let a = &args[i];
        if a == "--config" || a == "--jobs" {
            if a == "--config" {
                config_path = args.get(i + 1).cloned();
            }
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config_path = Some(p.to_string());
        } else if !a.starts_with('-') && subcommand.is_none() {
            subcommand = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(sub)) = (config_path, subcommand) else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| usage("--config", format!("{path}: {e}")))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| usage("--config", format!("{path}: {e}")))?;
    let serde_json::Value::Object(map) = value else {
        return Err(usage("--config", format!("{path}: expected a JSON object")));
    };
    let mut extra = Vec::new();
    for (key, value) in map {
        let flag = format!("--{}", key.replace('_', "-"));
        if flag == "--config" || args.iter().any(|a| *a == flag || a.starts_with(&format!("{flag}="))) {
            continue;
        }
        match value {
            serde_json::Value::Null | serde_json::Value::Bool(false) => {}
            serde_json::Value::Bool(true) => extra.push(flag),
            serde_json::Value::String(s) => extra.extend([flag, s]),
            serde_json::Value::Number(n) => extra.extend([flag, n.to_string()]),
            serde_json::Value::Array(items) => {
                let joined = items
                    .iter()
                    .map(|v| v.as_str().map(str::to_string).unwrap_or_else(|| v.to_string()))
                    .collect::<Vec<_>>()
                    .join(",");
                extra.extend([flag, joined]);
            }
            serde_json::Value::Object(_) => {
                return Err(usage("--config", format!("key `{key}` must be a scalar or a list")))
            }
        }
    }
    args.splice(sub + 1..sub + 1, extra);
    Ok(args)
}

/// Refuses to replace an existing file unless `--force` was given.
pub fn ensure_writable(ctx: &Ctx, path: &Path) -> Result<()> {
    if path.exists() && !ctx.force {
        bail!("{} exists; pass --force to overwrite", path.display());
    }
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    Ok(())
}

pub fn write_file(ctx: &Ctx, path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    ensure_writable(ctx, path)?;
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

pub fn write_lines<T: Serialize>(ctx: &Ctx, path: &Path, items: &[T]) -> Result<()> {
    ensure_writable(ctx, path)?;
    write_jsonl(path, items).with_context(|| format!("writing {}", path.display()))
}

pub fn read_lines<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    read_jsonl(path).with_context(|| format!("reading {}", path.display()))
}

pub fn load_vocab(path: Option<&Path>) -> Result<VocabSpec> {
    match path {
        None => Ok(build_vocab()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            VocabSpec::from_json(&text).with_context(|| format!("loading vocabulary {}", p.display()))
        }
    }
}

/// Resolves `path` against the directory of the manifest that mentions it.
pub fn resolve(manifest: &Path, path: &str) -> PathBuf {
    let p = Path::new(path);
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        manifest.parent().unwrap_or(Path::new("")).join(p)
    }
}

pub fn absolute(path: &Path) -> String {
    fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf()).display().to_string()
}

pub fn load_entry_score<M>(manifest: &Path, entry: &ManifestEntry<M>) -> Result<(Score, MidiImportReport)> {
    load_score(&resolve(manifest, &entry.score_path)).with_context(|| format!("entry `{}`", entry.id))
}

/// Runs `f` on a pool of `jobs` threads.
pub fn in_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build()?;
    Ok(pool.install(f))
}

/// One record per artifact-producing run, written next to its main output.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub config: serde_json::Value,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
    pub tool_version: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vocab_hash: Option<String>,
    pub summary: serde_json::Value,
}

impl RunManifest {
    pub fn new(subcommand: &str, config: &impl Serialize) -> Self {
        RunManifest {
            subcommand: subcommand.to_string(),
            config: serde_json::to_value(config).expect("arguments serialize"),
            seed: None,
            inputs: Vec::new(),
            outputs: Vec::new(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            vocab_hash: None,
            summary: serde_json::Value::Null,
        }
    }

    pub fn path_for(output: &Path) -> PathBuf {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".manifest.json");
        output.with_file_name(name)
    }

    /// Writes `<output>.manifest.json` and returns its path.
    pub fn write(&self, ctx: &Ctx, output: &Path) -> Result<PathBuf> {
        let path = Self::path_for(output);
        let text = serde_json::to_string_pretty(self)? + "\n";
        write_file(&Ctx { force: true, ..*ctx }, &path, text)?;
        Ok(path)
    }
}

/// Prints the run summary: JSON with `--json`, otherwise `key: value` lines.
pub fn report(ctx: &Ctx, summary: &serde_json::Value) {
    if ctx.json {
        println!("{}", serde_json::to_string_pretty(summary).expect("summary serializes"));
        return;
    }
    if let serde_json::Value::Object(map) = summary {
        for (k, v) in map {
            match v {
                serde_json::Value::String(s) => println!("{k}: {s}"),
                other => println!("{k}: {other}"),
            }
        }
    }
}
