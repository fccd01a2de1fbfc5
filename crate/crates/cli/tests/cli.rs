use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use metascore_core::{Note, Score, TimeSignature};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;
use tempfile::TempDir;

fn metascore(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_metascore")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> String {
    let out = metascore(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}\n{}",
        String::from_utf8_lossy(&out.stderr),
        String::from_utf8_lossy(&out.stdout)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn random_score(rng: &mut ChaCha8Rng) -> Score {
    let programs = [0u8, 33, 128];
    let notes = (0..rng.random_range(5..30))
        .map(|_| {
            let program = programs[rng.random_range(0..3)];
            let (beat, pos) = (rng.random_range(0..24), rng.random_range(0..12));
            if program == 128 {
                Note::drum(beat, pos, rng.random_range(35..50)).unwrap()
            } else {
                Note::new(beat, pos, rng.random_range(40..90), rng.random_range(1..48), program).unwrap()
            }
        })
        .collect();
    let mut score = Score::new(notes);
    score.time_signatures = vec![TimeSignature::new(0, 3, 4).unwrap()];
    score
}

/// A directory of JSON scores plus a raw manifest describing them.
fn corpus(n: usize) -> (TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("raw")).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let genres = ["jazz", "rock", "classical", "hip hop"];
    let mut lines = Vec::new();
    for i in 0..n {
        let rel = format!("raw/s{i}.json");
        fs::write(dir.path().join(&rel), serde_json::to_string(&random_score(&mut rng)).unwrap()).unwrap();
        let meta = serde_json::json!({ "genres": [genres[i % 4]], "complexity": i % 3 });
        lines.push(serde_json::json!({ "id": format!("s{i}"), "score_path": rel, "metadata": meta }).to_string());
    }
    let manifest = dir.path().join("raw.jsonl");
    fs::write(&manifest, lines.join("\n") + "\n").unwrap();
    (dir, manifest)
}

fn prepared(n: usize) -> (TempDir, PathBuf) {
    let (dir, raw) = corpus(n);
    let ingested = dir.path().join("ingested.jsonl");
    let norm = dir.path().join("norm.jsonl");
    ok(&["ingest", "--in", p(&raw), "--out", p(&ingested)]);
    ok(&["normalize", "--in", p(&ingested), "--out", p(&norm)]);
    (dir, norm)
}

#[test]
fn tokenize_detokenize_round_trip() {
    let (dir, norm) = prepared(12);
    let d = dir.path();
    ok(&["tokenize", "--in", p(&norm), "--out", p(&d.join("t1.jsonl"))]);
    ok(&["detokenize", "--in", p(&d.join("t1.jsonl")), "--out", p(&d.join("back.jsonl")), "--strict"]);
    ok(&["tokenize", "--in", p(&d.join("back.jsonl")), "--out", p(&d.join("t2.jsonl"))]);
    let a = fs::read_to_string(d.join("t1.jsonl")).unwrap();
    let b = fs::read_to_string(d.join("t2.jsonl")).unwrap();
    assert_eq!(a.lines().count(), 12);
    assert_eq!(a, b);
    assert!(d.join("t1.jsonl.manifest.json").exists());
}

#[test]
fn ingest_reports_and_drops_empty_scores() {
    let (dir, raw) = corpus(3);
    fs::write(dir.path().join("raw/s1.json"), serde_json::to_string(&Score::default()).unwrap()).unwrap();
    let out = dir.path().join("ing.jsonl");
    let summary: Value = serde_json::from_str(&ok(&["--json", "ingest", "--in", p(&raw), "--out", p(&out)])).unwrap();
    assert_eq!(summary["kept"], 2);
    assert_eq!(summary["dropped"], 1);
    let manifest: Value = serde_json::from_str(&fs::read_to_string(dir.path().join("ing.jsonl.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["subcommand"], "ingest");
    assert_eq!(manifest["summary"]["dropped"]["s1"], "empty");
}

#[test]
fn existing_output_needs_force() {
    let (dir, norm) = prepared(3);
    let out = dir.path().join("t.jsonl");
    ok(&["tokenize", "--in", p(&norm), "--out", p(&out)]);
    let again = metascore(&["tokenize", "--in", p(&norm), "--out", p(&out)]);
    assert_eq!(again.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&again.stderr).contains("--force"));
    ok(&["--force", "tokenize", "--in", p(&norm), "--out", p(&out)]);
}

#[test]
fn usage_errors_exit_two_with_json_detail() {
    let out = metascore(&["--json", "tokenize", "--out", "x.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "usage");

    let out = metascore(&["frobnicate"]);
    assert_eq!(out.status.code(), Some(2));
    assert_eq!(metascore(&["--help"]).status.code(), Some(0));
}

#[test]
fn domain_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    let out = metascore(&["--json", "generate", "--model", p(&dir.path().join("missing.ckpt")), "--out", p(&dir.path().join("g.mid"))]);
    assert_eq!(out.status.code(), Some(1));
    let err: Value = serde_json::from_str(String::from_utf8_lossy(&out.stderr).trim()).unwrap();
    assert_eq!(err["error"]["kind"], "domain");
}

#[test]
fn config_file_supplies_missing_flags() {
    let (dir, norm) = prepared(4);
    let d = dir.path();
    let cfg = d.join("cfg.json");
    fs::write(&cfg, serde_json::json!({ "out_dir": p(&d.join("from_cfg")), "seed": 3 }).to_string()).unwrap();
    ok(&["--config", p(&cfg), "splits", "--in", p(&norm)]);
    assert!(d.join("from_cfg/train.jsonl").exists());
    ok(&["--config", p(&cfg), "splits", "--in", p(&norm), "--out-dir", p(&d.join("from_flag"))]);
    assert!(d.join("from_flag/train.jsonl").exists());
    assert_eq!(
        fs::read_to_string(d.join("from_cfg/train.jsonl")).unwrap(),
        fs::read_to_string(d.join("from_flag/train.jsonl")).unwrap()
    );
}

#[test]
fn render_converts_between_formats() {
    let dir = tempfile::tempdir().unwrap();
    let score = random_score(&mut ChaCha8Rng::seed_from_u64(1));
    let json = dir.path().join("a.json");
    fs::write(&json, serde_json::to_string(&score).unwrap()).unwrap();
    ok(&["render", "--in", p(&json), "--out", p(&dir.path().join("a.mid"))]);
    ok(&["render", "--in", p(&dir.path().join("a.mid")), "--out", p(&dir.path().join("b.json"))]);
    let back: Score = serde_json::from_str(&fs::read_to_string(dir.path().join("b.json")).unwrap()).unwrap();
    assert_eq!(back, metascore_core::canonicalize(score).unwrap());
}

#[test]
fn train_generate_tag_and_evaluate() {
    let (dir, norm) = prepared(10);
    let d = dir.path();
    let small = ["--d-model", "8", "--layers", "1", "--heads", "1", "--d-ff", "8", "--log-every", "0"];
    let gen = d.join("gen.ckpt");
    let mut args = vec!["train-gen", "--train", p(&norm), "--out", p(&gen), "--steps", "3", "--max-seq-len", "200"];
    args.extend(small);
    ok(&args);

    let generate = |name: &str| {
        let out = d.join(name);
        ok(&[
            "generate", "--model", p(&gen), "--genre", "jazz & blues", "--instruments", "0,33", "--seed", "5",
            "--max-tokens", "60", "--out", p(&out), "--emit-tokens", p(&d.join(format!("{name}.tokens.json"))),
        ]);
        fs::read(out).unwrap()
    };
    assert_eq!(generate("g1.mid"), generate("g2.mid"));

    let bad = metascore(&["generate", "--model", p(&gen), "--genre", "polka", "--out", p(&d.join("g3.mid"))]);
    assert_eq!(bad.status.code(), Some(2));
    let bad = metascore(&["generate", "--model", p(&gen), "--prompt", "calm", "--out", p(&d.join("g3.mid"))]);
    assert_eq!(bad.status.code(), Some(2));

    let tagger = d.join("tagger.ckpt");
    let mut args = vec!["train-tagger", "--train", p(&norm), "--valid", p(&norm), "--out", p(&tagger), "--steps", "2"];
    args.extend(small);
    ok(&args);
    let tagged = d.join("tagged.jsonl");
    ok(&["tag", "--model", p(&tagger), "--in", p(&norm), "--out", p(&tagged), "--all"]);
    let first: Value = serde_json::from_str(fs::read_to_string(&tagged).unwrap().lines().next().unwrap()).unwrap();
    assert_eq!(first["metadata"]["genre_source"], "tagger");

    let report: Value = serde_json::from_str(&ok(&["--json", "evaluate", "--in", p(&norm)])).unwrap();
    for metric in ["pitch_class_entropy", "scale_consistency", "groove_consistency"] {
        assert_eq!(report[metric]["n"], 10, "{metric}");
        assert!(report[metric]["ci95"].as_f64().unwrap() >= 0.0);
    }
}

#[test]
fn text_mode_generation_is_deterministic() {
    let (dir, norm) = prepared(6);
    let d = dir.path();
    let captioned = d.join("cap.jsonl");
    ok(&["caption", "--in", p(&norm), "--out", p(&captioned)]);
    let gen = d.join("text.ckpt");
    ok(&[
        "train-gen", "--mode", "text", "--embedding-dim", "16", "--train", p(&captioned), "--out", p(&gen),
        "--steps", "2", "--max-seq-len", "200", "--d-model", "8", "--layers", "1", "--heads", "1", "--d-ff", "8",
        "--log-every", "0",
    ]);
    let run = |name: &str| {
        let out = d.join(name);
        ok(&["generate", "--model", p(&gen), "--prompt", "a calm piano waltz", "--max-tokens", "40", "--out", p(&out)]);
        fs::read(out).unwrap()
    };
    assert_eq!(run("a.json"), run("b.json"));
    let tags_flag = metascore(&["generate", "--model", p(&gen), "--genre", "jazz & blues", "--out", p(&d.join("c.json"))]);
    assert_eq!(tags_flag.status.code(), Some(2));
}
