use metascore_core::metadata::{filter_corpus, normalize_metadata, FilterDecision, RawMetadata, Tables};
use metascore_core::metrics::MetricReport;
use metascore_core::midi::{parse_midi, write_midi};
use metascore_core::tokenizer::{build_vocab, decode_strict, encode};
use metascore_core::{Complexity, Genre, Note, Score, TagSet, TimeSignature};

fn waltz() -> Score {
    let mut notes = Vec::new();
    for bar in 0..4u32 {
        notes.push(Note::new(3 * bar, 0, 48, 12, 32).unwrap());
        for beat in 0..3 {
            notes.push(Note::new(3 * bar + beat, 0, [60, 64, 67][beat as usize], 12, 0).unwrap());
            notes.push(Note::drum(3 * bar + beat, 0, 42).unwrap());
        }
    }
    let mut score = Score::new(notes);
    score.time_signatures = vec![TimeSignature::new(0, 3, 4).unwrap()];
    score
}

#[test]
fn midi_to_tokens_and_back() {
    let vocab = build_vocab();
    let (score, report) = parse_midi(&write_midi(&waltz(), 480).unwrap()).unwrap();
    assert_eq!(filter_corpus(&score, &report), FilterDecision::Keep);

    let raw = RawMetadata {
        genres: vec!["Classical".into()],
        composer: Some("Chopin".into()),
        complexity: Some(1),
        ..RawMetadata::default()
    };
    let metadata = normalize_metadata(&raw, &Tables::default());
    assert_eq!(metadata.genre_tags, vec![Genre::ClassicalTraditional]);
    assert_eq!(metadata.complexity, Some(Complexity::Intermediate));

    let tags = TagSet::from_metadata(&metadata, &score, &vocab);
    assert_eq!(tags.instruments.iter().copied().collect::<Vec<_>>(), vec![0, 32, 128]);
    let seq = encode(&tags, &score, &vocab).unwrap();
    let (tags_back, notes_back) = decode_strict(&seq, &vocab).unwrap();
    assert_eq!(tags_back, tags);
    assert_eq!(notes_back.notes, score.notes);

    let report = MetricReport::of(&score);
    assert_eq!(report.scale_consistency, Some(1.0));
    assert_eq!(report.groove_consistency, Some(1.0));
    let entropy = report.pitch_class_entropy.unwrap();
    // pitch classes C x8, E x4, G x4
    let expected = -(0.5f64 * 0.5f64.log2() + 2.0 * 0.25 * 0.25f64.log2());
    assert!((entropy - expected).abs() < 1e-12);
}
