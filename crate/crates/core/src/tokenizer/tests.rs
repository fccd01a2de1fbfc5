use proptest::prelude::*;

use super::*;
use crate::score::Note;

fn ev(v: &VocabSpec, e: Event) -> u32 {
    v.id(&e)
}

fn skeleton(v: &VocabSpec) -> Vec<u32> {
    vec![
        ev(v, Event::StartOfSong),
        ev(v, Event::StartOfGenre),
        ev(v, Event::TagGenre(None)),
        ev(v, Event::StartOfComposer),
        ev(v, Event::TagComposer(None)),
        ev(v, Event::StartOfComplexity),
        ev(v, Event::TagComplexity(None)),
        ev(v, Event::StartOfInstrument),
        ev(v, Event::TagInstrument(None)),
        ev(v, Event::StartOfNotes),
        ev(v, Event::EndOfSong),
    ]
}

#[test]
fn empty_tags_and_score_give_skeleton() {
    let v = build_vocab();
    let seq = encode(&TagSet::default(), &Score::default(), &v).unwrap();
    assert_eq!(seq.0, skeleton(&v));
    assert_eq!(seq.len(), 11);
}

#[test]
fn jazz_piano_note() {
    let v = build_vocab();
    let tags = TagSet::default().with_genre(Genre::JazzBlues).with_instruments([0]);
    let score = Score::new(vec![Note::new(0, 0, 60, 12, 0).unwrap()]);
    let seq = encode(&tags, &score, &v).unwrap();
    let mut expected = skeleton(&v);
    expected[2] = ev(&v, Event::TagGenre(Some(Genre::JazzBlues)));
    expected[8] = ev(&v, Event::TagInstrument(Some(0)));
    let eos = expected.pop().unwrap();
    expected.extend([
        ev(&v, Event::Beat(0)),
        ev(&v, Event::Position(0)),
        ev(&v, Event::Instrument(0)),
        ev(&v, Event::Pitch(60)),
        ev(&v, Event::Duration(12)),
        eos,
    ]);
    assert_eq!(seq.0, expected);
    assert_eq!(seq.len(), 16);
}

#[test]
fn drum_note_group_has_four_tokens() {
    let v = build_vocab();
    let score = Score::new(vec![Note::drum(0, 0, 36).unwrap()]);
    let seq = encode(&TagSet::default(), &score, &v).unwrap();
    assert_eq!(
        note_region(seq.ids(), &v),
        &[
            ev(&v, Event::Beat(0)),
            ev(&v, Event::Position(0)),
            ev(&v, Event::Instrument(128)),
            ev(&v, Event::DrumPitch(36)),
        ]
    );
}

#[test]
fn encode_errors() {
    let v = build_vocab();
    let far = Score::new(vec![Note::new(1024, 0, 60, 1, 0).unwrap()]);
    assert_eq!(encode(&TagSet::default(), &far, &v), Err(TokenizerError::BeatOverflow(1024)));
    let tags = TagSet { composer: Some("nobody".into()), ..Default::default() };
    assert!(matches!(encode(&tags, &Score::default(), &v), Err(TokenizerError::UnknownComposer(_))));

    let (seq, dropped) = encode_truncated(&TagSet::default(), &far, &v).unwrap();
    assert_eq!(dropped, 1);
    assert_eq!(seq.0, skeleton(&v));
}

#[test]
fn unknown_genre_under_restricted_vocab() {
    let cfg = VocabConfig { genres: vec!["urban".into()], ..Default::default() };
    let v = VocabSpec::from_config(&cfg).unwrap();
    let tags = TagSet::default().with_genre(Genre::World);
    assert!(matches!(encode(&tags, &Score::default(), &v), Err(TokenizerError::UnknownGenre(_))));
}

#[test]
fn multiple_genres_sorted() {
    let v = build_vocab();
    let tags = TagSet { genres: vec![Genre::Urban, Genre::JazzBlues], ..Default::default() };
    let seq = encode(&tags, &Score::default(), &v).unwrap();
    assert_eq!(seq.0[2], ev(&v, Event::TagGenre(Some(Genre::JazzBlues))));
    assert_eq!(seq.0[3], ev(&v, Event::TagGenre(Some(Genre::Urban))));
    let (back, _) = decode_strict(&seq, &v).unwrap();
    assert_eq!(back.genres, vec![Genre::JazzBlues, Genre::Urban]);
}

#[test]
fn truncated_final_group_dropped() {
    let v = build_vocab();
    let score = Score::new(vec![Note::new(1, 0, 60, 12, 0).unwrap()]);
    let mut ids = encode(&TagSet::default(), &score, &v).unwrap().0;
    ids.pop();
    ids.extend([ev(&v, Event::Beat(3)), ev(&v, Event::Position(2))]);
    let (_, decoded) = decode(&TokenSequence(ids), &v);
    assert_eq!(decoded, score);
}

#[test]
fn strict_reports_missing_start_of_genre() {
    let v = build_vocab();
    let seq = TokenSequence(vec![
        ev(&v, Event::StartOfSong),
        ev(&v, Event::StartOfNotes),
        ev(&v, Event::EndOfSong),
    ]);
    match decode_strict(&seq, &v) {
        Err(TokenizerError::GrammarViolation { index, expected, found }) => {
            assert_eq!(index, 1);
            assert_eq!(expected, "start-of-genre");
            assert_eq!(found, "start-of-notes");
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn strict_rejects_drum_with_pitch_and_unsorted_instruments() {
    let v = build_vocab();
    let mut ids = skeleton(&v);
    ids.pop();
    ids.extend([
        ev(&v, Event::Beat(0)),
        ev(&v, Event::Position(0)),
        ev(&v, Event::Instrument(128)),
        ev(&v, Event::Pitch(36)),
    ]);
    let err = decode_strict(&TokenSequence(ids.clone()), &v).unwrap_err();
    assert!(matches!(err, TokenizerError::GrammarViolation { index: 13, .. }));

    // recovery skips the bad pitch and keeps the group open for a drum pitch
    ids.push(ev(&v, Event::DrumPitch(36)));
    let (_, score) = decode(&TokenSequence(ids), &v);
    assert_eq!(score.notes, vec![Note::drum(0, 0, 36).unwrap()]);

    let mut ids = skeleton(&v);
    ids[8] = ev(&v, Event::TagInstrument(Some(5)));
    ids.insert(9, ev(&v, Event::TagInstrument(Some(2))));
    assert!(decode_strict(&TokenSequence(ids), &v).is_err());
}

#[test]
fn strict_allows_missing_end_of_song_at_group_boundary() {
    let v = build_vocab();
    let score = Score::new(vec![Note::new(0, 0, 60, 12, 0).unwrap()]);
    let mut ids = encode(&TagSet::default(), &score, &v).unwrap().0;
    ids.pop();
    assert_eq!(decode_strict(&TokenSequence(ids.clone()), &v).unwrap().1, score);
    ids.pop();
    assert!(decode_strict(&TokenSequence(ids), &v).is_err());
}

#[test]
fn recovery_ignores_garbage() {
    let v = build_vocab();
    let ids = vec![5000, 0, ev(&v, Event::Pitch(3)), ev(&v, Event::TagComposer(Some(1))), ev(&v, Event::Beat(2))];
    let (tags, score) = decode(&TokenSequence(ids), &v);
    assert_eq!(tags.composer.as_deref(), Some(DEFAULT_COMPOSERS[1]));
    assert!(score.notes.is_empty());
}

#[test]
fn segment_long_sequence() {
    let tokens: Vec<u32> = (0..3000).collect();
    let seg = segment_for_tagger(&tokens);
    let expected: Vec<u32> = (0..341).chain(1330..1671).chain(2659..3000).collect();
    assert_eq!(seg, expected);
}

#[test]
fn segment_short_sequence_padded() {
    let tokens: Vec<u32> = (1..=500).collect();
    let seg = segment_for_tagger(&tokens);
    assert_eq!(seg.len(), 1023);
    assert_eq!(&seg[..500], &tokens[..]);
    assert!(seg[500..].iter().all(|&t| t == 0));
}

#[test]
fn segment_exact_fit_is_identity() {
    let tokens: Vec<u32> = (0..1023).collect();
    assert_eq!(segment_for_tagger(&tokens), tokens);
}

pub(crate) fn arb_note() -> impl Strategy<Value = Note> {
    prop_oneof![
        3 => (0u32..MAX_BEATS, 0u32..12, 0u8..128, 1u32..=192, 0u8..128)
            .prop_map(|(b, p, pitch, d, prog)| Note::new(b, p, pitch, d, prog).unwrap()),
        1 => (0u32..MAX_BEATS, 0u32..12, 0u8..128).prop_map(|(b, p, k)| Note::drum(b, p, k).unwrap()),
    ]
}

pub(crate) fn arb_tags() -> impl Strategy<Value = TagSet> {
    (
        prop::collection::btree_set(prop::sample::select(Genre::ALL.to_vec()), 0..3),
        prop::option::of(prop::sample::select(DEFAULT_COMPOSERS.to_vec())),
        prop::option::of(prop::sample::select(Complexity::ALL.to_vec())),
        prop::collection::btree_set(0u8..=128, 0..6),
    )
        .prop_map(|(genres, composer, complexity, instruments)| TagSet {
            genres: genres.into_iter().collect(),
            composer: composer.map(str::to_string),
            complexity,
            instruments,
        })
}

proptest! {
    #[test]
    fn round_trip(tags in arb_tags(), notes in prop::collection::vec(arb_note(), 0..60)) {
        let v = build_vocab();
        let score = canonicalize(Score::new(notes)).unwrap();
        let seq = encode(&tags, &score, &v).unwrap();
        prop_assert_eq!(decode(&seq, &v), (tags.clone(), score.clone()));
        prop_assert_eq!(decode_strict(&seq, &v).unwrap(), (tags.clone(), score.clone()));

        let drums = score.notes.iter().filter(|n| n.is_drum()).count();
        let expected_len = 11 + 5 * (score.notes.len() - drums) + 4 * drums
            + tags.instruments.len().saturating_sub(1)
            + tags.genres.len().saturating_sub(1);
        prop_assert_eq!(seq.len(), expected_len);
    }

    #[test]
    fn recovery_decode_is_total(ids in prop::collection::vec(0u32..2000, 0..300)) {
        let v = build_vocab();
        let (_, score) = decode(&TokenSequence(ids), &v);
        prop_assert!(score.is_canonical());
        prop_assert!(score.notes.iter().all(|n| n.beat < MAX_BEATS));
    }

    #[test]
    fn genre_slot_depends_only_on_genre(
        tags in arb_tags(),
        a in prop::collection::vec(arb_note(), 0..10),
        b in prop::collection::vec(arb_note(), 0..10),
    ) {
        let v = build_vocab();
        let sa = encode(&tags, &canonicalize(Score::new(a)).unwrap(), &v).unwrap();
        let sb = encode(&tags, &canonicalize(Score::new(b)).unwrap(), &v).unwrap();
        prop_assert_eq!(sa.0[2], sb.0[2]);
        let expected = v.id(&Event::TagGenre(tags.genres.iter().min().copied()));
        prop_assert_eq!(sa.0[2], expected);
    }
}
