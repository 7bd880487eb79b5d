use std::io::Write;

use fsmt_core::corpus::{
    read_annotated, read_contrastive, read_lexicon, read_parallel, write_annotated, write_contrastive, write_lexicon,
    write_parallel, AnnotatedRecord, CorpusError, ParallelPair,
};
use fsmt_core::synth;
use fsmt_core::FormalityLabel;

#[test]
fn missing_file_is_not_found() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("absent.tsv");
    assert!(matches!(read_parallel(&path), Err(CorpusError::NotFound(p)) if p == path));
    assert!(matches!(read_contrastive(&path), Err(CorpusError::NotFound(_))));
    assert!(matches!(read_lexicon(&path), Err(CorpusError::NotFound(_))));
}

#[test]
fn empty_file_yields_nothing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("empty.tsv");
    std::fs::File::create(&path).unwrap();
    assert_eq!(read_parallel(&path).unwrap().count(), 0);
    assert!(read_contrastive(&path).unwrap().is_empty());
}

#[test]
fn malformed_line_stops_stream_with_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.tsv");
    let mut f = std::fs::File::create(&path).unwrap();
    writeln!(f, "You eat.\tआप खाते हैं").unwrap();
    writeln!(f, "no tab here").unwrap();
    writeln!(f, "You go.\tआप जाते हैं").unwrap();
    drop(f);
    let items: Vec<_> = read_parallel(&path).unwrap().collect();
    assert_eq!(items.len(), 2);
    assert_eq!(items[0].as_ref().unwrap().id, 0);
    assert!(matches!(items[1], Err(CorpusError::MalformedLine { line: 2, .. })));
}

#[test]
fn parallel_round_trip_assigns_sequential_ids() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("nested/parallel.tsv");
    let pairs: Vec<ParallelPair> = synth::sample(5, 3, 1)
        .iter()
        .enumerate()
        .map(|(i, s)| ParallelPair {
            id: i as u64,
            source_text: s.source.clone(),
            target_text: s.plain(FormalityLabel::Formal),
        })
        .collect();
    write_parallel(&path, &pairs).unwrap();
    let back: Vec<_> = read_parallel(&path).unwrap().map(Result::unwrap).collect();
    assert_eq!(back, pairs);
}

#[test]
fn contrastive_annotated_and_lexicon_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let records = synth::fixture_contrastive();
    let path = dir.path().join("contrastive.tsv");
    write_contrastive(&path, &records).unwrap();
    assert_eq!(read_contrastive(&path).unwrap(), records);

    let annotated: Vec<AnnotatedRecord> = records
        .iter()
        .map(|r| AnnotatedRecord {
            source_text: r.source_text.clone(),
            target_tagged: r.formal_ref_tagged.clone(),
            label: FormalityLabel::Formal,
        })
        .collect();
    let path = dir.path().join("annotated.tsv");
    write_annotated(&path, &annotated).unwrap();
    assert_eq!(read_annotated(&path).unwrap(), annotated);

    let lexicon = synth::lexicon();
    let path = dir.path().join("lexicon.json");
    write_lexicon(&path, &lexicon).unwrap();
    assert_eq!(read_lexicon(&path).unwrap(), lexicon);
}
