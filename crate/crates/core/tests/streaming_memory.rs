//! Peak resident memory while streaming a 1M-line corpus stays at the level
//! of a 10k-line run. Kept alone in this binary so no other test shares the
//! process high-water mark.

use std::io::{BufWriter, Write};
use std::path::Path;

use fsmt_core::annotator::Annotator;
use fsmt_core::corpus::{read_parallel, TsvWriter};
use fsmt_core::label::FormalityLabel;
use fsmt_core::synth;
use fsmt_core::textnorm::NormalizationConfig;

fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

fn write_corpus(path: &Path, lines: usize) {
    let pool = synth::all_second_person();
    let mut w = BufWriter::new(std::fs::File::create(path).unwrap());
    for i in 0..lines {
        let s = &pool[i % pool.len()];
        let label = if i % 3 == 0 {
            FormalityLabel::Informal
        } else {
            FormalityLabel::Formal
        };
        writeln!(w, "{}\t{}", s.source, s.plain(label)).unwrap();
    }
    w.flush().unwrap();
}

fn stream(path: &Path, annotator: &Annotator) -> usize {
    let mut out = TsvWriter::new(std::io::sink());
    let mut stream = annotator.annotate_stream(read_parallel(path).unwrap(), 1024);
    let mut n = 0;
    for result in stream.by_ref() {
        let r = result.unwrap();
        out.write_row(&[&r.source_text, &r.target_tagged, r.label.as_str()])
            .unwrap();
        n += 1;
    }
    assert_eq!(stream.report().total, n);
    n
}

#[test]
fn rss_is_flat_from_10k_to_1m_lines() {
    let Some(_) = peak_rss_kib() else {
        eprintln!("no /proc/self/status; skipping");
        return;
    };
    let dir = tempfile::tempdir().unwrap();
    let small = dir.path().join("small.tsv");
    let large = dir.path().join("large.tsv");
    write_corpus(&small, 10_000);
    write_corpus(&large, 1_000_000);
    let annotator = Annotator::new(&synth::lexicon(), NormalizationConfig::default());

    assert_eq!(stream(&small, &annotator), 10_000);
    let after_small = peak_rss_kib().unwrap();
    assert_eq!(stream(&large, &annotator), 1_000_000);
    let after_large = peak_rss_kib().unwrap();
    let growth = after_large.saturating_sub(after_small);
    println!("peak RSS after 10k: {after_small} KiB, after 1M: {after_large} KiB");
    assert!(growth < 16 * 1024, "peak RSS grew by {growth} KiB");
}
