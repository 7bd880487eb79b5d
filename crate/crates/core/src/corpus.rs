//! Corpus files: contrastive references, parallel pairs, annotated corpora,
//! lexicons, and seeded train/validation splits.
//!
//! Every corpus file is UTF-8 TSV with one record per line and no header.
//! Fields may not contain tabs or newlines; writers reject them.

use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::label::FormalityLabel;
use crate::lexicon::{parse_annotated, FormalityLexicon, TagError};
use crate::textnorm::{normalize, NormalizationConfig};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("file not found: {}", .0.display())]
    NotFound(PathBuf),
    #[error("line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: {source}")]
    TagParse {
        line: usize,
        #[source]
        source: TagError,
    },
    #[error("field contains a tab or newline: {0:?}")]
    InvalidField(String),
    #[error("cannot split an empty corpus")]
    EmptyInput,
    #[error("invalid split config: {0}")]
    InvalidSplit(String),
    #[error("lexicon json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, CorpusError>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelPair {
    pub id: u64,
    pub source_text: String,
    pub target_text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveRecord {
    pub source_text: String,
    pub formal_ref_tagged: String,
    pub informal_ref_tagged: String,
}

/// One row of the annotated corpus: source, tagged target, sentence label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotatedRecord {
    pub source_text: String,
    pub target_tagged: String,
    pub label: FormalityLabel,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            validation_fraction: 0.2,
            seed: 0,
        }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        let f = self.validation_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(CorpusError::InvalidSplit(format!(
                "validation_fraction {f} not in (0, 1)"
            )));
        }
        Ok(())
    }
}

fn open(path: &Path) -> Result<BufReader<File>> {
    match File::open(path) {
        Ok(f) => Ok(BufReader::new(f)),
        Err(e) if e.kind() == io::ErrorKind::NotFound => Err(CorpusError::NotFound(path.to_path_buf())),
        Err(e) => Err(e.into()),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn split_columns(line: &str, line_no: usize, expected: usize) -> Result<Vec<&str>> {
    let cols: Vec<&str> = line.split('\t').collect();
    if cols.len() != expected {
        return Err(CorpusError::MalformedLine {
            line: line_no,
            reason: format!("expected {expected} tab-separated columns, found {}", cols.len()),
        });
    }
    Ok(cols)
}

fn strip_eol(line: &mut String) {
    while line.ends_with('\n') || line.ends_with('\r') {
        line.pop();
    }
}

/// Iterates the non-empty lines of a reader with 1-based line numbers.
struct Lines<R> {
    reader: R,
    line_no: usize,
    buf: String,
}

impl<R: BufRead> Lines<R> {
    fn new(reader: R) -> Self {
        Self {
            reader,
            line_no: 0,
            buf: String::new(),
        }
    }

    fn next_line(&mut self) -> Option<Result<(usize, &str)>> {
        loop {
            self.buf.clear();
            match self.reader.read_line(&mut self.buf) {
                Ok(0) => return None,
                Ok(_) => {
                    self.line_no += 1;
                    strip_eol(&mut self.buf);
                    if !self.buf.trim().is_empty() {
                        return Some(Ok((self.line_no, self.buf.as_str())));
                    }
                }
                Err(e) => return Some(Err(e.into())),
            }
        }
    }
}

pub fn read_contrastive(path: impl AsRef<Path>) -> Result<Vec<ContrastiveRecord>> {
    parse_contrastive(open(path.as_ref())?)
}

pub fn parse_contrastive<R: BufRead>(reader: R) -> Result<Vec<ContrastiveRecord>> {
    let mut lines = Lines::new(reader);
    let mut records = Vec::new();
    while let Some(next) = lines.next_line() {
        let (line, text) = next?;
        let cols = split_columns(text, line, 3)?;
        let (formal, informal) = (cols[1], cols[2]);
        check_tagged(formal, FormalityLabel::Formal, line)?;
        check_tagged(informal, FormalityLabel::Informal, line)?;
        records.push(ContrastiveRecord {
            source_text: cols[0].to_string(),
            formal_ref_tagged: formal.to_string(),
            informal_ref_tagged: informal.to_string(),
        });
    }
    Ok(records)
}

fn check_tagged(tagged: &str, allowed: FormalityLabel, line: usize) -> Result<()> {
    let parsed = parse_annotated(tagged).map_err(|source| CorpusError::TagParse { line, source })?;
    if let Some(bad) = parsed.spans.iter().find(|s| s.label != allowed) {
        return Err(CorpusError::MalformedLine {
            line,
            reason: format!("{} reference contains a {} span `{}`", allowed, bad.label, bad.phrase),
        });
    }
    Ok(())
}

/// Streaming reader over a two-column parallel TSV file. Ids are assigned
/// sequentially from zero in file order.
pub struct ParallelReader<R> {
    lines: Lines<R>,
    next_id: u64,
    norm: NormalizationConfig,
    failed: bool,
}

impl ParallelReader<BufReader<File>> {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(open(path.as_ref())?))
    }
}

impl<R: BufRead> ParallelReader<R> {
    pub fn new(reader: R) -> Self {
        Self {
            lines: Lines::new(reader),
            next_id: 0,
            norm: NormalizationConfig::default(),
            failed: false,
        }
    }
}

impl<R: BufRead> Iterator for ParallelReader<R> {
    type Item = Result<ParallelPair>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.failed {
            return None;
        }
        let item = self.lines.next_line()?.and_then(|(line, text)| {
            let cols = split_columns(text, line, 2)?;
            for (name, col) in [("source", cols[0]), ("target", cols[1])] {
                if normalize(col, &self.norm).is_empty() {
                    return Err(CorpusError::MalformedLine {
                        line,
                        reason: format!("{name} text is empty after normalization"),
                    });
                }
            }
            Ok(ParallelPair {
                id: self.next_id,
                source_text: cols[0].to_string(),
                target_text: cols[1].to_string(),
            })
        });
        match &item {
            Ok(_) => self.next_id += 1,
            Err(_) => self.failed = true,
        }
        Some(item)
    }
}

pub fn read_parallel(path: impl AsRef<Path>) -> Result<ParallelReader<BufReader<File>>> {
    ParallelReader::open(path)
}

/// Line-oriented TSV writer that refuses fields containing tabs or newlines.
pub struct TsvWriter<W: Write> {
    inner: W,
}

impl TsvWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self::new(create(path.as_ref())?))
    }
}

impl<W: Write> TsvWriter<W> {
    pub fn new(inner: W) -> Self {
        Self { inner }
    }

    pub fn write_row(&mut self, fields: &[&str]) -> Result<()> {
        if let Some(bad) = fields.iter().find(|f| f.contains(['\t', '\n', '\r'])) {
            return Err(CorpusError::InvalidField(bad.to_string()));
        }
        self.inner.write_all(fields.join("\t").as_bytes())?;
        self.inner.write_all(b"\n")?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub fn write_parallel<'a>(path: impl AsRef<Path>, pairs: impl IntoIterator<Item = &'a ParallelPair>) -> Result<()> {
    let mut w = TsvWriter::create(path)?;
    for pair in pairs {
        w.write_row(&[&pair.source_text, &pair.target_text])?;
    }
    w.finish()?;
    Ok(())
}

pub fn write_contrastive<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a ContrastiveRecord>,
) -> Result<()> {
    let mut w = TsvWriter::create(path)?;
    for r in records {
        w.write_row(&[&r.source_text, &r.formal_ref_tagged, &r.informal_ref_tagged])?;
    }
    w.finish()?;
    Ok(())
}

pub fn write_annotated<'a>(
    path: impl AsRef<Path>,
    records: impl IntoIterator<Item = &'a AnnotatedRecord>,
) -> Result<()> {
    let mut w = TsvWriter::create(path)?;
    for r in records {
        w.write_row(&[&r.source_text, &r.target_tagged, r.label.as_str()])?;
    }
    w.finish()?;
    Ok(())
}

pub fn read_annotated(path: impl AsRef<Path>) -> Result<Vec<AnnotatedRecord>> {
    parse_annotated_corpus(open(path.as_ref())?)
}

pub fn parse_annotated_corpus<R: BufRead>(reader: R) -> Result<Vec<AnnotatedRecord>> {
    let mut lines = Lines::new(reader);
    let mut out = Vec::new();
    while let Some(next) = lines.next_line() {
        let (line, text) = next?;
        let cols = split_columns(text, line, 3)?;
        parse_annotated(cols[1]).map_err(|source| CorpusError::TagParse { line, source })?;
        let label = cols[2]
            .parse()
            .map_err(|e: crate::label::ParseLabelError| CorpusError::MalformedLine {
                line,
                reason: e.to_string(),
            })?;
        out.push(AnnotatedRecord {
            source_text: cols[0].to_string(),
            target_tagged: cols[1].to_string(),
            label,
        });
    }
    Ok(out)
}

/// Reads a lexicon JSON object with `formal` and `informal` phrase arrays.
pub fn read_lexicon(path: impl AsRef<Path>) -> Result<FormalityLexicon> {
    Ok(serde_json::from_reader(open(path.as_ref())?)?)
}

/// Writes the lexicon as pretty JSON; sets serialize as sorted arrays.
pub fn write_lexicon(path: impl AsRef<Path>, lexicon: &FormalityLexicon) -> Result<()> {
    let mut w = create(path.as_ref())?;
    serde_json::to_writer_pretty(&mut w, lexicon)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

/// Seeded shuffle followed by a prefix cut. The first
/// `round(validation_fraction * n)` shuffled items become the validation
/// set; both halves keep the input's relative order.
pub fn split<T: Clone>(items: &[T], cfg: &SplitConfig) -> Result<(Vec<T>, Vec<T>)> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(CorpusError::EmptyInput);
    }
    let n_val = (cfg.validation_fraction * items.len() as f64).round() as usize;
    let mut order: Vec<usize> = (0..items.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut is_val = vec![false; items.len()];
    for &i in &order[..n_val] {
        is_val[i] = true;
    }
    let mut train = Vec::with_capacity(items.len() - n_val);
    let mut val = Vec::with_capacity(n_val);
    for (item, v) in items.iter().zip(is_val) {
        if v {
            val.push(item.clone());
        } else {
            train.push(item.clone());
        }
    }
    Ok((train, val))
}
