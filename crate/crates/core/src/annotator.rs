//! Lexicon-driven annotation of parallel corpora.
//!
//! Each target sentence is normalized, scanned left to right for the longest
//! lexicon phrase starting at each token, labeled by majority of formal vs
//! informal hits (ties are neutral), and re-emitted with inline tags.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AnnotatedRecord, CorpusError, ParallelPair};
use crate::label::FormalityLabel;
use crate::lexicon::{FormalityLexicon, LabeledSpan};
use crate::textnorm::{normalize, split_tokens, NormalizationConfig, Token};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("spans overlap at byte {offset}")]
pub struct OverlapError {
    pub offset: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum AnnotateError {
    #[error("reading pair {}: {source}", pair_id.map_or("?".to_string(), |id| id.to_string()))]
    Corpus {
        pair_id: Option<u64>,
        #[source]
        source: CorpusError,
    },
    #[error("pair {pair_id}: {source}")]
    Overlap {
        pair_id: u64,
        #[source]
        source: OverlapError,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationResult {
    pub pair_id: u64,
    pub source_text: String,
    pub target_tagged: String,
    pub label: FormalityLabel,
    pub formal_hits: usize,
    pub informal_hits: usize,
}

impl AnnotationResult {
    pub fn to_record(&self) -> AnnotatedRecord {
        AnnotatedRecord {
            source_text: self.source_text.clone(),
            target_tagged: self.target_tagged.clone(),
            label: self.label,
        }
    }
}

/// Per-label sentence counts. Merging two reports adds their counts.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistributionReport {
    pub formal: usize,
    pub informal: usize,
    pub neutral: usize,
    pub total: usize,
}

impl DistributionReport {
    pub fn record(&mut self, label: FormalityLabel) {
        match label {
            FormalityLabel::Formal => self.formal += 1,
            FormalityLabel::Informal => self.informal += 1,
            FormalityLabel::Neutral => self.neutral += 1,
        }
        self.total += 1;
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            formal: self.formal + other.formal,
            informal: self.informal + other.informal,
            neutral: self.neutral + other.neutral,
            total: self.total + other.total,
        }
    }

    pub fn count(&self, label: FormalityLabel) -> usize {
        match label {
            FormalityLabel::Formal => self.formal,
            FormalityLabel::Informal => self.informal,
            FormalityLabel::Neutral => self.neutral,
        }
    }
}

/// Lexicon phrases indexed by first token, longest first.
#[derive(Debug, Clone)]
pub struct PhraseMatcher {
    by_first: HashMap<String, Vec<(Vec<String>, FormalityLabel)>>,
}

impl PhraseMatcher {
    pub fn new(lexicon: &FormalityLexicon) -> Self {
        let mut by_first: HashMap<String, Vec<(Vec<String>, FormalityLabel)>> = HashMap::new();
        for label in [FormalityLabel::Formal, FormalityLabel::Informal] {
            for phrase in lexicon.phrases(label).into_iter().flatten() {
                let words: Vec<String> = phrase.split_whitespace().map(str::to_string).collect();
                if let Some(first) = words.first() {
                    by_first.entry(first.clone()).or_default().push((words, label));
                }
            }
        }
        for candidates in by_first.values_mut() {
            // Longest first; equal lengths in lexicographic order for determinism.
            candidates.sort_by(|a, b| b.0.len().cmp(&a.0.len()).then_with(|| a.0.cmp(&b.0)));
        }
        Self { by_first }
    }

    /// Leftmost-longest, non-overlapping phrase matches over `tokens`.
    /// Span offsets are the tokens' byte spans.
    pub fn find(&self, tokens: &[Token]) -> Vec<LabeledSpan> {
        let mut spans = Vec::new();
        let mut i = 0;
        while i < tokens.len() {
            let hit = self.by_first.get(&tokens[i].surface).and_then(|candidates| {
                candidates.iter().find(|(words, _)| {
                    i + words.len() <= tokens.len() && words.iter().zip(&tokens[i..]).all(|(w, t)| *w == t.surface)
                })
            });
            match hit {
                Some((words, label)) => {
                    let last = &tokens[i + words.len() - 1];
                    spans.push(LabeledSpan {
                        label: *label,
                        phrase: words.join(" "),
                        span: tokens[i].byte_span.start..last.byte_span.end,
                    });
                    i += words.len();
                }
                None => i += 1,
            }
        }
        spans
    }
}

pub fn match_phrases(tokens: &[Token], lexicon: &FormalityLexicon) -> Vec<LabeledSpan> {
    PhraseMatcher::new(lexicon).find(tokens)
}

pub fn classify(spans: &[LabeledSpan]) -> FormalityLabel {
    let formal = spans.iter().filter(|s| s.label == FormalityLabel::Formal).count();
    let informal = spans.iter().filter(|s| s.label == FormalityLabel::Informal).count();
    classify_counts(formal, informal)
}

pub fn classify_counts(formal_hits: usize, informal_hits: usize) -> FormalityLabel {
    use std::cmp::Ordering::*;
    match formal_hits.cmp(&informal_hits) {
        Greater => FormalityLabel::Formal,
        Less => FormalityLabel::Informal,
        Equal => FormalityLabel::Neutral,
    }
}

pub fn tag_sentence(normalized_target: &str, spans: &[LabeledSpan]) -> Result<String, OverlapError> {
    let mut ordered: Vec<&LabeledSpan> = spans.iter().collect();
    ordered.sort_by_key(|s| s.span.start);
    let mut out = String::with_capacity(normalized_target.len() + spans.len() * 7);
    let mut cursor = 0;
    for span in ordered {
        if span.span.start < cursor {
            return Err(OverlapError {
                offset: span.span.start,
            });
        }
        let Some((open, close)) = span.label.tags() else {
            continue;
        };
        out.push_str(&normalized_target[cursor..span.span.start]);
        out.push_str(open);
        out.push_str(&normalized_target[span.span.clone()]);
        out.push_str(close);
        cursor = span.span.end;
    }
    out.push_str(&normalized_target[cursor..]);
    Ok(out)
}

/// Annotates parallel pairs against a fixed lexicon.
#[derive(Debug, Clone)]
pub struct Annotator {
    matcher: PhraseMatcher,
    norm: NormalizationConfig,
}

impl Annotator {
    pub fn new(lexicon: &FormalityLexicon, norm: NormalizationConfig) -> Self {
        Self {
            matcher: PhraseMatcher::new(lexicon),
            norm,
        }
    }

    pub fn annotate(&self, pair: &ParallelPair) -> Result<AnnotationResult, AnnotateError> {
        let normalized = normalize(&pair.target_text, &self.norm);
        // Matching sees the whole sentence; truncation is a model concern.
        let tokens = split_tokens(&normalized);
        let spans = self.matcher.find(&tokens);
        let formal_hits = spans.iter().filter(|s| s.label == FormalityLabel::Formal).count();
        let informal_hits = spans.len() - formal_hits;
        let target_tagged = tag_sentence(&normalized, &spans).map_err(|source| AnnotateError::Overlap {
            pair_id: pair.id,
            source,
        })?;
        Ok(AnnotationResult {
            pair_id: pair.id,
            source_text: pair.source_text.clone(),
            target_tagged,
            label: classify_counts(formal_hits, informal_hits),
            formal_hits,
            informal_hits,
        })
    }

    /// Annotates a chunk in parallel; output order matches input order.
    pub fn annotate_batch(&self, pairs: &[ParallelPair]) -> Result<Vec<AnnotationResult>, AnnotateError> {
        pairs.par_iter().map(|p| self.annotate(p)).collect()
    }

    /// Streams annotations over `pairs`, processing `chunk_size` pairs at a
    /// time in parallel. The running report is available from the stream.
    pub fn annotate_stream<I>(&self, pairs: I, chunk_size: usize) -> AnnotationStream<'_, I::IntoIter>
    where
        I: IntoIterator<Item = Result<ParallelPair, CorpusError>>,
    {
        AnnotationStream {
            annotator: self,
            pairs: pairs.into_iter(),
            chunk_size: chunk_size.max(1),
            pending: std::collections::VecDeque::new(),
            report: DistributionReport::default(),
            last_id: None,
            done: false,
            pending_error: None,
        }
    }
}

pub struct AnnotationStream<'a, I> {
    annotator: &'a Annotator,
    pairs: I,
    chunk_size: usize,
    pending: std::collections::VecDeque<AnnotationResult>,
    report: DistributionReport,
    last_id: Option<u64>,
    done: bool,
    pending_error: Option<AnnotateError>,
}

impl<I> AnnotationStream<'_, I> {
    /// Counts of every result yielded so far.
    pub fn report(&self) -> DistributionReport {
        self.report
    }
}

impl<I: Iterator<Item = Result<ParallelPair, CorpusError>>> Iterator for AnnotationStream<'_, I> {
    type Item = Result<AnnotationResult, AnnotateError>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.pending.is_empty() && !self.done {
            let mut chunk = Vec::with_capacity(self.chunk_size);
            let mut error = None;
            for item in self.pairs.by_ref() {
                match item {
                    Ok(pair) => {
                        self.last_id = Some(pair.id);
                        chunk.push(pair);
                        if chunk.len() == self.chunk_size {
                            break;
                        }
                    }
                    Err(source) => {
                        error = Some(AnnotateError::Corpus {
                            pair_id: self.last_id.map(|id| id + 1),
                            source,
                        });
                        break;
                    }
                }
            }
            if chunk.len() < self.chunk_size {
                self.done = true;
            }
            match self.annotator.annotate_batch(&chunk) {
                Ok(results) => self.pending.extend(results),
                Err(e) => {
                    self.done = true;
                    return Some(Err(e));
                }
            }
            if let Some(e) = error {
                self.done = true;
                if self.pending.is_empty() {
                    return Some(Err(e));
                }
                // Flush the good prefix first; the error surfaces afterwards.
                self.pending_error = Some(e);
            }
        }
        match self.pending.pop_front() {
            Some(result) => {
                self.report.record(result.label);
                Some(Ok(result))
            }
            None => self.pending_error.take().map(Err),
        }
    }
}

pub fn annotate_corpus<I>(
    pairs: I,
    lexicon: &FormalityLexicon,
    norm: &NormalizationConfig,
) -> Result<(Vec<AnnotationResult>, DistributionReport), AnnotateError>
where
    I: IntoIterator<Item = Result<ParallelPair, CorpusError>>,
{
    let annotator = Annotator::new(lexicon, norm.clone());
    let mut stream = annotator.annotate_stream(pairs, 1024);
    let results = stream.by_ref().collect::<Result<Vec<_>, _>>()?;
    Ok((results, stream.report()))
}

/// Recount of labels, independent of the stream's running report.
pub fn recount(results: &[AnnotationResult]) -> BTreeMap<FormalityLabel, usize> {
    let mut counts = BTreeMap::new();
    for r in results {
        *counts.entry(r.label).or_insert(0) += 1;
    }
    counts
}
