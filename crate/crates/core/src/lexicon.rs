//! Tagged-reference parsing and formal/informal lexicon extraction.
//!
//! References mark formality-bearing phrases inline with `[F]…[/F]` and
//! `[I]…[/I]`. Tags never nest. Spans are byte ranges into the tag-stripped
//! text.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::corpus::ContrastiveRecord;
use crate::label::FormalityLabel;
use crate::textnorm::{normalize, NormalizationConfig};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum TagError {
    #[error("unbalanced tag `{tag}` at byte {offset}")]
    Unbalanced { tag: &'static str, offset: usize },
    #[error("tag `{tag}` at byte {offset} opened inside another span")]
    Nested { tag: &'static str, offset: usize },
    #[error("closing tag `{found}` at byte {offset} does not match `{expected}`")]
    MismatchedClose {
        expected: &'static str,
        found: &'static str,
        offset: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSpan {
    pub label: FormalityLabel,
    pub phrase: String,
    pub span: Range<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AnnotatedSentence {
    pub plain_text: String,
    pub spans: Vec<LabeledSpan>,
}

const OPEN_LEN: usize = 3;
const CLOSE_LEN: usize = 4;

enum TagToken {
    Open(FormalityLabel),
    Close(FormalityLabel),
}

fn tag_at(rest: &str) -> Option<(TagToken, &'static str)> {
    const TAGS: [(&str, bool, FormalityLabel); 4] = [
        ("[F]", true, FormalityLabel::Formal),
        ("[/F]", false, FormalityLabel::Formal),
        ("[I]", true, FormalityLabel::Informal),
        ("[/I]", false, FormalityLabel::Informal),
    ];
    TAGS.iter()
        .find(|(t, _, _)| rest.starts_with(t))
        .map(|&(t, open, label)| {
            let tok = if open {
                TagToken::Open(label)
            } else {
                TagToken::Close(label)
            };
            (tok, t)
        })
}

fn open_tag(label: FormalityLabel) -> &'static str {
    label.tags().map(|(open, _)| open).unwrap_or("")
}

fn close_tag(label: FormalityLabel) -> &'static str {
    label.tags().map(|(_, close)| close).unwrap_or("")
}

pub fn parse_annotated(tagged_text: &str) -> Result<AnnotatedSentence, TagError> {
    let mut plain = String::with_capacity(tagged_text.len());
    let mut spans = Vec::new();
    // (label, plain start, tagged offset of the opening tag)
    let mut open: Option<(FormalityLabel, usize, usize)> = None;
    let mut i = 0;
    while i < tagged_text.len() {
        let rest = &tagged_text[i..];
        if let Some((tok, text)) = tag_at(rest) {
            match (tok, open) {
                (TagToken::Open(_), Some(_)) => return Err(TagError::Nested { tag: text, offset: i }),
                (TagToken::Open(label), None) => open = Some((label, plain.len(), i)),
                (TagToken::Close(_), None) => return Err(TagError::Unbalanced { tag: text, offset: i }),
                (TagToken::Close(label), Some((open_label, start, _))) => {
                    if label != open_label {
                        return Err(TagError::MismatchedClose {
                            expected: close_tag(open_label),
                            found: text,
                            offset: i,
                        });
                    }
                    spans.push(LabeledSpan {
                        label,
                        phrase: plain[start..].to_string(),
                        span: start..plain.len(),
                    });
                    open = None;
                }
            }
            i += text.len();
        } else {
            let c = rest.chars().next().expect("non-empty remainder");
            plain.push(c);
            i += c.len_utf8();
        }
    }
    if let Some((label, _, offset)) = open {
        return Err(TagError::Unbalanced {
            tag: open_tag(label),
            offset,
        });
    }
    Ok(AnnotatedSentence {
        plain_text: plain,
        spans,
    })
}

impl AnnotatedSentence {
    pub fn untagged(text: impl Into<String>) -> Self {
        Self {
            plain_text: text.into(),
            spans: Vec::new(),
        }
    }

    /// Re-inserts the tags at the span boundaries.
    pub fn to_tagged(&self) -> String {
        let mut out = String::with_capacity(self.plain_text.len() + self.spans.len() * 7);
        let mut cursor = 0;
        for span in &self.spans {
            out.push_str(&self.plain_text[cursor..span.span.start]);
            out.push_str(open_tag(span.label));
            out.push_str(&self.plain_text[span.span.clone()]);
            out.push_str(close_tag(span.label));
            cursor = span.span.end;
        }
        out.push_str(&self.plain_text[cursor..]);
        out
    }

    /// Byte offset in the tagged text of `plain_offset`, which must lie inside
    /// span number `span_index` (or at its start).
    pub fn tagged_offset_in_span(&self, plain_offset: usize, span_index: usize) -> usize {
        plain_offset + (span_index + 1) * OPEN_LEN + span_index * CLOSE_LEN
    }

    pub fn count(&self, label: FormalityLabel) -> usize {
        self.spans.iter().filter(|s| s.label == label).count()
    }
}

/// Formal and informal phrase sets, plus phrases that were claimed by both.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FormalityLexicon {
    pub formal: BTreeSet<String>,
    pub informal: BTreeSet<String>,
    #[serde(default)]
    pub conflicts: BTreeSet<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexiconReport {
    pub formal_count: usize,
    pub informal_count: usize,
    pub conflict_count: usize,
}

impl FormalityLexicon {
    /// Builds a lexicon from raw phrases. Phrases are normalized, empties are
    /// dropped, and anything in both sets is quarantined in `conflicts`.
    pub fn from_phrases<F, I, S, T>(formal: F, informal: I, cfg: &NormalizationConfig) -> Self
    where
        F: IntoIterator<Item = S>,
        I: IntoIterator<Item = T>,
        S: AsRef<str>,
        T: AsRef<str>,
    {
        let norm = |p: &str| Some(normalize(p, cfg)).filter(|s| !s.is_empty());
        let mut formal: BTreeSet<String> = formal.into_iter().filter_map(|p| norm(p.as_ref())).collect();
        let mut informal: BTreeSet<String> = informal.into_iter().filter_map(|p| norm(p.as_ref())).collect();
        let conflicts: BTreeSet<String> = formal.intersection(&informal).cloned().collect();
        for phrase in &conflicts {
            formal.remove(phrase);
            informal.remove(phrase);
        }
        Self {
            formal,
            informal,
            conflicts,
        }
    }

    pub fn phrases(&self, label: FormalityLabel) -> Option<&BTreeSet<String>> {
        match label {
            FormalityLabel::Formal => Some(&self.formal),
            FormalityLabel::Informal => Some(&self.informal),
            FormalityLabel::Neutral => None,
        }
    }

    /// Exchanges the formal and informal sets.
    pub fn swapped(&self) -> Self {
        Self {
            formal: self.informal.clone(),
            informal: self.formal.clone(),
            conflicts: self.conflicts.clone(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.formal.is_empty() && self.informal.is_empty()
    }

    pub fn report(&self) -> LexiconReport {
        lexicon_report(self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("record {index}: {source}")]
pub struct RecordTagError {
    pub index: usize,
    #[source]
    pub source: TagError,
}

pub fn extract_lexicon(
    records: &[ContrastiveRecord],
    cfg: &NormalizationConfig,
) -> Result<FormalityLexicon, RecordTagError> {
    let mut formal = Vec::new();
    let mut informal = Vec::new();
    for (index, record) in records.iter().enumerate() {
        for tagged in [&record.formal_ref_tagged, &record.informal_ref_tagged] {
            let sentence = parse_annotated(tagged).map_err(|source| RecordTagError { index, source })?;
            for span in sentence.spans {
                match span.label {
                    FormalityLabel::Formal => formal.push(span.phrase),
                    FormalityLabel::Informal => informal.push(span.phrase),
                    FormalityLabel::Neutral => {}
                }
            }
        }
    }
    Ok(FormalityLexicon::from_phrases(formal, informal, cfg))
}

pub fn lexicon_report(lexicon: &FormalityLexicon) -> LexiconReport {
    LexiconReport {
        formal_count: lexicon.formal.len(),
        informal_count: lexicon.informal.len(),
        conflict_count: lexicon.conflicts.len(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(formal: &str, informal: &str) -> ContrastiveRecord {
        ContrastiveRecord {
            source_text: "src".into(),
            formal_ref_tagged: formal.into(),
            informal_ref_tagged: informal.into(),
        }
    }

    #[test]
    fn parses_single_formal_span() {
        let s = parse_annotated("[F]आप[/F] कैसे हैं").unwrap();
        assert_eq!(s.plain_text, "आप कैसे हैं");
        assert_eq!(s.spans.len(), 1);
        assert_eq!(s.spans[0].label, FormalityLabel::Formal);
        assert_eq!(s.spans[0].phrase, "आप");
        assert_eq!(s.spans[0].span, 0.."आप".len());
    }

    #[test]
    fn untagged_text_unchanged() {
        let s = parse_annotated("no tags here").unwrap();
        assert_eq!(s.plain_text, "no tags here");
        assert!(s.spans.is_empty());
    }

    #[test]
    fn tag_errors() {
        assert!(matches!(
            parse_annotated("[F]x[/I]"),
            Err(TagError::MismatchedClose { .. })
        ));
        assert!(matches!(
            parse_annotated("[F]x"),
            Err(TagError::Unbalanced { offset: 0, .. })
        ));
        assert!(matches!(
            parse_annotated("x[/F]"),
            Err(TagError::Unbalanced { offset: 1, .. })
        ));
        assert!(matches!(
            parse_annotated("[F]a [I]b[/I][/F]"),
            Err(TagError::Nested { .. })
        ));
        assert!(matches!(
            parse_annotated("[F]a [F]b[/F][/F]"),
            Err(TagError::Nested { .. })
        ));
    }

    #[test]
    fn other_brackets_are_plain_text() {
        let s = parse_annotated("[x] [F]a[/F] [/G]").unwrap();
        assert_eq!(s.plain_text, "[x] a [/G]");
        assert_eq!(s.spans[0].span, 4..5);
    }

    #[test]
    fn tagged_offset_matches_text() {
        let tagged = "x [F]ab[/F] y [I]cd ef[/I]";
        let s = parse_annotated(tagged).unwrap();
        let second = &s.spans[1];
        let off = s.tagged_offset_in_span(second.span.start + 3, 1);
        assert_eq!(&tagged[off..off + 2], "ef");
    }

    #[test]
    fn extract_examples() {
        let lex = extract_lexicon(&[record("[F]आप[/F] कैसे हैं", "[I]तुम[/I] कैसे हो")], &Default::default()).unwrap();
        assert_eq!(lex.formal, BTreeSet::from(["आप".to_string()]));
        assert_eq!(lex.informal, BTreeSet::from(["तुम".to_string()]));
        assert!(lex.conflicts.is_empty());

        let records = [record("[F]आप[/F] [F]जी[/F]", "[I]तुम[/I]"), record("आप", "[I]जी[/I]")];
        let lex = extract_lexicon(&records, &Default::default()).unwrap();
        assert_eq!(lex.conflicts, BTreeSet::from(["जी".to_string()]));
        assert!(!lex.formal.contains("जी") && !lex.informal.contains("जी"));
        assert_eq!(
            lexicon_report(&lex),
            LexiconReport {
                formal_count: 1,
                informal_count: 1,
                conflict_count: 1
            }
        );

        let empty = extract_lexicon(&[], &Default::default()).unwrap();
        assert_eq!(
            lexicon_report(&empty),
            LexiconReport {
                formal_count: 0,
                informal_count: 0,
                conflict_count: 0
            }
        );
    }

    #[test]
    fn extract_reports_record_index() {
        let err = extract_lexicon(&[record("ok", "ok"), record("[F]bad", "x")], &Default::default()).unwrap_err();
        assert_eq!(err.index, 1);
    }

    #[test]
    fn phrases_are_normalized() {
        let lex = extract_lexicon(&[record("[F]Sir,  Please[/F]", "[I]hey![/I]")], &Default::default()).unwrap();
        assert!(lex.formal.contains("sir please"));
        assert!(lex.informal.contains("hey"));
    }

    #[test]
    fn distinct_single_tag_records_count() {
        let n = 37;
        let records: Vec<_> = (0..n)
            .map(|i| {
                if i % 3 == 0 {
                    record("x", &format!("[I]w{i}[/I]"))
                } else {
                    record(&format!("[F]w{i}[/F]"), "x")
                }
            })
            .collect();
        let report = lexicon_report(&extract_lexicon(&records, &Default::default()).unwrap());
        assert_eq!(report.formal_count + report.informal_count, n);
        assert_eq!(report.informal_count, (0..n).filter(|i| i % 3 == 0).count());
    }

    fn segment() -> impl Strategy<Value = String> {
        let text = "[a-z आपतुम]{0,6}";
        prop_oneof![
            3 => text.prop_map(|s| s.to_string()),
            1 => text.prop_map(|s| format!("[F]{s}[/F]")),
            1 => text.prop_map(|s| format!("[I]{s}[/I]")),
        ]
    }

    proptest! {
        #[test]
        fn parse_round_trips(segments in proptest::collection::vec(segment(), 0..8)) {
            let tagged = segments.concat();
            let parsed = parse_annotated(&tagged).unwrap();
            let tag_bytes: usize = parsed.spans.len() * (OPEN_LEN + CLOSE_LEN);
            prop_assert_eq!(parsed.plain_text.len(), tagged.len() - tag_bytes);
            for span in &parsed.spans {
                prop_assert_eq!(&parsed.plain_text[span.span.clone()], span.phrase.as_str());
            }
            prop_assert!(parsed.spans.windows(2).all(|w| w[0].span.end <= w[1].span.start));
            prop_assert_eq!(parsed.to_tagged(), tagged);
        }

        #[test]
        fn extracted_sets_are_disjoint(
            formal in proptest::collection::vec("[abc]{1,2}", 0..6),
            informal in proptest::collection::vec("[abc]{1,2}", 0..6),
        ) {
            let f: String = formal.iter().map(|p| format!("[F]{p}[/F] ")).collect();
            let i: String = informal.iter().map(|p| format!("[I]{p}[/I] ")).collect();
            let lex = extract_lexicon(&[record(&f, &i)], &Default::default()).unwrap();
            prop_assert!(lex.formal.is_disjoint(&lex.informal));
        }
    }
}
