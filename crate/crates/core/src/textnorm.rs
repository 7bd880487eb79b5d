//! Text normalization, whitespace tokenization and detokenization.
//!
//! Every stage of the pipeline goes through [`normalize`] first, so the
//! lexicon, the annotator, the model vocabulary and the metric all agree on
//! what a token is.
//!
//! The punctuation class is fixed: the 32 ASCII punctuation characters plus
//! the Devanagari danda (U+0964) and double danda (U+0965). Languages that
//! need more can list extra characters in
//! [`NormalizationConfig::extra_punctuation`].

use std::ops::Range;

use serde::{Deserialize, Serialize};

pub const DANDA: char = '\u{0964}';
pub const DOUBLE_DANDA: char = '\u{0965}';

/// Tokens that attach to the preceding token when detokenizing.
const ATTACH_LEFT: &[char] = &['.', ',', '!', '?', ':', ';', ')', ']', '}', '%', DANDA, DOUBLE_DANDA];
/// Tokens after which no space is inserted.
const ATTACH_RIGHT: &[char] = &['(', '[', '{'];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NormalizationConfig {
    pub lowercase: bool,
    pub strip_punctuation: bool,
    pub max_tokens: usize,
    /// Per-language additions to the punctuation class.
    pub extra_punctuation: Vec<char>,
}

impl Default for NormalizationConfig {
    fn default() -> Self {
        Self {
            lowercase: true,
            strip_punctuation: true,
            max_tokens: 100,
            extra_punctuation: Vec::new(),
        }
    }
}

impl NormalizationConfig {
    pub fn with_max_tokens(max_tokens: usize) -> Self {
        Self {
            max_tokens,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.max_tokens == 0 {
            return Err("max_tokens must be at least 1".into());
        }
        Ok(())
    }

    fn is_punctuation(&self, c: char) -> bool {
        is_punctuation(c) || self.extra_punctuation.contains(&c)
    }
}

/// A whitespace-delimited token with its byte span in the normalized text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Token {
    pub surface: String,
    pub byte_span: Range<usize>,
}

pub fn is_punctuation(c: char) -> bool {
    c.is_ascii_punctuation() || c == DANDA || c == DOUBLE_DANDA
}

/// Latin, Latin-1 Supplement, Latin Extended-A/B and Latin Extended Additional.
fn is_latin_letter(c: char) -> bool {
    matches!(c, 'A'..='Z' | 'a'..='z' | '\u{00C0}'..='\u{024F}' | '\u{1E00}'..='\u{1EFF}') && c.is_alphabetic()
}

pub fn normalize(text: &str, cfg: &NormalizationConfig) -> String {
    let mut out = String::with_capacity(text.len());
    // Pending separator: emitted lazily so runs collapse and edges trim.
    let mut pending_space = false;
    let push = |out: &mut String, c: char, pending: &mut bool| {
        if c.is_whitespace() {
            *pending = true;
            return;
        }
        if *pending && !out.is_empty() {
            out.push(' ');
        }
        *pending = false;
        out.push(c);
    };
    for c in text.chars() {
        if cfg.strip_punctuation && cfg.is_punctuation(c) {
            pending_space = true;
        } else if cfg.lowercase && is_latin_letter(c) {
            for lower in c.to_lowercase() {
                push(&mut out, lower, &mut pending_space);
            }
        } else {
            push(&mut out, c, &mut pending_space);
        }
    }
    out
}

/// Splits `text` on whitespace without normalizing it. Spans index `text`.
pub fn split_tokens(text: &str) -> Vec<Token> {
    let mut tokens = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                tokens.push(Token {
                    surface: text[s..i].to_string(),
                    byte_span: s..i,
                });
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        tokens.push(Token {
            surface: text[s..].to_string(),
            byte_span: s..text.len(),
        });
    }
    tokens
}

/// Tokens of `normalize(text)`, truncated to `cfg.max_tokens`.
pub fn tokenize(text: &str, cfg: &NormalizationConfig) -> Vec<Token> {
    let normalized = normalize(text, cfg);
    let mut tokens = split_tokens(&normalized);
    tokens.truncate(cfg.max_tokens);
    tokens
}

/// Normalizes and returns only the token surfaces.
pub fn tokenize_surfaces(text: &str, cfg: &NormalizationConfig) -> Vec<String> {
    tokenize(text, cfg).into_iter().map(|t| t.surface).collect()
}

pub fn detokenize<S: AsRef<str>>(tokens: &[S]) -> String {
    let mut out = String::new();
    let mut glue_next = true;
    for token in tokens {
        let token = token.as_ref().trim();
        let Some(first) = token.chars().next() else {
            continue;
        };
        if !glue_next && !ATTACH_LEFT.contains(&first) {
            out.push(' ');
        }
        out.push_str(token);
        glue_next = token.chars().last().is_some_and(|c| ATTACH_RIGHT.contains(&c));
    }
    out
}

/// [`detokenize`] followed by optional detruecasing, which uppercases the
/// first Latin letter of the output.
pub fn detokenize_with<S: AsRef<str>>(tokens: &[S], detruecase: bool) -> String {
    let text = detokenize(tokens);
    if !detruecase {
        return text;
    }
    match text.char_indices().find(|(_, c)| is_latin_letter(*c)) {
        Some((i, c)) => {
            let mut out = String::with_capacity(text.len() + 2);
            out.push_str(&text[..i]);
            out.extend(c.to_uppercase());
            out.push_str(&text[i + c.len_utf8()..]);
            out
        }
        None => text,
    }
}
