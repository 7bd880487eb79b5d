//! Formality matched accuracy.
//!
//! For each entry `j` with hypothesis `H_j`, formal reference `F_j` and
//! informal reference `I_j`, let `Φ(R)` be the set of annotated phrases of
//! reference `R`. Then
//!
//! ```text
//! match_f = Σ_j [Φ(F_j) ∈ H_j ∧ Φ(I_j) ∉ H_j]
//! match_i = Σ_j [Φ(F_j) ∉ H_j ∧ Φ(I_j) ∈ H_j]
//! acc_x   = match_x / (match_f + match_i)
//! ```
//!
//! Membership is token-subsequence containment in the normalized hypothesis.
//! With [`MatchMode::All`] every phrase must occur; with [`MatchMode::Any`]
//! one is enough. An empty phrase set never occurs.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::lexicon::AnnotatedSentence;
use crate::textnorm::{normalize, split_tokens, NormalizationConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MatchMode {
    #[default]
    All,
    Any,
}

impl std::str::FromStr for MatchMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "all" => Ok(Self::All),
            "any" => Ok(Self::Any),
            other => Err(format!("unknown match mode `{other}` (expected all or any)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EvalEntry {
    pub hypothesis: String,
    pub formal_ref: AnnotatedSentence,
    pub informal_ref: AnnotatedSentence,
}

pub type EvalSet = [EvalEntry];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub match_f: usize,
    pub match_i: usize,
    /// Absent when no entry matched either register.
    pub acc_f: Option<f64>,
    pub acc_i: Option<f64>,
    pub neutral_or_mixed: usize,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MetricError {
    #[error("evaluation set is empty")]
    EmptyEvalSet,
}

pub fn phi(reference: &AnnotatedSentence) -> BTreeSet<String> {
    let cfg = NormalizationConfig::default();
    reference
        .spans
        .iter()
        .map(|s| normalize(&s.phrase, &cfg))
        .filter(|p| !p.is_empty())
        .collect()
}

fn contains_sequence(haystack: &[String], needle: &[&str]) -> bool {
    !needle.is_empty()
        && haystack.len() >= needle.len()
        && haystack
            .windows(needle.len())
            .any(|w| w.iter().zip(needle).all(|(a, b)| a == b))
}

/// Hypothesis pre-tokenized once for repeated membership tests.
struct Hypothesis(Vec<String>);

impl Hypothesis {
    fn new(text: &str) -> Self {
        let normalized = normalize(text, &NormalizationConfig::default());
        Self(split_tokens(&normalized).into_iter().map(|t| t.surface).collect())
    }

    fn contains(&self, phrases: &BTreeSet<String>, mode: MatchMode) -> bool {
        if phrases.is_empty() {
            return false;
        }
        let mut present = phrases.iter().map(|p| {
            let words: Vec<&str> = p.split_whitespace().collect();
            contains_sequence(&self.0, &words)
        });
        match mode {
            MatchMode::All => present.all(|b| b),
            MatchMode::Any => present.any(|b| b),
        }
    }
}

pub fn contains(hypothesis: &str, phrases: &BTreeSet<String>, mode: MatchMode) -> bool {
    Hypothesis::new(hypothesis).contains(phrases, mode)
}

/// Which register, if any, a single entry matches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EntryOutcome {
    Formal,
    Informal,
    NeutralOrMixed,
}

pub fn score_entry(entry: &EvalEntry, mode: MatchMode) -> EntryOutcome {
    let hyp = Hypothesis::new(&entry.hypothesis);
    let has_f = hyp.contains(&phi(&entry.formal_ref), mode);
    let has_i = hyp.contains(&phi(&entry.informal_ref), mode);
    match (has_f, has_i) {
        (true, false) => EntryOutcome::Formal,
        (false, true) => EntryOutcome::Informal,
        _ => EntryOutcome::NeutralOrMixed,
    }
}

pub fn matched_accuracy(eval_set: &EvalSet, mode: MatchMode) -> Result<MetricResult, MetricError> {
    if eval_set.is_empty() {
        return Err(MetricError::EmptyEvalSet);
    }
    let (mut match_f, mut match_i, mut other) = (0, 0, 0);
    for entry in eval_set {
        match score_entry(entry, mode) {
            EntryOutcome::Formal => match_f += 1,
            EntryOutcome::Informal => match_i += 1,
            EntryOutcome::NeutralOrMixed => other += 1,
        }
    }
    let matched = match_f + match_i;
    let ratio = |m: usize| (matched > 0).then(|| m as f64 / matched as f64);
    Ok(MetricResult {
        match_f,
        match_i,
        acc_f: ratio(match_f),
        acc_i: ratio(match_i),
        neutral_or_mixed: other,
        n: eval_set.len(),
    })
}
