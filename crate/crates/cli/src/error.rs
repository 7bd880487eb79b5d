use std::fmt::Display;

use fsmt_core::corpus::CorpusError;

/// A failure reported as `error[category]: message` on one line.
#[derive(Debug)]
pub struct CliError {
    pub category: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(category: &'static str, message: impl Into<String>) -> Self {
        Self {
            category,
            message: message.into(),
        }
    }

    pub fn corpus(e: CorpusError) -> Self {
        let category = match e {
            CorpusError::NotFound(_) => "missing-file",
            CorpusError::Json(_) => "lexicon",
            _ => "corpus",
        };
        Self::new(category, e.to_string())
    }

    pub fn line(&self) -> String {
        let message = self.message.split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}]: {message}", self.category)
    }
}

pub trait Context<T> {
    fn category<F: FnOnce() -> String>(self, category: &'static str, what: F) -> Result<T, CliError>;
}

impl<T, E: Display> Context<T> for Result<T, E> {
    fn category<F: FnOnce() -> String>(self, category: &'static str, what: F) -> Result<T, CliError> {
        self.map_err(|e| CliError::new(category, format!("{}: {e}", what())))
    }
}
