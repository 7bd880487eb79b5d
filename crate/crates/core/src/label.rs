use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Three-way formality register of a sentence or phrase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FormalityLabel {
    Formal,
    Informal,
    Neutral,
}

impl FormalityLabel {
    pub const ALL: [FormalityLabel; 3] = [Self::Formal, Self::Informal, Self::Neutral];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Formal => "formal",
            Self::Informal => "informal",
            Self::Neutral => "neutral",
        }
    }

    /// The opposite register; neutral maps to itself.
    pub fn swapped(self) -> Self {
        match self {
            Self::Formal => Self::Informal,
            Self::Informal => Self::Formal,
            Self::Neutral => Self::Neutral,
        }
    }

    /// Opening and closing annotation tags. Neutral has none.
    pub fn tags(self) -> Option<(&'static str, &'static str)> {
        match self {
            Self::Formal => Some(("[F]", "[/F]")),
            Self::Informal => Some(("[I]", "[/I]")),
            Self::Neutral => None,
        }
    }
}

impl fmt::Display for FormalityLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown formality label `{0}` (expected formal, informal or neutral)")]
pub struct ParseLabelError(pub String);

impl FromStr for FormalityLabel {
    type Err = ParseLabelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "formal" | "f" => Ok(Self::Formal),
            "informal" | "i" => Ok(Self::Informal),
            "neutral" | "n" => Ok(Self::Neutral),
            _ => Err(ParseLabelError(s.to_string())),
        }
    }
}
