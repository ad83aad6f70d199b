//! Token-level linguistic classes used by content-based routing and by the
//! word-boundary switching rule.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{Error, Result};

const DEFAULT_LEXICON: &str = include_str!("../data/function_words.v1.txt");

/// Closed-class word list (one lowercase word per line, `#` comments).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Lexicon {
    words: HashSet<String>,
}

impl Lexicon {
    /// The English function-word list shipped with the crate.
    pub fn english() -> Self {
        Self::parse(DEFAULT_LEXICON)
    }

    pub fn parse(text: &str) -> Self {
        let words = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_lowercase)
            .collect();
        Self { words }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let raw = std::fs::read_to_string(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Ok(Self::parse(&raw))
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(&word.to_lowercase())
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

impl Default for Lexicon {
    fn default() -> Self {
        Self::english()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenClass {
    PunctOrFormat,
    FunctionWordStart,
    ContentWordStart,
    WordContinuation,
}

impl TokenClass {
    pub fn is_word_start(self) -> bool {
        matches!(self, TokenClass::FunctionWordStart | TokenClass::ContentWordStart)
    }
}

/// Does `surface` begin a new whitespace-delimited unit? `prev` is the
/// preceding token's surface, `None` at sequence start.
pub fn is_word_boundary(surface: &str, prev: Option<&str>) -> bool {
    match prev {
        None => true,
        Some(p) => surface.is_empty() || surface.starts_with(char::is_whitespace) || p.ends_with(char::is_whitespace),
    }
}

/// A surface with no letters or digits once whitespace markers are removed:
/// punctuation, symbols, control characters, or pure whitespace.
pub fn is_punct_or_format(surface: &str) -> bool {
    !surface.trim().chars().any(char::is_alphanumeric)
}

/// Leading word of a surface: whitespace stripped, cut at the first
/// character that is neither alphanumeric nor an apostrophe.
fn leading_word(surface: &str) -> String {
    surface
        .trim_start()
        .chars()
        .take_while(|c| c.is_alphanumeric() || *c == '\'')
        .flat_map(char::to_lowercase)
        .collect()
}

/// Classify a token given whether it starts a word. The token's own surface
/// stands in for the completed word.
pub fn classify_token(surface: &str, at_boundary: bool, lexicon: &Lexicon) -> TokenClass {
    classify_with_word(surface, at_boundary, None, lexicon)
}

/// Like [`classify_token`], with the full word the token begins when it is
/// known (multi-token words completed by the same model).
pub fn classify_with_word(surface: &str, at_boundary: bool, completed: Option<&str>, lexicon: &Lexicon) -> TokenClass {
    if is_punct_or_format(surface) {
        return TokenClass::PunctOrFormat;
    }
    if !at_boundary {
        return TokenClass::WordContinuation;
    }
    let word = completed.map(leading_word).unwrap_or_else(|| leading_word(surface));
    if lexicon.contains(&word) {
        TokenClass::FunctionWordStart
    } else {
        TokenClass::ContentWordStart
    }
}

/// Classify the token at `index` of a surface sequence.
pub fn classify_in_sequence(surfaces: &[&str], index: usize, lexicon: &Lexicon) -> TokenClass {
    let prev = index.checked_sub(1).map(|i| surfaces[i]);
    classify_token(surfaces[index], is_word_boundary(surfaces[index], prev), lexicon)
}
