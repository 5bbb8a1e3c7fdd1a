//! Tokenization with regex masking of known dynamic values.

use alloc::string::{String, ToString};
use alloc::vec::Vec;

use regex_automata::meta::Regex;
use serde::{Deserialize, Serialize};

use crate::drain::WILDCARD;
use crate::error::{Error, Result};

/// A compiled regex kept together with its source text, serialized as the text.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Pattern {
    source: String,
    regex: Regex,
}

impl Pattern {
    pub fn new(source: &str) -> Result<Self> {
        let regex = Regex::new(source).map_err(|e| Error::InvalidPattern {
            pattern: source.to_string(),
            reason: e.to_string(),
        })?;
        Ok(Self {
            source: source.to_string(),
            regex,
        })
    }

    /// Pattern that must match the whole haystack. The stored source carries
    /// the anchors so it deserializes to the same matcher.
    pub fn anchored(source: &str) -> Result<Self> {
        let p = Self::new(&alloc::format!("^(?:{source})$"))?;
        if p.regex.is_match("") {
            return Err(Error::InvalidPattern {
                pattern: source.to_string(),
                reason: "pattern matches the empty string".into(),
            });
        }
        Ok(p)
    }

    pub fn source(&self) -> &str {
        &self.source
    }

    pub fn is_match(&self, haystack: &str) -> bool {
        self.regex.is_match(haystack)
    }

    /// Replaces every non-empty match with `<*>`.
    pub fn mask(&self, haystack: &str) -> Option<String> {
        let mut out = String::new();
        let mut last = 0;
        for m in self.regex.find_iter(haystack) {
            if m.is_empty() {
                continue;
            }
            out.push_str(&haystack[last..m.start()]);
            out.push_str(WILDCARD);
            last = m.end();
        }
        if last == 0 {
            return None;
        }
        out.push_str(&haystack[last..]);
        Some(out)
    }
}

impl TryFrom<String> for Pattern {
    type Error = Error;

    fn try_from(source: String) -> Result<Self> {
        Pattern::new(&source)
    }
}

impl From<Pattern> for String {
    fn from(p: Pattern) -> String {
        p.source
    }
}

impl PartialEq for Pattern {
    fn eq(&self, other: &Self) -> bool {
        self.source == other.source
    }
}

/// A message split on whitespace, before and after masking. Both vectors have
/// the same length.
#[derive(Clone, Debug, PartialEq)]
pub struct Tokenized {
    pub raw: Vec<String>,
    pub masked: Vec<String>,
}

/// Ordered masking rules applied to each whitespace token.
///
/// Rules see one token at a time, so a rule cannot match across whitespace.
/// Applying rules per token keeps every masked token aligned with the
/// original substring it came from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Preprocessor {
    rules: Vec<Pattern>,
}

impl Preprocessor {
    pub fn new(rules: Vec<Pattern>) -> Self {
        Self { rules }
    }

    pub fn from_sources<S: AsRef<str>>(sources: &[S]) -> Result<Self> {
        sources
            .iter()
            .map(|s| Pattern::new(s.as_ref()))
            .collect::<Result<Vec<_>>>()
            .map(Self::new)
    }

    pub fn rules(&self) -> &[Pattern] {
        &self.rules
    }

    pub fn tokenize(&self, text: &str) -> Result<Tokenized> {
        let raw: Vec<String> = text.split_whitespace().map(str::to_string).collect();
        if raw.is_empty() {
            return Err(Error::EmptyMessage);
        }
        let masked = raw.iter().map(|t| self.mask_token(t)).collect();
        Ok(Tokenized { raw, masked })
    }

    /// Masked token sequence only.
    pub fn preprocess(&self, text: &str) -> Result<Vec<String>> {
        self.tokenize(text).map(|t| t.masked)
    }

    fn mask_token(&self, token: &str) -> String {
        let mut current = token.to_string();
        for rule in &self.rules {
            if let Some(masked) = rule.mask(&current) {
                current = masked;
            }
        }
        current
    }
}
