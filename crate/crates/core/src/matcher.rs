//! Whole-string regular expressions shared by graph predicates, catalog
//! filters and the characterization dictionary.
//!
//! Patterns are anchored exactly as written: `.*Heating.*` matches any name
//! containing `Heating`, while `Heating` only matches the literal name.

use alloc::format;
use alloc::string::{String, ToString};
use core::fmt;

use regex::Regex;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("bad regex {pattern:?}: {reason}")]
pub struct RegexError {
    pub pattern: String,
    pub reason: String,
}

/// A compiled pattern that must match the entire input.
#[derive(Clone)]
pub struct FullMatch {
    source: String,
    regex: Regex,
}

impl FullMatch {
    pub fn new(pattern: &str) -> Result<Self, RegexError> {
        // Compile the bare pattern first so errors point at what the user wrote.
        Regex::new(pattern).map_err(|e| RegexError {
            pattern: pattern.to_string(),
            reason: e.to_string(),
        })?;
        let regex = Regex::new(&format!("^(?:{pattern})$")).map_err(|e| RegexError {
            pattern: pattern.to_string(),
            reason: e.to_string(),
        })?;
        Ok(FullMatch {
            source: pattern.to_string(),
            regex,
        })
    }

    pub fn is_match(&self, haystack: &str) -> bool {
        self.regex.is_match(haystack)
    }

    pub fn as_str(&self) -> &str {
        &self.source
    }
}

impl fmt::Debug for FullMatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_tuple("FullMatch").field(&self.source).finish()
    }
}
