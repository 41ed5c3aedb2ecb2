//! Versioned extraction patterns per value class. The book is data, not
//! code: the repository ships `data/regexbook.json`, and a custom book can
//! be loaded from disk. Patterns are ordered; the first match wins.
//!
//! Pattern syntax is the `regex` crate subset actually used here: literals,
//! character classes, quantifiers, alternation, and word-boundary anchors.
//! Backreferences are unsupported by construction.

use crate::text::corpus::DType;
use crate::{Error, Result};
use regex::Regex;
use std::collections::BTreeMap;
use std::path::Path;

pub const DEFAULT_BOOK_JSON: &str = include_str!("../../data/regexbook.json");

#[derive(Debug)]
pub struct RegexBook {
    patterns: BTreeMap<String, Vec<Regex>>,
}

impl RegexBook {
    pub fn default_book() -> Result<Self> {
        Self::from_json(DEFAULT_BOOK_JSON)
    }

    pub fn from_json(json: &str) -> Result<Self> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(json)?;
        let mut patterns = BTreeMap::new();
        for (dtype, pats) in raw {
            let compiled: Vec<Regex> = pats
                .iter()
                .map(|p| {
                    Regex::new(p).map_err(|e| {
                        Error::Config(format!("regex {p:?} for {dtype} does not compile: {e}"))
                    })
                })
                .collect::<Result<_>>()?;
            patterns.insert(dtype, compiled);
        }
        Ok(Self { patterns })
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn patterns_for(&self, dtype: DType) -> &[Regex] {
        self.patterns
            .get(dtype.as_str())
            .map(|v| v.as_slice())
            .unwrap_or(&[])
    }

    /// First match of the first matching pattern, as character offsets into
    /// `text` plus the matched string.
    pub fn extract(&self, dtype: DType, text: &str) -> Option<(usize, usize, String)> {
        for re in self.patterns_for(dtype) {
            if let Some(m) = re.find(text) {
                let char_start = text[..m.start()].chars().count();
                let char_len = m.as_str().chars().count();
                return Some((char_start, char_start + char_len, m.as_str().to_string()));
            }
        }
        None
    }
}
