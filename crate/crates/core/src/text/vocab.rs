//! Closed vocabulary with fixed reserved ids.

use crate::{Error, Result};
use std::collections::{BTreeMap, HashMap};

pub const PAD_ID: u32 = 0;
pub const UNK_ID: u32 = 1;
pub const CLS_ID: u32 = 2;
pub const SEP_ID: u32 = 3;
pub const MASK_ID: u32 = 4;

pub const RESERVED: [&str; 5] = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"];

/// First id available for masked-token replacement sampling.
pub const FIRST_REGULAR_ID: u32 = 5;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocab {
    /// Build from token counts: tokens seen at least `min_count` times enter
    /// the vocabulary. `always_include` (tag-name tokens and similar query
    /// text) is added regardless of frequency. Ordering is lexicographic,
    /// so the result is independent of iteration order.
    pub fn build<'a>(
        counts: impl IntoIterator<Item = (&'a str, usize)>,
        always_include: impl IntoIterator<Item = &'a str>,
        min_count: usize,
    ) -> Self {
        let mut keep: BTreeMap<&str, ()> = BTreeMap::new();
        for (tok, n) in counts {
            if n >= min_count {
                keep.insert(tok, ());
            }
        }
        for tok in always_include {
            keep.insert(tok, ());
        }
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        tokens.extend(keep.keys().map(|s| s.to_string()));
        Self::from_tokens(tokens).expect("reserved prefix is well-formed")
    }

    /// Reconstruct from a stored token list (checkpoint metadata). The list
    /// must start with the five reserved tokens and contain no duplicates.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < RESERVED.len() {
            return Err(Error::Vocab("token list shorter than reserved set".into()));
        }
        for (i, r) in RESERVED.iter().enumerate() {
            if tokens[i] != *r {
                return Err(Error::Vocab(format!(
                    "reserved slot {i} holds {:?}, expected {r:?}",
                    tokens[i]
                )));
            }
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Vocab(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Id for a token, falling back to `[UNK]`.
    pub fn id_of(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK_ID)
    }

    pub fn token_of(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode<'a>(&self, tokens: impl IntoIterator<Item = &'a str>) -> Vec<u32> {
        tokens.into_iter().map(|t| self.id_of(t)).collect()
    }
}

/// Count tokens across texts (tokenizer rules applied per text).
pub fn count_tokens<'a>(texts: impl IntoIterator<Item = &'a str>) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for text in texts {
        for tok in super::tokenize::tokenize(text) {
            *counts.entry(tok.text).or_insert(0) += 1;
        }
    }
    counts
}
