//! Corpus model and on-disk layout.
//!
//! A corpus directory holds `schema.json` (array of tag records),
//! `docs/<doc_id>.txt` (UTF-8 text, one clause per line), and
//! `annotations.jsonl` (one record per document mapping tag id to its gold
//! value and character span, or null when absent). Character offsets count
//! Unicode scalar values.

use super::tokenize::char_slice;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

/// Value class of a tag. Several tags may share one class; telling them
/// apart then requires context, which is the hard part of the task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DType {
    Date,
    Address,
    OrgName,
    Phone,
    Money,
    Code,
}

impl DType {
    pub fn as_str(self) -> &'static str {
        match self {
            DType::Date => "date",
            DType::Address => "address",
            DType::OrgName => "org_name",
            DType::Phone => "phone",
            DType::Money => "money",
            DType::Code => "code",
        }
    }
}

/// A field to extract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TagSpec {
    pub tag_id: u32,
    pub name: String,
    pub dtype: DType,
}

/// Gold value of one tag in one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GoldSpan {
    pub value: String,
    pub char_start: usize,
    pub char_end: usize,
}

#[derive(Debug, Clone)]
pub struct AnnotatedDocument {
    pub doc_id: String,
    pub text: String,
    /// Character ranges of the sentences (clause lines), in order.
    pub sentences: Vec<(usize, usize)>,
    /// Per tag id: the gold span, or `None` when the document has no value
    /// for that tag.
    pub gold: BTreeMap<u32, Option<GoldSpan>>,
}

impl AnnotatedDocument {
    /// Every present gold span must lie in bounds and read back its value.
    pub fn validate(&self) -> Result<()> {
        let total = self.text.chars().count();
        for (tag_id, gold) in &self.gold {
            if let Some(g) = gold {
                if g.char_end > total || g.char_start >= g.char_end {
                    return Err(Error::Corpus(format!(
                        "doc {} tag {tag_id}: span {}..{} out of bounds",
                        self.doc_id, g.char_start, g.char_end
                    )));
                }
                let slice = char_slice(&self.text, g.char_start, g.char_end);
                if slice != g.value {
                    return Err(Error::Corpus(format!(
                        "doc {} tag {tag_id}: text at span is {slice:?}, annotation says {:?}",
                        self.doc_id, g.value
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Sentence segmentation rule for corpus text: one non-empty line per
/// sentence. Ranges cover each line's characters.
pub fn sentence_ranges(text: &str) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    let mut idx = 0usize;
    for c in text.chars() {
        if c == '\n' {
            if let Some(s) = start.take() {
                out.push((s, idx));
            }
        } else if start.is_none() && !c.is_whitespace() {
            start = Some(idx);
        }
        idx += 1;
    }
    if let Some(s) = start {
        out.push((s, idx));
    }
    out
}

#[derive(Debug, Clone)]
pub struct Corpus {
    pub schema: Vec<TagSpec>,
    pub docs: Vec<AnnotatedDocument>,
}

impl Corpus {
    pub fn tag(&self, tag_id: u32) -> Option<&TagSpec> {
        self.schema.iter().find(|t| t.tag_id == tag_id)
    }

    /// Deterministic split by doc_id hash rank: documents are ordered by
    /// (fnv1a(doc_id), doc_id) and the first `ceil(fraction * n)` become the
    /// training set. Returns (train, test) indices into `docs`.
    pub fn split(&self, train_fraction: f64) -> (Vec<usize>, Vec<usize>) {
        let mut ranked: Vec<(u64, &str, usize)> = self
            .docs
            .iter()
            .enumerate()
            .map(|(i, d)| (fnv1a(d.doc_id.as_bytes()), d.doc_id.as_str(), i))
            .collect();
        ranked.sort();
        let n_train = ((self.docs.len() as f64) * train_fraction).ceil() as usize;
        let mut train: Vec<usize> = ranked[..n_train.min(ranked.len())]
            .iter()
            .map(|r| r.2)
            .collect();
        let mut test: Vec<usize> = ranked[n_train.min(ranked.len())..]
            .iter()
            .map(|r| r.2)
            .collect();
        train.sort();
        test.sort();
        (train, test)
    }
}

/// 64-bit FNV-1a; stable across platforms and releases.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[derive(Serialize, Deserialize)]
struct AnnotationRecord {
    doc_id: String,
    gold: BTreeMap<String, Option<GoldSpan>>,
}

pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir.join("docs"))?;
    let mut schema_json = serde_json::to_string_pretty(&corpus.schema)?;
    schema_json.push('\n');
    fs::write(dir.join("schema.json"), schema_json)?;

    let mut lines = String::new();
    for doc in &corpus.docs {
        fs::write(dir.join("docs").join(format!("{}.txt", doc.doc_id)), &doc.text)?;
        let record = AnnotationRecord {
            doc_id: doc.doc_id.clone(),
            gold: doc
                .gold
                .iter()
                .map(|(k, v)| (format!("{k}"), v.clone()))
                .collect(),
        };
        lines.push_str(&serde_json::to_string(&record)?);
        lines.push('\n');
    }
    fs::write(dir.join("annotations.jsonl"), lines)?;
    Ok(())
}

pub fn load_schema(path: &Path) -> Result<Vec<TagSpec>> {
    let raw = fs::read_to_string(path)?;
    let schema: Vec<TagSpec> = serde_json::from_str(&raw)?;
    validate_schema(&schema)?;
    Ok(schema)
}

pub fn validate_schema(schema: &[TagSpec]) -> Result<()> {
    if schema.is_empty() {
        return Err(Error::Schema("schema has no tags".into()));
    }
    let mut seen = std::collections::HashSet::new();
    for tag in schema {
        if !seen.insert(tag.tag_id) {
            return Err(Error::Schema(format!("duplicate tag_id {}", tag.tag_id)));
        }
        if tag.name.trim().is_empty() {
            return Err(Error::Schema(format!("tag {} has an empty name", tag.tag_id)));
        }
    }
    Ok(())
}

pub fn load_corpus(dir: &Path) -> Result<Corpus> {
    let schema = load_schema(&dir.join("schema.json"))?;
    let raw = fs::read_to_string(dir.join("annotations.jsonl"))?;
    let mut docs = Vec::new();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: AnnotationRecord = serde_json::from_str(line).map_err(|e| {
            Error::Corpus(format!("annotations.jsonl line {}: {e}", lineno + 1))
        })?;
        let text = fs::read_to_string(dir.join("docs").join(format!("{}.txt", record.doc_id)))?;
        let mut gold = BTreeMap::new();
        for (k, v) in record.gold {
            let tag_id: u32 = k
                .parse()
                .map_err(|_| Error::Corpus(format!("bad tag id key {k:?}")))?;
            gold.insert(tag_id, v);
        }
        let doc = AnnotatedDocument {
            doc_id: record.doc_id,
            sentences: sentence_ranges(&text),
            text,
            gold,
        };
        doc.validate()?;
        docs.push(doc);
    }
    if docs.is_empty() {
        return Err(Error::Corpus(format!("no documents found in {}", dir.display())));
    }
    Ok(Corpus { schema, docs })
}
