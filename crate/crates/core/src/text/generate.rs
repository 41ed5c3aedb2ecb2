//! Deterministic synthetic corpus of numbered-clause procurement notices.
//!
//! Each document embeds one gold value per tag (about 10% of (doc, tag)
//! pairs are absent), surrounded by filler clauses. Same-class tags are
//! distinguished only by their cue phrases, which quote the tag name, so a
//! model must read the query to pick the right value. Code values are random
//! alphanumerics drawn so that (a) most of their tokens fall below the
//! vocabulary frequency threshold and (b) the baseline's regex book cannot
//! match them.

use super::corpus::{
    sentence_ranges, validate_schema, AnnotatedDocument, Corpus, DType, GoldSpan, TagSpec,
};
use super::tokenize::tokenize;
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, HashSet};

/// Geometry the generator avoids breaking: gold token spans never straddle a
/// multiple of the owning tag's default window capacity.
#[derive(Debug, Clone, Copy)]
pub struct GeneratorConfig {
    pub window_len: usize,
    pub absent_rate: f64,
    pub min_clauses: usize,
    pub max_clauses: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            window_len: 128,
            absent_rate: 0.10,
            min_clauses: 22,
            max_clauses: 36,
        }
    }
}

pub fn default_schema() -> Vec<TagSpec> {
    let spec = |tag_id, name: &str, dtype| TagSpec {
        tag_id,
        name: name.to_string(),
        dtype,
    };
    vec![
        spec(0, "procurement start date", DType::Date),
        spec(1, "bid deadline date", DType::Date),
        spec(2, "payer office address", DType::Address),
        spec(3, "ceremony venue address", DType::Address),
        spec(4, "contracting authority name", DType::OrgName),
        spec(5, "inquiry phone number", DType::Phone),
        spec(6, "estimated contract value", DType::Money),
        spec(7, "case reference code", DType::Code),
    ]
}

const STREETS: [&str; 18] = [
    "Harborview", "Northbridge", "Alderwood", "Crestline", "Mapleton", "Stonegate", "Riverbend",
    "Lakemont", "Fairfield", "Westhollow", "Birchwood", "Clearwater", "Summerhill", "Oakridge",
    "Pinecrest", "Eastgate", "Silverbrook", "Windmere",
];
const STREET_SUFFIXES: [&str; 5] = ["Avenue", "Street", "Boulevard", "Road", "Lane"];
const CITIES: [&str; 12] = [
    "Eastvale", "Northfield", "Westbrook", "Southport", "Greenford", "Redwater", "Stonehaven",
    "Brighthollow", "Claymore", "Duskfield", "Amberton", "Myles",
];
const ORG_REGIONS: [&str; 10] = [
    "Northern", "Southern", "Eastern", "Western", "Central", "Coastal", "Highland", "Metropolitan",
    "Provincial", "Regional",
];
const ORG_DOMAINS: [&str; 8] = [
    "Utilities", "Works", "Infrastructure", "Logistics", "Energy", "Transport", "Facilities",
    "Resources",
];
const ORG_SUFFIXES: [&str; 5] = ["Bureau", "Agency", "Authority", "Division", "Commission"];

const FILLERS: [&str; 18] = [
    "All bidders shall comply with the general conditions stated in annex {A}.",
    "Documents received after the stated time will not be considered for award.",
    "The supplier warrants that all delivered goods conform to the technical annex.",
    "Any amendment to this notice will be published on the official bulletin board.",
    "Participation requires a valid qualification certificate issued beforehand.",
    "Payment terms follow the standard schedule described in the framework agreement.",
    "Each lot will be awarded separately according to the stated evaluation criteria.",
    "The successful bidder must provide a performance bond within the agreed period.",
    "Inspection of goods occurs upon delivery at the designated receiving point.",
    "Incomplete applications are returned to the sender without further review.",
    "Tender documents may be obtained from the issuing office during business hours.",
    "The issuing office reserves the right to cancel this procedure at any stage.",
    "Samples provided for evaluation purposes are not returned to the bidders.",
    "Subcontracting requires prior written approval from the contracting officer.",
    "All prices quoted shall remain firm for the entire agreement period.",
    "Supporting material must be bound and submitted in duplicate as instructed in section {n}.",
    "Late deliveries incur the penalties described in the special conditions.",
    "Award results are communicated in writing to every participating firm.",
];

/// Cue templates: each quotes the tag name so same-class tags stay
/// distinguishable by context.
const CUE_TEMPLATES: [(&str, &str); 3] = [
    ("The {name} for this procurement is ", "."),
    ("The {name} is hereby fixed as ", "."),
    ("For the present case the {name} shall be ", "."),
];

fn render_value(dtype: DType, rng: &mut ChaCha8Rng) -> String {
    match dtype {
        DType::Date => {
            let y = rng.random_range(2015..=2025);
            let m = rng.random_range(1..=12);
            let d = rng.random_range(1..=28);
            format!("{y}/{m:02}/{d:02}")
        }
        DType::Address => {
            let a = rng.random_range(1..=99);
            let b = rng.random_range(1..=40);
            let street = STREETS[rng.random_range(0..STREETS.len())];
            let suffix = STREET_SUFFIXES[rng.random_range(0..STREET_SUFFIXES.len())];
            let city = CITIES[rng.random_range(0..CITIES.len())];
            format!("{a}-{b} {street} {suffix}, {city}")
        }
        DType::OrgName => {
            let r = ORG_REGIONS[rng.random_range(0..ORG_REGIONS.len())];
            let d = ORG_DOMAINS[rng.random_range(0..ORG_DOMAINS.len())];
            let s = ORG_SUFFIXES[rng.random_range(0..ORG_SUFFIXES.len())];
            format!("{r} {d} Procurement {s}")
        }
        DType::Phone => {
            let a = rng.random_range(1..=9);
            let b = rng.random_range(1000..=9999);
            let c = rng.random_range(1000..=9999);
            format!("0{a}-{b}-{c}")
        }
        DType::Money => {
            let m = rng.random_range(1..=99);
            let k = rng.random_range(0..=999);
            let u = rng.random_range(0..=999);
            format!("¥{m},{k:03},{u:03}")
        }
        DType::Code => {
            // Hyphenated mixed alphanumerics: off-pattern for the regex book
            // and mostly single-occurrence tokens (below the vocab threshold).
            let letters: Vec<char> = ('A'..='Z').collect();
            let l1 = letters[rng.random_range(0..26)];
            let l2 = letters[rng.random_range(0..26)];
            let d1 = rng.random_range(10..=99);
            let l3 = letters[rng.random_range(0..26)];
            let d2 = rng.random_range(0..=9);
            format!("{l1}{l2}-{d1}{l3}{d2}")
        }
    }
}

fn render_filler(rng: &mut ChaCha8Rng) -> String {
    let template = FILLERS[rng.random_range(0..FILLERS.len())];
    let annex = ["A", "B", "C", "D", "E", "F"][rng.random_range(0..6)];
    let section = rng.random_range(2..=19).to_string();
    template.replace("{A}", annex).replace("{n}", &section)
}

enum ClauseItem {
    Filler,
    Value(usize), // index into schema
}

/// `generate_corpus(n_docs, schema, seed)`: byte-identical output for
/// identical arguments.
pub fn generate_corpus(n_docs: usize, schema: &[TagSpec], seed: u64) -> Result<Corpus> {
    generate_corpus_with(n_docs, schema, seed, &GeneratorConfig::default())
}

pub fn generate_corpus_with(
    n_docs: usize,
    schema: &[TagSpec],
    seed: u64,
    cfg: &GeneratorConfig,
) -> Result<Corpus> {
    if n_docs == 0 {
        return Err(Error::Config("n_docs must be at least 1".into()));
    }
    validate_schema(schema)?;
    let n_date = schema.iter().filter(|t| t.dtype == DType::Date).count();
    let n_addr = schema.iter().filter(|t| t.dtype == DType::Address).count();
    let n_code = schema.iter().filter(|t| t.dtype == DType::Code).count();
    if n_date < 2 || n_addr < 2 || n_code != 1 {
        return Err(Error::Schema(format!(
            "generator schema needs >=2 date tags, >=2 address tags, exactly 1 code tag; \
             got {n_date}/{n_addr}/{n_code}"
        )));
    }

    // Window capacity per tag for boundary avoidance.
    let capacities: Vec<usize> = schema
        .iter()
        .map(|t| {
            let tag_len = tokenize(&t.name).len();
            cfg.window_len
                .checked_sub(tag_len + 3)
                .filter(|&c| c > 0)
                .ok_or_else(|| {
                    Error::Schema(format!(
                        "tag {:?} does not fit window length {}",
                        t.name, cfg.window_len
                    ))
                })
        })
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut docs = Vec::with_capacity(n_docs);
    for doc_idx in 0..n_docs {
        docs.push(generate_doc(doc_idx, schema, &capacities, cfg, &mut rng)?);
    }
    Ok(Corpus {
        schema: schema.to_vec(),
        docs,
    })
}

fn generate_doc(
    doc_idx: usize,
    schema: &[TagSpec],
    capacities: &[usize],
    cfg: &GeneratorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AnnotatedDocument> {
    let doc_id = format!("doc{doc_idx:05}");

    // Draw values, all distinct within the document.
    let mut used = HashSet::new();
    let mut values: Vec<Option<String>> = Vec::with_capacity(schema.len());
    for tag in schema {
        if rng.random_bool(cfg.absent_rate) {
            values.push(None);
            continue;
        }
        let mut v = render_value(tag.dtype, rng);
        let mut guard = 0;
        while !used.insert(v.clone()) {
            v = render_value(tag.dtype, rng);
            guard += 1;
            assert!(guard < 100, "value space exhausted");
        }
        values.push(Some(v));
    }

    let total_clauses = rng.random_range(cfg.min_clauses..=cfg.max_clauses);
    let n_values = values.iter().filter(|v| v.is_some()).count();
    let n_filler = total_clauses.saturating_sub(n_values).max(2);
    let mut items: Vec<ClauseItem> = Vec::with_capacity(n_filler + n_values);
    for _ in 0..n_filler {
        items.push(ClauseItem::Filler);
    }
    for (i, v) in values.iter().enumerate() {
        if v.is_some() {
            items.push(ClauseItem::Value(i));
        }
    }
    items.shuffle(rng);

    let mut text = String::new();
    let mut char_count = 0usize;
    let mut token_count = 0usize;
    let mut clause_no = 0usize;
    let mut gold: BTreeMap<u32, Option<GoldSpan>> = BTreeMap::new();
    for (tag, v) in schema.iter().zip(&values) {
        if v.is_none() {
            gold.insert(tag.tag_id, None);
        }
    }

    // Appends "{no}. {body}" as a new line; returns the clause's char start.
    fn push_clause(
        text: &mut String,
        char_count: &mut usize,
        token_count: &mut usize,
        clause_no: &mut usize,
        body: &str,
    ) -> usize {
        *clause_no += 1;
        let clause = format!("{clause_no}. {body}");
        let start = if text.is_empty() {
            0
        } else {
            text.push('\n');
            *char_count += 1;
            *char_count
        };
        *char_count += clause.chars().count();
        *token_count += tokenize(&clause).len();
        text.push_str(&clause);
        start
    }

    for item in items {
        match item {
            ClauseItem::Filler => {
                let body = render_filler(rng);
                push_clause(&mut text, &mut char_count, &mut token_count, &mut clause_no, &body);
            }
            ClauseItem::Value(tag_idx) => {
                let tag = &schema[tag_idx];
                let value = values[tag_idx].as_ref().unwrap();
                let capacity = capacities[tag_idx];
                let (pre_t, post_t) = CUE_TEMPLATES[rng.random_range(0..CUE_TEMPLATES.len())];
                let pre = pre_t.replace("{name}", &tag.name);
                let value_tokens = tokenize(value).len();

                // Insert filler until the value's token span stays inside one
                // default window of this tag.
                let mut guard = 0;
                loop {
                    let prefix = format!("{}. {}", clause_no + 1, pre);
                    let first = token_count + tokenize(&prefix).len();
                    let last = first + value_tokens - 1;
                    if first / capacity == last / capacity {
                        break;
                    }
                    let body = render_filler(rng);
                    push_clause(&mut text, &mut char_count, &mut token_count, &mut clause_no, &body);
                    guard += 1;
                    assert!(guard < 5, "boundary avoidance failed to converge");
                }

                let body = format!("{pre}{value}{post_t}");
                let clause_start =
                    push_clause(&mut text, &mut char_count, &mut token_count, &mut clause_no, &body);
                let num_prefix = format!("{clause_no}. ").chars().count();
                let value_start = clause_start + num_prefix + pre.chars().count();
                let value_end = value_start + value.chars().count();
                gold.insert(
                    tag.tag_id,
                    Some(GoldSpan {
                        value: value.clone(),
                        char_start: value_start,
                        char_end: value_end,
                    }),
                );
            }
        }
    }

    let doc = AnnotatedDocument {
        doc_id,
        sentences: sentence_ranges(&text),
        text,
        gold,
    };
    doc.validate()?;
    Ok(doc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::corpus::save_corpus;
    use crate::text::tokenize::char_slice;

    #[test]
    fn same_seed_same_corpus_bytes() {
        let schema = default_schema();
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        let c1 = generate_corpus(5, &schema, 42).unwrap();
        let c2 = generate_corpus(5, &schema, 42).unwrap();
        save_corpus(&c1, dir_a.path()).unwrap();
        save_corpus(&c2, dir_b.path()).unwrap();
        for name in ["schema.json", "annotations.jsonl"] {
            let a = std::fs::read(dir_a.path().join(name)).unwrap();
            let b = std::fs::read(dir_b.path().join(name)).unwrap();
            assert_eq!(a, b, "{name} differs");
        }
        for doc in &c1.docs {
            let a = std::fs::read(dir_a.path().join("docs").join(format!("{}.txt", doc.doc_id)))
                .unwrap();
            let b = std::fs::read(dir_b.path().join("docs").join(format!("{}.txt", doc.doc_id)))
                .unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn different_seed_differs() {
        let schema = default_schema();
        let c1 = generate_corpus(3, &schema, 1).unwrap();
        let c2 = generate_corpus(3, &schema, 2).unwrap();
        assert_ne!(c1.docs[0].text, c2.docs[0].text);
    }

    #[test]
    fn gold_spans_read_back_their_values() {
        let schema = default_schema();
        let corpus = generate_corpus(20, &schema, 7).unwrap();
        let mut present = 0;
        let mut total = 0;
        for doc in &corpus.docs {
            for (tag_id, gold) in &doc.gold {
                total += 1;
                if let Some(g) = gold {
                    present += 1;
                    assert_eq!(
                        char_slice(&doc.text, g.char_start, g.char_end),
                        g.value,
                        "doc {} tag {tag_id}",
                        doc.doc_id
                    );
                }
            }
        }
        assert_eq!(total, 20 * schema.len());
        // About 10% absent.
        let absent_rate = 1.0 - present as f64 / total as f64;
        assert!(absent_rate > 0.02 && absent_rate < 0.25, "{absent_rate}");
    }

    #[test]
    fn default_corpus_token_counts_in_bounds() {
        let schema = default_schema();
        let corpus = generate_corpus(200, &schema, 3).unwrap();
        let mean = corpus
            .docs
            .iter()
            .map(|d| tokenize(&d.text).len())
            .sum::<usize>() as f64
            / corpus.docs.len() as f64;
        assert!(
            (400.0..=1200.0).contains(&mean),
            "mean document token count {mean}"
        );
    }

    #[test]
    fn gold_token_spans_avoid_default_window_boundaries() {
        let schema = default_schema();
        let cfg = GeneratorConfig::default();
        let corpus = generate_corpus(30, &schema, 11).unwrap();
        for doc in &corpus.docs {
            let toks = tokenize(&doc.text);
            for tag in &schema {
                let capacity = cfg.window_len - tokenize(&tag.name).len() - 3;
                if let Some(Some(g)) = doc.gold.get(&tag.tag_id) {
                    let first = toks.iter().position(|t| t.start == g.char_start).unwrap();
                    let last = toks.iter().position(|t| t.end == g.char_end).unwrap();
                    assert_eq!(
                        first / capacity,
                        last / capacity,
                        "doc {} tag {} straddles a window boundary",
                        doc.doc_id,
                        tag.tag_id
                    );
                }
            }
        }
    }

    #[test]
    fn schema_requirements_enforced() {
        let mut schema = default_schema();
        schema.retain(|t| t.dtype != DType::Code);
        assert!(matches!(
            generate_corpus(1, &schema, 0),
            Err(Error::Schema(_))
        ));
    }

    #[test]
    fn values_are_distinct_within_document() {
        let schema = default_schema();
        let corpus = generate_corpus(10, &schema, 99).unwrap();
        for doc in &corpus.docs {
            let vals: Vec<&str> = doc
                .gold
                .values()
                .flatten()
                .map(|g| g.value.as_str())
                .collect();
            let set: HashSet<&str> = vals.iter().copied().collect();
            assert_eq!(vals.len(), set.len());
        }
    }
}
