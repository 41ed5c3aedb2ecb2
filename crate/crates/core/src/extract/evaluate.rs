//! Exact-match scoring: precision, recall, F1 per tag and micro overall.

use super::SpanPrediction;
use crate::text::corpus::{AnnotatedDocument, TagSpec};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap, HashSet};

/// Trim plus collapse of internal whitespace runs to a single space.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TagMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Number of (doc, tag) pairs with a present gold value.
    pub support: usize,
}

fn metrics(correct: usize, predicted: usize, gold_present: usize) -> TagMetrics {
    let precision = if predicted == 0 {
        0.0
    } else {
        correct as f64 / predicted as f64
    };
    let recall = if gold_present == 0 {
        0.0
    } else {
        correct as f64 / gold_present as f64
    };
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    TagMetrics {
        precision,
        recall,
        f1,
        support: gold_present,
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub per_tag: BTreeMap<u32, TagMetrics>,
    pub overall: TagMetrics,
    pub abstentions: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

/// Score predictions against gold annotations. Exactly one prediction per
/// (document, tag) pair is required, abstentions included; a prediction
/// naming an unknown pair is an input error.
pub fn evaluate(
    predictions: &[SpanPrediction],
    docs: &[&AnnotatedDocument],
    schema: &[TagSpec],
) -> Result<EvalReport> {
    let doc_by_id: HashMap<&str, &AnnotatedDocument> =
        docs.iter().map(|d| (d.doc_id.as_str(), *d)).collect();
    let tag_ids: HashSet<u32> = schema.iter().map(|t| t.tag_id).collect();

    let mut seen: HashSet<(String, u32)> = HashSet::new();
    let mut correct_by_tag: BTreeMap<u32, usize> = BTreeMap::new();
    let mut predicted_by_tag: BTreeMap<u32, usize> = BTreeMap::new();
    let mut gold_by_tag: BTreeMap<u32, usize> = BTreeMap::new();
    for t in schema {
        correct_by_tag.insert(t.tag_id, 0);
        predicted_by_tag.insert(t.tag_id, 0);
        gold_by_tag.insert(t.tag_id, 0);
    }
    for d in docs {
        for t in schema {
            if matches!(d.gold.get(&t.tag_id), Some(Some(_))) {
                *gold_by_tag.get_mut(&t.tag_id).unwrap() += 1;
            }
        }
    }

    let mut abstentions = 0usize;
    for p in predictions {
        let doc = doc_by_id.get(p.doc_id.as_str()).ok_or_else(|| {
            Error::Data(format!("prediction references unknown document {}", p.doc_id))
        })?;
        if !tag_ids.contains(&p.tag_id) {
            return Err(Error::Data(format!(
                "prediction references unknown tag {}",
                p.tag_id
            )));
        }
        if !seen.insert((p.doc_id.clone(), p.tag_id)) {
            return Err(Error::Data(format!(
                "duplicate prediction for ({}, {})",
                p.doc_id, p.tag_id
            )));
        }
        if p.abstained {
            abstentions += 1;
            continue;
        }
        *predicted_by_tag.get_mut(&p.tag_id).unwrap() += 1;
        if let Some(Some(gold)) = doc.gold.get(&p.tag_id) {
            if normalize(&p.value) == normalize(&gold.value) {
                *correct_by_tag.get_mut(&p.tag_id).unwrap() += 1;
            }
        }
    }
    let expected = docs.len() * schema.len();
    if seen.len() != expected {
        return Err(Error::Data(format!(
            "expected one prediction per (doc, tag): got {} of {expected}",
            seen.len()
        )));
    }

    let mut per_tag = BTreeMap::new();
    let (mut c, mut p, mut g) = (0usize, 0usize, 0usize);
    for t in schema {
        let (tc, tp, tg) = (
            correct_by_tag[&t.tag_id],
            predicted_by_tag[&t.tag_id],
            gold_by_tag[&t.tag_id],
        );
        per_tag.insert(t.tag_id, metrics(tc, tp, tg));
        c += tc;
        p += tp;
        g += tg;
    }
    Ok(EvalReport {
        per_tag,
        overall: metrics(c, p, g),
        abstentions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::corpus::{DType, GoldSpan};

    fn schema() -> Vec<TagSpec> {
        vec![TagSpec {
            tag_id: 0,
            name: "field".into(),
            dtype: DType::Date,
        }]
    }

    fn doc(id: &str, gold: Option<&str>) -> AnnotatedDocument {
        let text = format!("value is {} here", gold.unwrap_or("nothing"));
        let mut map = BTreeMap::new();
        map.insert(
            0,
            gold.map(|g| GoldSpan {
                value: g.to_string(),
                char_start: 9,
                char_end: 9 + g.chars().count(),
            }),
        );
        AnnotatedDocument {
            doc_id: id.into(),
            sentences: vec![(0, text.chars().count())],
            text,
            gold: map,
        }
    }

    fn pred(doc_id: &str, value: &str) -> SpanPrediction {
        SpanPrediction {
            doc_id: doc_id.into(),
            tag_id: 0,
            start: 2,
            end: 2,
            score: 0.9,
            value: value.into(),
            char_start: 9,
            char_end: 9 + value.chars().count(),
            abstained: false,
        }
    }

    #[test]
    fn perfect_predictions_score_one() {
        let docs = vec![doc("a", Some("2020/01/02")), doc("b", Some("2021/03/04"))];
        let refs: Vec<&AnnotatedDocument> = docs.iter().collect();
        let preds = vec![pred("a", "2020/01/02"), pred("b", "2021/03/04")];
        let r = evaluate(&preds, &refs, &schema()).unwrap();
        assert_eq!(r.overall.precision, 1.0);
        assert_eq!(r.overall.recall, 1.0);
        assert_eq!(r.overall.f1, 1.0);
        assert_eq!(r.overall.support, 2);
    }

    #[test]
    fn all_abstain_scores_zero() {
        let docs = vec![doc("a", Some("2020/01/02"))];
        let refs: Vec<&AnnotatedDocument> = docs.iter().collect();
        let preds = vec![SpanPrediction::abstain("a", 0)];
        let r = evaluate(&preds, &refs, &schema()).unwrap();
        assert_eq!(r.overall.precision, 0.0);
        assert_eq!(r.overall.recall, 0.0);
        assert_eq!(r.overall.f1, 0.0);
        assert_eq!(r.abstentions, 1);
    }

    #[test]
    fn hand_counted_three_quarters() {
        let docs = vec![
            doc("a", Some("1111/11/11")),
            doc("b", Some("2222/22/22")),
            doc("c", Some("3333/33/33")),
            doc("d", Some("4444/44/44")),
        ];
        let refs: Vec<&AnnotatedDocument> = docs.iter().collect();
        let preds = vec![
            pred("a", "1111/11/11"),
            pred("b", "2222/22/22"),
            pred("c", "3333/33/33"),
            pred("d", "wrong"),
        ];
        let r = evaluate(&preds, &refs, &schema()).unwrap();
        assert!((r.overall.precision - 0.75).abs() < 1e-12);
        assert!((r.overall.recall - 0.75).abs() < 1e-12);
        assert!((r.overall.f1 - 0.75).abs() < 1e-12);
    }

    #[test]
    fn normalization_collapses_whitespace() {
        assert_eq!(normalize("  a \t b\n c  "), "a b c");
        let docs = vec![doc("a", Some("North  Road"))];
        let refs: Vec<&AnnotatedDocument> = docs.iter().collect();
        let preds = vec![pred("a", "North Road")];
        let r = evaluate(&preds, &refs, &schema()).unwrap();
        assert_eq!(r.overall.f1, 1.0);
    }

    #[test]
    fn spurious_prediction_on_absent_gold_costs_precision() {
        let docs = vec![doc("a", None), doc("b", Some("5555/55/55"))];
        let refs: Vec<&AnnotatedDocument> = docs.iter().collect();
        let preds = vec![pred("a", "made up"), pred("b", "5555/55/55")];
        let r = evaluate(&preds, &refs, &schema()).unwrap();
        assert!((r.overall.precision - 0.5).abs() < 1e-12);
        assert!((r.overall.recall - 1.0).abs() < 1e-12);
        assert_eq!(r.overall.support, 1);
    }

    #[test]
    fn unknown_doc_or_missing_pair_is_input_error() {
        let docs = vec![doc("a", Some("6666/66/66"))];
        let refs: Vec<&AnnotatedDocument> = docs.iter().collect();
        let preds = vec![pred("zzz", "6666/66/66")];
        assert!(matches!(
            evaluate(&preds, &refs, &schema()),
            Err(Error::Data(_))
        ));
        assert!(matches!(evaluate(&[], &refs, &schema()), Err(Error::Data(_))));
    }

    #[test]
    fn duplicating_the_test_set_leaves_metrics_unchanged() {
        let docs = vec![doc("a", Some("7777/77/77")), doc("b", None)];
        let refs: Vec<&AnnotatedDocument> = docs.iter().collect();
        let preds = vec![pred("a", "7777/77/77"), SpanPrediction::abstain("b", 0)];
        let r1 = evaluate(&preds, &refs, &schema()).unwrap();

        let docs2: Vec<AnnotatedDocument> = docs
            .iter()
            .cloned()
            .chain(docs.iter().cloned().map(|mut d| {
                d.doc_id = format!("{}-copy", d.doc_id);
                d
            }))
            .collect();
        let refs2: Vec<&AnnotatedDocument> = docs2.iter().collect();
        let preds2: Vec<SpanPrediction> = preds
            .iter()
            .cloned()
            .chain(preds.iter().cloned().map(|mut p| {
                p.doc_id = format!("{}-copy", p.doc_id);
                p
            }))
            .collect();
        let r2 = evaluate(&preds2, &refs2, &schema()).unwrap();
        assert_eq!(r1.overall.precision, r2.overall.precision);
        assert_eq!(r1.overall.recall, r2.overall.recall);
        assert_eq!(r1.overall.f1, r2.overall.f1);
        assert_eq!(r2.overall.support, 2 * r1.overall.support);
    }
}
