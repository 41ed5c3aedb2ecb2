//! JSON output: one record per document, one field entry per tag, null value
//! for abstentions. Field order is fixed by the serde structs; output ends
//! with a newline.

use super::SpanPrediction;
use crate::text::corpus::TagSpec;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct FieldRecord {
    tag_id: u32,
    tag_name: String,
    value: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    char_start: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    char_end: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct DocRecord {
    doc_id: String,
    fields: Vec<FieldRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Output {
    documents: Vec<DocRecord>,
}

pub fn predictions_to_json(preds: &[SpanPrediction], schema: &[TagSpec]) -> Result<String> {
    let tag_name = |id: u32| -> Result<String> {
        schema
            .iter()
            .find(|t| t.tag_id == id)
            .map(|t| t.name.clone())
            .ok_or_else(|| Error::Data(format!("prediction references unknown tag {id}")))
    };
    let mut sorted: Vec<&SpanPrediction> = preds.iter().collect();
    sorted.sort_by(|a, b| a.doc_id.cmp(&b.doc_id).then(a.tag_id.cmp(&b.tag_id)));
    let mut documents: Vec<DocRecord> = Vec::new();
    for p in sorted {
        if documents.last().map(|d| d.doc_id.as_str()) != Some(p.doc_id.as_str()) {
            documents.push(DocRecord {
                doc_id: p.doc_id.clone(),
                fields: Vec::new(),
            });
        }
        let fields = &mut documents.last_mut().unwrap().fields;
        if p.abstained {
            fields.push(FieldRecord {
                tag_id: p.tag_id,
                tag_name: tag_name(p.tag_id)?,
                value: None,
                char_start: None,
                char_end: None,
                score: None,
            });
        } else {
            fields.push(FieldRecord {
                tag_id: p.tag_id,
                tag_name: tag_name(p.tag_id)?,
                value: Some(p.value.clone()),
                char_start: Some(p.char_start),
                char_end: Some(p.char_end),
                score: Some(p.score),
            });
        }
    }
    let mut s = serde_json::to_string_pretty(&Output { documents })?;
    s.push('\n');
    Ok(s)
}

pub fn emit_json(preds: &[SpanPrediction], schema: &[TagSpec], path: &Path) -> Result<()> {
    std::fs::write(path, predictions_to_json(preds, schema)?)?;
    Ok(())
}

/// Parse emitted JSON back into predictions (token indices are not part of
/// the surface format and come back as zero; abstained entries have empty
/// values).
pub fn parse_predictions(json: &str) -> Result<Vec<SpanPrediction>> {
    let out: Output = serde_json::from_str(json)?;
    let mut preds = Vec::new();
    for doc in out.documents {
        for f in doc.fields {
            match f.value {
                None => preds.push(SpanPrediction::abstain(&doc.doc_id, f.tag_id)),
                Some(value) => {
                    let (char_start, char_end, score) =
                        match (f.char_start, f.char_end, f.score) {
                            (Some(a), Some(b), Some(s)) => (a, b, s),
                            _ => {
                                return Err(Error::Data(format!(
                                    "field {} of {} has a value but lacks offsets",
                                    f.tag_id, doc.doc_id
                                )))
                            }
                        };
                    preds.push(SpanPrediction {
                        doc_id: doc.doc_id.clone(),
                        tag_id: f.tag_id,
                        start: 0,
                        end: 0,
                        score,
                        value,
                        char_start,
                        char_end,
                        abstained: false,
                    });
                }
            }
        }
    }
    Ok(preds)
}
