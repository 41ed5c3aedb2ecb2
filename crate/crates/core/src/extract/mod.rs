//! Span decoding, cross-window aggregation, value recovery, exact-match
//! scoring, and the JSON output surface.

pub mod decode;
pub mod emit;
pub mod evaluate;
pub mod infer;

pub use decode::{aggregate, decode_window, recover_text, AggregatedSpan, WindowCandidate};
pub use emit::{emit_json, parse_predictions};
pub use evaluate::{evaluate, EvalReport, TagMetrics};
pub use infer::Extractor;

/// One model decision for a (document, tag) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct SpanPrediction {
    pub doc_id: String,
    pub tag_id: u32,
    /// Document-global token indices (meaningful only when not abstained).
    pub start: usize,
    pub end: usize,
    /// Probability product of the chosen start/end pair, in (0, 1].
    pub score: f64,
    /// Recovered value text; empty when abstained.
    pub value: String,
    /// Character offsets of the trimmed value in the document.
    pub char_start: usize,
    pub char_end: usize,
    pub abstained: bool,
}

impl SpanPrediction {
    pub fn abstain(doc_id: &str, tag_id: u32) -> Self {
        Self {
            doc_id: doc_id.to_string(),
            tag_id,
            start: 0,
            end: 0,
            score: 0.0,
            value: String::new(),
            char_start: 0,
            char_end: 0,
            abstained: true,
        }
    }
}
