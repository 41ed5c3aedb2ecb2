//! Best-span search within a window and reconciliation across windows.

use super::SpanPrediction;
use crate::tensor::Tensor;
use crate::text::tokenize::Token;
use crate::text::window::PackedWindow;
use crate::{Error, Result};
use std::ops::Range;

/// Longest span (in tokens) the decoder may propose.
pub const DEFAULT_MAX_SPAN: usize = 30;

/// Class columns of the per-token distribution.
const IRRELEVANT: usize = 0;
const START: usize = 1;
const END: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WindowCandidate {
    /// Window-local positions, `start <= end`.
    pub start: usize,
    pub end: usize,
    /// `p_start(start) * p_end(end)`.
    pub score: f64,
}

/// Pick the (start, end) pair maximizing `p_start(s) * p_end(e)` over
/// document positions with `s <= e <= s + max_span - 1`; ties go to the
/// lexicographically smallest pair. Abstains (returns `None`) unless the
/// start probability strictly exceeds the irrelevant probability at `s` and
/// likewise for the end at `e`.
pub fn decode_window(
    probs: &Tensor<f64>,
    doc_positions: Range<usize>,
    max_span: usize,
) -> Result<Option<WindowCandidate>> {
    if doc_positions.is_empty() {
        return Err(Error::Data("window has no document positions".into()));
    }
    debug_assert!(max_span >= 1);
    debug_assert_eq!(probs.last_dim(), 3);
    let p = |pos: usize, class: usize| probs.data()[pos * 3 + class];

    let mut best: Option<WindowCandidate> = None;
    for s in doc_positions.clone() {
        let p_start = p(s, START);
        let e_hi = (s + max_span - 1).min(doc_positions.end - 1);
        for e in s..=e_hi {
            let score = p_start * p(e, END);
            if best.map_or(true, |b| score > b.score) {
                best = Some(WindowCandidate { start: s, end: e, score });
            }
        }
    }
    let best = best.expect("non-empty range always yields a candidate");
    let keep = p(best.start, START) > p(best.start, IRRELEVANT)
        && p(best.end, END) > p(best.end, IRRELEVANT);
    Ok(keep.then_some(best))
}

/// Winning span across a (document, tag)'s windows, in document-global token
/// indices. Highest score wins; ties fall to the lowest window index, then
/// the lowest start. `None` when every window abstained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatedSpan {
    pub start: usize,
    pub end: usize,
    pub score: f64,
}

pub fn aggregate(
    windows: &[PackedWindow],
    candidates: &[Option<WindowCandidate>],
) -> Option<AggregatedSpan> {
    debug_assert_eq!(windows.len(), candidates.len());
    let mut best: Option<(usize, WindowCandidate)> = None;
    for (w, cand) in windows.iter().zip(candidates) {
        let Some(c) = cand else { continue };
        let better = match &best {
            None => true,
            Some((bw, b)) => {
                c.score > b.score
                    || (c.score == b.score
                        && (w.window_index < *bw
                            || (w.window_index == *bw && c.start < b.start)))
            }
        };
        if better {
            best = Some((w.window_index, *c));
        }
    }
    best.map(|(wi, c)| {
        let w = windows
            .iter()
            .find(|w| w.window_index == wi)
            .expect("winner exists");
        let to_global = |local: usize| w.doc_token_range.start + (local - w.doc_offset);
        AggregatedSpan {
            start: to_global(c.start),
            end: to_global(c.end),
            score: c.score,
        }
    })
}

/// Recover the value string: document text from the start token's first
/// character to the end token's last, whitespace-trimmed at both ends.
pub fn recover_text(
    doc_id: &str,
    tag_id: u32,
    span: AggregatedSpan,
    doc_text: &str,
    tokens: &[Token],
) -> SpanPrediction {
    let mut char_start = tokens[span.start].start;
    let mut char_end = tokens[span.end].end;
    let chars: Vec<char> = doc_text.chars().collect();
    while char_start < char_end && chars[char_start].is_whitespace() {
        char_start += 1;
    }
    while char_end > char_start && chars[char_end - 1].is_whitespace() {
        char_end -= 1;
    }
    let value: String = chars[char_start..char_end].iter().collect();
    SpanPrediction {
        doc_id: doc_id.to_string(),
        tag_id,
        start: span.start,
        end: span.end,
        score: span.score,
        value,
        char_start,
        char_end,
        abstained: false,
    }
}
