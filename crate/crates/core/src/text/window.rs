//! Fixed-length model inputs: `[CLS] tag [SEP] document-segment [SEP] [PAD]*`
//! with per-token 3-class span labels.

use super::tokenize::Token;
use super::vocab::{CLS_ID, PAD_ID, SEP_ID};
use crate::{Error, Result};
use std::ops::Range;

pub const LABEL_IGNORE: i32 = -1;
pub const LABEL_IRRELEVANT: i32 = 0;
pub const LABEL_START: i32 = 1;
pub const LABEL_END: i32 = 2;

/// One packed model input covering a contiguous run of document tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PackedWindow {
    pub token_ids: Vec<u32>,
    /// 0 on the tag side (CLS, tag tokens, first SEP), 1 on the document side.
    pub segment_ids: Vec<u8>,
    pub position_ids: Vec<u32>,
    /// `true` marks padding.
    pub pad_mask: Vec<bool>,
    /// `LABEL_IGNORE` off the document side, else IRRELEVANT/START/END.
    pub labels: Vec<i32>,
    /// Document token indices this window covers.
    pub doc_token_range: Range<usize>,
    pub window_index: usize,
    /// Position inside the window where document tokens begin.
    pub doc_offset: usize,
}

impl PackedWindow {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Number of document tokens present in this window.
    pub fn doc_len(&self) -> usize {
        self.doc_token_range.end - self.doc_token_range.start
    }
}

/// Capacity: how many document tokens fit beside a tag of `tag_len` tokens.
pub fn window_capacity(window_len: usize, tag_len: usize) -> Result<usize> {
    // [CLS] tag [SEP] doc [SEP] needs tag_len + 3 slots plus at least one
    // document token.
    if window_len < tag_len + 4 {
        return Err(Error::TagOverflow {
            tag_len,
            window_len,
        });
    }
    Ok(window_len - tag_len - 3)
}

/// Split a document into packed windows. Windows start at multiples of
/// `stride` and each holds up to `capacity` document tokens; the last window
/// is padded to `window_len`. Every document token lands in at least one
/// window. Labels are all `LABEL_IGNORE` until [`align_labels`] runs.
pub fn window_document(
    doc_ids: &[u32],
    tag_ids: &[u32],
    window_len: usize,
    stride: usize,
) -> Result<Vec<PackedWindow>> {
    let capacity = window_capacity(window_len, tag_ids.len())?;
    if doc_ids.is_empty() {
        return Err(Error::EmptyDocument);
    }
    if stride == 0 || stride > capacity {
        return Err(Error::Config(format!(
            "stride must be in 1..={capacity}, got {stride}"
        )));
    }
    let n = doc_ids.len();
    let last_start = if n <= capacity {
        0
    } else {
        stride * n.saturating_sub(capacity).div_ceil(stride)
    };
    let mut windows = Vec::new();
    let mut start = 0usize;
    loop {
        let end = (start + capacity).min(n);
        let mut token_ids = Vec::with_capacity(window_len);
        let mut segment_ids = Vec::with_capacity(window_len);
        token_ids.push(CLS_ID);
        token_ids.extend_from_slice(tag_ids);
        token_ids.push(SEP_ID);
        segment_ids.resize(token_ids.len(), 0u8);
        let doc_offset = token_ids.len();
        token_ids.extend_from_slice(&doc_ids[start..end]);
        token_ids.push(SEP_ID);
        segment_ids.resize(token_ids.len(), 1u8);
        let used = token_ids.len();
        token_ids.resize(window_len, PAD_ID);
        segment_ids.resize(window_len, 0u8);
        let mut pad_mask = vec![false; window_len];
        for slot in pad_mask.iter_mut().skip(used) {
            *slot = true;
        }
        windows.push(PackedWindow {
            token_ids,
            segment_ids,
            position_ids: (0..window_len as u32).collect(),
            pad_mask,
            labels: vec![LABEL_IGNORE; window_len],
            doc_token_range: start..end,
            window_index: windows.len(),
            doc_offset,
        });
        if start == last_start {
            break;
        }
        start += stride;
    }
    Ok(windows)
}

/// Apply gold labels. `gold` is the value's character range in the document
/// (or `None` when absent); `doc_tokens` is the tokenization the windows were
/// built from. A window fully containing the gold token span gets START on
/// the first gold token and END on the last (START only for single-token
/// spans); every other document position becomes IRRELEVANT.
pub fn align_labels(
    windows: &mut [PackedWindow],
    gold: Option<(usize, usize)>,
    doc_tokens: &[Token],
    doc_id: &str,
    tag_id: u32,
) -> Result<()> {
    let token_span = match gold {
        None => None,
        Some((char_start, char_end)) => {
            let first = doc_tokens.iter().position(|t| t.start == char_start);
            let last = doc_tokens.iter().position(|t| t.end == char_end);
            match (first, last) {
                (Some(f), Some(l)) if f <= l => Some((f, l)),
                _ => {
                    return Err(Error::Alignment {
                        doc_id: doc_id.to_string(),
                        tag_id,
                    })
                }
            }
        }
    };

    for w in windows.iter_mut() {
        for i in 0..w.doc_len() {
            w.labels[w.doc_offset + i] = LABEL_IRRELEVANT;
        }
        if let Some((first, last)) = token_span {
            let contains = w.doc_token_range.start <= first && last < w.doc_token_range.end;
            if contains {
                let local_first = w.doc_offset + (first - w.doc_token_range.start);
                let local_last = w.doc_offset + (last - w.doc_token_range.start);
                w.labels[local_first] = LABEL_START;
                if local_last > local_first {
                    w.labels[local_last] = LABEL_END;
                }
            }
        }
    }
    Ok(())
}
