//! Pre-training data: sentence-pair construction (next vs random) and
//! masked-token corruption.

use super::vocab::{Vocab, CLS_ID, MASK_ID, PAD_ID, SEP_ID};
use super::window::{PackedWindow, LABEL_IGNORE};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// One sentence pair: token ids for each side plus the next-sentence label.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SentencePair {
    pub first: Vec<u32>,
    pub second: Vec<u32>,
    pub is_next: bool,
}

/// Build sentence pairs: half consecutive (label true), half pairing a
/// sentence with a uniformly random sentence from a different document
/// (label false). `sentences` holds each document's sentences as token ids;
/// documents with fewer than two sentences are skipped. `max_pairs_per_doc`
/// caps the consecutive slots sampled from one document.
pub fn make_nsp_pairs(
    sentences: &[Vec<Vec<u32>>],
    seed: u64,
    max_pairs_per_doc: usize,
) -> Result<Vec<SentencePair>> {
    let usable: Vec<usize> = (0..sentences.len())
        .filter(|&d| sentences[d].len() >= 2)
        .collect();
    if usable.len() < 2 {
        return Err(Error::Corpus(
            "need at least 2 documents with 2+ sentences for negative sampling".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut pairs = Vec::new();
    for &d in &usable {
        let doc = &sentences[d];
        let mut slots: Vec<usize> = (0..doc.len() - 1).collect();
        slots.shuffle(&mut rng);
        slots.truncate(max_pairs_per_doc);
        slots.sort_unstable();
        for i in slots {
            let first = doc[i].clone();
            if rng.random_bool(0.5) {
                pairs.push(SentencePair {
                    first,
                    second: doc[i + 1].clone(),
                    is_next: true,
                });
            } else {
                // Random sentence from a different document.
                let mut other = d;
                while other == d {
                    other = usable[rng.random_range(0..usable.len())];
                }
                let s = rng.random_range(0..sentences[other].len());
                pairs.push(SentencePair {
                    first,
                    second: sentences[other][s].clone(),
                    is_next: false,
                });
            }
        }
    }
    Ok(pairs)
}

/// Pack a pair as `[CLS] A [SEP] B [SEP] [PAD]*` of fixed length `len`. Sides
/// longer than the budget are truncated from the end, longest side first.
pub fn pack_pair(pair: &SentencePair, len: usize) -> Result<PackedWindow> {
    if len < 5 {
        return Err(Error::Config(format!("pair window of {len} is too short")));
    }
    let budget = len - 3;
    let mut a = pair.first.clone();
    let mut b = pair.second.clone();
    while a.len() + b.len() > budget {
        if a.len() >= b.len() {
            a.pop();
        } else {
            b.pop();
        }
    }
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config(format!(
            "pair does not fit window of {len}"
        )));
    }
    let mut token_ids = Vec::with_capacity(len);
    let mut segment_ids = Vec::with_capacity(len);
    token_ids.push(CLS_ID);
    token_ids.extend_from_slice(&a);
    token_ids.push(SEP_ID);
    segment_ids.resize(token_ids.len(), 0u8);
    let second_offset = token_ids.len();
    token_ids.extend_from_slice(&b);
    token_ids.push(SEP_ID);
    segment_ids.resize(token_ids.len(), 1u8);
    let used = token_ids.len();
    token_ids.resize(len, PAD_ID);
    segment_ids.resize(len, 0u8);
    let mut pad_mask = vec![false; len];
    for slot in pad_mask.iter_mut().skip(used) {
        *slot = true;
    }
    Ok(PackedWindow {
        token_ids,
        segment_ids,
        position_ids: (0..len as u32).collect(),
        pad_mask,
        labels: vec![LABEL_IGNORE; len],
        doc_token_range: 0..0,
        window_index: 0,
        doc_offset: second_offset,
    })
}

/// Masked-token corruption: select 15% of non-special positions; of those,
/// 80% become `[MASK]`, 10% a random regular vocab token, 10% stay unchanged.
/// Returns the corrupted ids and per-position targets (original id at
/// selected positions, `LABEL_IGNORE` elsewhere).
pub fn mask_tokens(
    window: &PackedWindow,
    vocab: &Vocab,
    rng: &mut ChaCha8Rng,
) -> (Vec<u32>, Vec<i32>) {
    let mut ids = window.token_ids.clone();
    let mut targets = vec![LABEL_IGNORE; ids.len()];
    let first_regular = super::vocab::FIRST_REGULAR_ID;
    let vocab_len = vocab.len() as u32;
    for (i, id) in ids.iter_mut().enumerate() {
        if window.pad_mask[i] || *id == CLS_ID || *id == SEP_ID {
            continue;
        }
        if !rng.random_bool(0.15) {
            continue;
        }
        targets[i] = *id as i32;
        let roll: f64 = rng.random();
        if roll < 0.8 {
            *id = MASK_ID;
        } else if roll < 0.9 && vocab_len > first_regular {
            *id = rng.random_range(first_regular..vocab_len);
        }
        // else: selected but left unchanged
    }
    (ids, targets)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::vocab::UNK_ID;

    fn toy_sentences() -> Vec<Vec<Vec<u32>>> {
        // 4 documents, 3 sentences each, distinct id ranges.
        (0..4u32)
            .map(|d| {
                (0..3u32)
                    .map(|s| vec![100 + d * 10 + s, 200 + d * 10 + s, 300 + d * 10 + s])
                    .collect()
            })
            .collect()
    }

    #[test]
    fn positive_pairs_are_consecutive() {
        let sents = toy_sentences();
        let pairs = make_nsp_pairs(&sents, 3, 10).unwrap();
        assert!(!pairs.is_empty());
        for p in &pairs {
            if p.is_next {
                // Second sentence follows the first within some document.
                let found = sents.iter().any(|doc| {
                    doc.windows(2)
                        .any(|w| w[0] == p.first && w[1] == p.second)
                });
                assert!(found);
            } else {
                // Negative second sentence comes from a different document.
                let doc_of_first = sents
                    .iter()
                    .position(|doc| doc.iter().any(|s| *s == p.first))
                    .unwrap();
                assert!(!sents[doc_of_first].iter().any(|s| *s == p.second));
            }
        }
    }

    #[test]
    fn label_balance_over_many_pairs() {
        // 1000 docs x 11 slots -> 11000 pairs.
        let sents: Vec<Vec<Vec<u32>>> = (0..1000u32)
            .map(|d| (0..12u32).map(|s| vec![d * 100 + s]).collect())
            .collect();
        let pairs = make_nsp_pairs(&sents, 9, 11).unwrap();
        assert!(pairs.len() >= 10_000);
        let pos = pairs.iter().filter(|p| p.is_next).count() as f64 / pairs.len() as f64;
        assert!((0.48..=0.52).contains(&pos), "positive fraction {pos}");
    }

    #[test]
    fn same_seed_same_pairs() {
        let sents = toy_sentences();
        let a = make_nsp_pairs(&sents, 7, 10).unwrap();
        let b = make_nsp_pairs(&sents, 7, 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_document_is_an_error() {
        let sents = vec![vec![vec![1u32], vec![2]]];
        assert!(make_nsp_pairs(&sents, 0, 4).is_err());
    }

    #[test]
    fn pack_pair_layout() {
        let pair = SentencePair {
            first: vec![10, 11],
            second: vec![20, 21, 22],
            is_next: true,
        };
        let w = pack_pair(&pair, 12).unwrap();
        assert_eq!(
            w.token_ids,
            [CLS_ID, 10, 11, SEP_ID, 20, 21, 22, SEP_ID, PAD_ID, PAD_ID, PAD_ID, PAD_ID]
        );
        assert_eq!(w.segment_ids, [0, 0, 0, 0, 1, 1, 1, 1, 0, 0, 0, 0]);
        assert_eq!(w.pad_mask.iter().filter(|&&p| p).count(), 4);
    }

    #[test]
    fn pack_pair_truncates_longest_side_first() {
        let pair = SentencePair {
            first: vec![11; 10],
            second: vec![22; 3],
            is_next: false,
        };
        let w = pack_pair(&pair, 10).unwrap();
        // budget 7 -> first truncated to 4, second kept at 3
        assert_eq!(w.token_ids.iter().filter(|&&t| t == 11).count(), 4);
        assert_eq!(w.token_ids.iter().filter(|&&t| t == 22).count(), 3);
    }

    fn test_vocab() -> Vocab {
        let counts: Vec<(String, usize)> =
            (0..50).map(|i| (format!("tok{i}"), 5usize)).collect();
        Vocab::build(counts.iter().map(|(s, n)| (s.as_str(), *n)), [], 1)
    }

    #[test]
    fn masking_rate_and_rules() {
        use rand::SeedableRng;
        let vocab = test_vocab();
        let n = 20_000;
        let ids: Vec<u32> = (0..n).map(|i| 5 + (i as u32 % 50)).collect();
        let window = PackedWindow {
            pad_mask: vec![false; n],
            segment_ids: vec![0; n],
            position_ids: (0..n as u32).collect(),
            labels: vec![LABEL_IGNORE; n],
            doc_token_range: 0..n,
            window_index: 0,
            doc_offset: 0,
            token_ids: ids.clone(),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let (masked, targets) = mask_tokens(&window, &vocab, &mut rng);
        let selected: Vec<usize> = (0..n).filter(|&i| targets[i] != LABEL_IGNORE).collect();
        let rate = selected.len() as f64 / n as f64;
        assert!((0.13..=0.17).contains(&rate), "selection rate {rate}");
        let masked_count = selected
            .iter()
            .filter(|&&i| masked[i] == MASK_ID)
            .count() as f64;
        let frac_mask = masked_count / selected.len() as f64;
        assert!((0.75..=0.85).contains(&frac_mask), "mask fraction {frac_mask}");
        // Targets hold original ids; unselected positions untouched.
        for &i in &selected {
            assert_eq!(targets[i] as u32, ids[i]);
        }
        for i in (0..n).filter(|i| targets[*i] == LABEL_IGNORE) {
            assert_eq!(masked[i], ids[i]);
        }
    }

    #[test]
    fn special_tokens_never_selected() {
        use rand::SeedableRng;
        let vocab = test_vocab();
        let pair = SentencePair {
            first: vec![UNK_ID, 7, 8],
            second: vec![9, 10],
            is_next: true,
        };
        let w = pack_pair(&pair, 12).unwrap();
        for seed in 0..50 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let (masked, targets) = mask_tokens(&w, &vocab, &mut rng);
            for (i, &id) in w.token_ids.iter().enumerate() {
                if id == CLS_ID || id == SEP_ID || w.pad_mask[i] {
                    assert_eq!(masked[i], id);
                    assert_eq!(targets[i], LABEL_IGNORE);
                }
            }
        }
    }

    #[test]
    fn masking_is_deterministic_under_seed() {
        use rand::SeedableRng;
        let vocab = test_vocab();
        let pair = SentencePair {
            first: (5..25).collect(),
            second: (25..45).collect(),
            is_next: true,
        };
        let w = pack_pair(&pair, 48).unwrap();
        let mut r1 = ChaCha8Rng::seed_from_u64(123);
        let mut r2 = ChaCha8Rng::seed_from_u64(123);
        assert_eq!(mask_tokens(&w, &vocab, &mut r1), mask_tokens(&w, &vocab, &mut r2));
    }
}
