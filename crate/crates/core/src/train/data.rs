//! Dataset assembly: vocabulary, labeled fine-tuning windows, and masked
//! sentence-pair examples, all built deterministically from a corpus.

use super::sub_seed;
use crate::text::corpus::Corpus;
use crate::text::pretrain::{make_nsp_pairs, mask_tokens, pack_pair};
use crate::text::tokenize::{char_slice, tokenize, Token};
use crate::text::vocab::{count_tokens, Vocab};
use crate::text::window::{align_labels, window_document, PackedWindow};
use crate::text::TagSpec;
use crate::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Tokens must appear at least this often in the training split to enter the
/// vocabulary; one-off strings (random codes) become `[UNK]` so train and
/// test distributions match.
pub const VOCAB_MIN_COUNT: usize = 2;

/// Fraction of documents in the training split (hash-ranked).
pub const TRAIN_FRACTION: f64 = 0.8;

pub fn build_vocab(corpus: &Corpus, doc_indices: &[usize]) -> Vocab {
    let counts = count_tokens(doc_indices.iter().map(|&i| corpus.docs[i].text.as_str()));
    let tag_tokens: Vec<String> = corpus
        .schema
        .iter()
        .flat_map(|t| tokenize(&t.name).into_iter().map(|tok| tok.text))
        .collect();
    Vocab::build(
        counts.iter().map(|(s, n)| (s.as_str(), *n)),
        tag_tokens.iter().map(|s| s.as_str()),
        VOCAB_MIN_COUNT,
    )
}

/// Windows for one (document, tag) pair at inference time (no labels).
pub fn windows_for_doc_tag(
    doc_ids: &[u32],
    tag: &TagSpec,
    vocab: &Vocab,
    window_len: usize,
    stride: Option<usize>,
) -> Result<Vec<PackedWindow>> {
    let tag_ids = vocab.encode(tokenize(&tag.name).iter().map(|t| t.text.as_str()));
    let capacity = crate::text::window::window_capacity(window_len, tag_ids.len())?;
    let stride = stride.unwrap_or(capacity);
    window_document(doc_ids, &tag_ids, window_len, stride)
}

/// All labeled windows of the given documents, in deterministic
/// (document, tag, window) order.
pub fn build_finetune_windows(
    corpus: &Corpus,
    doc_indices: &[usize],
    vocab: &Vocab,
    window_len: usize,
    stride: Option<usize>,
) -> Result<Vec<PackedWindow>> {
    let mut out = Vec::new();
    for &di in doc_indices {
        let doc = &corpus.docs[di];
        let tokens: Vec<Token> = tokenize(&doc.text);
        let doc_ids: Vec<u32> = tokens.iter().map(|t| vocab.id_of(&t.text)).collect();
        if doc_ids.is_empty() {
            return Err(Error::Corpus(format!("document {} is empty", doc.doc_id)));
        }
        for tag in &corpus.schema {
            let mut windows = windows_for_doc_tag(&doc_ids, tag, vocab, window_len, stride)?;
            let gold = doc
                .gold
                .get(&tag.tag_id)
                .and_then(|g| g.as_ref())
                .map(|g| (g.char_start, g.char_end));
            align_labels(&mut windows, gold, &tokens, &doc.doc_id, tag.tag_id)?;
            out.extend(windows);
        }
    }
    Ok(out)
}

/// One pre-training example: a masked sentence-pair window with its labels.
#[derive(Debug, Clone)]
pub struct PretrainExample {
    pub window: PackedWindow,
    pub nsp_label: i32,
    pub mlm_targets: Vec<i32>,
}

/// Sentence pairs from the given documents, packed to `seq_len` and masked
/// once up front (static masking).
pub fn build_pretrain_examples(
    corpus: &Corpus,
    doc_indices: &[usize],
    vocab: &Vocab,
    seq_len: usize,
    pairs_per_doc: usize,
    mlm_enabled: bool,
    seed: u64,
) -> Result<Vec<PretrainExample>> {
    let sentences: Vec<Vec<Vec<u32>>> = doc_indices
        .iter()
        .map(|&di| {
            let doc = &corpus.docs[di];
            doc.sentences
                .iter()
                .map(|&(s, e)| {
                    let text = char_slice(&doc.text, s, e);
                    vocab.encode(tokenize(&text).iter().map(|t| t.text.as_str()))
                })
                .collect()
        })
        .collect();
    let pairs = make_nsp_pairs(&sentences, sub_seed(seed, "nsp-pairs", 0), pairs_per_doc)?;
    let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(seed, "mlm-mask", 0));
    let mut out = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let window = pack_pair(pair, seq_len)?;
        let (ids, targets) = if mlm_enabled {
            mask_tokens(&window, vocab, &mut rng)
        } else {
            (
                window.token_ids.clone(),
                vec![crate::text::window::LABEL_IGNORE; window.len()],
            )
        };
        let mut masked = window;
        masked.token_ids = ids;
        out.push(PretrainExample {
            window: masked,
            nsp_label: pair.is_next as i32,
            mlm_targets: targets,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::text::generate::{default_schema, generate_corpus};
    use crate::text::window::{LABEL_END, LABEL_START};

    fn small_corpus() -> Corpus {
        generate_corpus(8, &default_schema(), 17).unwrap()
    }

    #[test]
    fn vocab_contains_tag_tokens_and_filters_rare() {
        let corpus = small_corpus();
        let all: Vec<usize> = (0..corpus.docs.len()).collect();
        let vocab = build_vocab(&corpus, &all);
        for tag in &corpus.schema {
            for tok in tokenize(&tag.name) {
                assert_ne!(
                    vocab.id_of(&tok.text),
                    crate::text::vocab::UNK_ID,
                    "tag token {:?} missing",
                    tok.text
                );
            }
        }
        // Code values are unique per document, so their letter groups fall
        // under the frequency threshold.
        let code_tag = corpus
            .schema
            .iter()
            .find(|t| t.dtype == crate::text::DType::Code)
            .unwrap();
        let mut unk_leading = 0;
        let mut total_codes = 0;
        for doc in &corpus.docs {
            if let Some(Some(g)) = doc.gold.get(&code_tag.tag_id) {
                total_codes += 1;
                let first = &tokenize(&g.value)[0];
                if vocab.id_of(&first.text) == crate::text::vocab::UNK_ID {
                    unk_leading += 1;
                }
            }
        }
        assert!(total_codes > 0);
        // The letter-pair prefix is unique per document, so it falls under
        // the frequency threshold (digit groups may repeat and stay known).
        assert!(
            unk_leading * 2 > total_codes,
            "{unk_leading}/{total_codes} code prefixes unknown"
        );
    }

    #[test]
    fn finetune_windows_carry_gold_labels() {
        let corpus = small_corpus();
        let all: Vec<usize> = (0..corpus.docs.len()).collect();
        let vocab = build_vocab(&corpus, &all);
        let windows = build_finetune_windows(&corpus, &all, &vocab, 128, None).unwrap();
        assert!(!windows.is_empty());
        let starts = windows
            .iter()
            .flat_map(|w| &w.labels)
            .filter(|&&l| l == LABEL_START)
            .count();
        let ends = windows
            .iter()
            .flat_map(|w| &w.labels)
            .filter(|&&l| l == LABEL_END)
            .count();
        let present: usize = corpus
            .docs
            .iter()
            .map(|d| d.gold.values().flatten().count())
            .sum();
        // Golds never straddle default boundaries, and all values are
        // multi-token, so every present gold yields exactly one START and
        // (being multi-token) one END.
        assert_eq!(starts, present);
        assert_eq!(ends, present);
    }

    #[test]
    fn pretrain_examples_are_deterministic() {
        let corpus = small_corpus();
        let all: Vec<usize> = (0..corpus.docs.len()).collect();
        let vocab = build_vocab(&corpus, &all);
        let a = build_pretrain_examples(&corpus, &all, &vocab, 64, 6, true, 3).unwrap();
        let b = build_pretrain_examples(&corpus, &all, &vocab, 64, 6, true, 3).unwrap();
        assert_eq!(a.len(), b.len());
        assert!(!a.is_empty());
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.window.token_ids, y.window.token_ids);
            assert_eq!(x.nsp_label, y.nsp_label);
            assert_eq!(x.mlm_targets, y.mlm_targets);
        }
        let masked = a
            .iter()
            .flat_map(|e| &e.mlm_targets)
            .filter(|&&t| t >= 0)
            .count();
        assert!(masked > 0);
    }
}
