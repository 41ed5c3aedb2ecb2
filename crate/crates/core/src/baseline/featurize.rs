//! Hashed n-gram presence features over sentence tokens.

use crate::text::corpus::fnv1a;

/// n-grams for n in 1..=4, hashed into a fixed feature space.
#[derive(Debug, Clone)]
pub struct NgramFeaturizer {
    pub dim: usize,
    pub max_n: usize,
    pub seed: u64,
}

impl NgramFeaturizer {
    pub fn new(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            max_n: 4,
            seed,
        }
    }

    /// Active bucket indices (sorted, distinct). Presence indicators: a
    /// bucket is 1 no matter how many n-grams hash into it.
    pub fn featurize(&self, tokens: &[&str]) -> Vec<u32> {
        let mut active = Vec::new();
        let mut buf = Vec::new();
        for n in 1..=self.max_n.min(tokens.len()) {
            for gram in tokens.windows(n) {
                buf.clear();
                buf.extend_from_slice(&self.seed.to_le_bytes());
                buf.push(n as u8);
                for t in gram {
                    buf.extend_from_slice(t.as_bytes());
                    buf.push(0x1f);
                }
                active.push((fnv1a(&buf) % self.dim as u64) as u32);
            }
        }
        active.sort_unstable();
        active.dedup();
        active
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_sentence_gives_zero_vector() {
        let f = NgramFeaturizer::new(1 << 14, 7);
        assert!(f.featurize(&[]).is_empty());
    }

    #[test]
    fn identical_sentences_identical_features() {
        let f = NgramFeaturizer::new(1 << 14, 7);
        let toks = ["the", "bid", "deadline", "is", "near"];
        assert_eq!(f.featurize(&toks), f.featurize(&toks));
        let g = NgramFeaturizer::new(1 << 14, 8);
        assert_ne!(f.featurize(&toks), g.featurize(&toks), "seed changes hashes");
    }

    #[test]
    fn five_tokens_give_at_most_fourteen_buckets() {
        // 5 unigrams + 4 bigrams + 3 trigrams + 2 four-grams = 14.
        let f = NgramFeaturizer::new(1 << 14, 7);
        let toks = ["a", "b", "c", "d", "e"];
        let active = f.featurize(&toks);
        assert!(active.len() <= 14);
        assert!(active.len() >= 10, "collisions should be rare");
        assert!(active.windows(2).all(|w| w[0] < w[1]), "sorted distinct");
    }
}
