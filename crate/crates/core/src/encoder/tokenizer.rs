use std::hash::Hasher;

use fnv::FnvHasher;

use crate::text;

/// Reserved id marking the start of a rule-side input.
pub const CLS: u32 = 0;
/// Reserved id separating exemplar blocks; also stands in for empty text.
pub const SEP: u32 = 1;
/// Number of reserved ids ahead of the hashed buckets.
pub const RESERVED: u32 = 2;
pub const DEFAULT_BUCKETS: u32 = 1 << 16;

/// Hashes words into `buckets` ids (FNV-1a 64) offset past the reserved markers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Tokenizer {
    buckets: u32,
}

impl Default for Tokenizer {
    fn default() -> Self {
        Self::new(DEFAULT_BUCKETS)
    }
}

impl Tokenizer {
    pub fn new(buckets: u32) -> Self {
        assert!(buckets > 0, "tokenizer needs at least one bucket");
        Self { buckets }
    }

    pub fn buckets(&self) -> u32 {
        self.buckets
    }

    /// Embedding rows needed: buckets plus the reserved markers.
    pub fn vocab_rows(&self) -> usize {
        (self.buckets + RESERVED) as usize
    }

    pub fn word_id(&self, word: &str) -> u32 {
        let mut h = FnvHasher::default();
        h.write(word.as_bytes());
        (h.finish() % u64::from(self.buckets)) as u32 + RESERVED
    }

    /// Word ids only; empty when the text has no words.
    pub fn word_ids(&self, text: &str) -> Vec<u32> {
        text::words(text).iter().map(|w| self.word_id(w)).collect()
    }

    /// Word ids, or a lone [`SEP`] when the text has no words.
    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        let ids = self.word_ids(text);
        if ids.is_empty() {
            vec![SEP]
        } else {
            ids
        }
    }
}
