use std::collections::HashMap;

use crate::error::{Error, Result};

/// Maps text to token ids. Implementations may grow their vocabulary while
/// encoding, so callers must encode documents in a deterministic order.
pub trait Tokenizer {
    fn name(&self) -> &str;

    fn encode(&mut self, text: &str) -> Vec<u32>;

    /// Number of ids handed out so far (an upper bound on every id + 1).
    fn vocab_size(&self) -> usize;
}

/// One token per UTF-8 byte.
#[derive(Clone, Copy, Debug, Default)]
pub struct ByteTokenizer;

impl Tokenizer for ByteTokenizer {
    fn name(&self) -> &str {
        "byte"
    }

    fn encode(&mut self, text: &str) -> Vec<u32> {
        text.bytes().map(u32::from).collect()
    }

    fn vocab_size(&self) -> usize {
        256
    }
}

/// Whitespace-separated words, ids assigned in order of first appearance.
#[derive(Clone, Debug, Default)]
pub struct WhitespaceTokenizer {
    vocab: HashMap<String, u32>,
}

impl WhitespaceTokenizer {
    pub fn new() -> Self {
        Self::default()
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn name(&self) -> &str {
        "whitespace"
    }

    fn encode(&mut self, text: &str) -> Vec<u32> {
        text.split_whitespace()
            .map(|word| {
                let next = self.vocab.len() as u32;
                *self.vocab.entry(word.to_string()).or_insert(next)
            })
            .collect()
    }

    fn vocab_size(&self) -> usize {
        self.vocab.len().max(1)
    }
}

pub fn tokenizer_by_name(name: &str) -> Result<Box<dyn Tokenizer + Send>> {
    match name {
        "byte" => Ok(Box::new(ByteTokenizer)),
        "whitespace" => Ok(Box::new(WhitespaceTokenizer::new())),
        other => Err(Error::UnknownTokenizer(other.to_string())),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn byte_tokenizer_is_utf8_bytes() {
        assert_eq!(ByteTokenizer.encode("aé"), vec![97, 0xc3, 0xa9]);
    }

    #[test]
    fn whitespace_ids_follow_first_appearance() {
        let mut t = WhitespaceTokenizer::new();
        assert_eq!(t.encode("b a  b\nc"), vec![0, 1, 0, 2]);
        assert_eq!(t.encode("c d"), vec![2, 3]);
        assert_eq!(t.vocab_size(), 4);
    }

    #[test]
    fn unknown_tokenizer() {
        assert!(matches!(
            tokenizer_by_name("sentencepiece"),
            Err(Error::UnknownTokenizer(_))
        ));
    }
}
