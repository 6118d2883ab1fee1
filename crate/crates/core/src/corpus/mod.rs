//! Domain-partitioned example stores and the preprocessing that builds them.

mod chunk;
mod ingest;
mod resample;
mod sampling;
mod tokenizer;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::simplex::DomainSet;

pub use chunk::{chunk, pack};
pub use ingest::{ingest, ingest_manifest, CorpusManifest, DomainSource};
pub use resample::{resample, resample_dataset, MixtureSpec, ResampleManifest, SavedExample};
pub use sampling::{baseline_weights_from_counts, hierarchical_sample, multinomial, BaselineWeights};
pub use tokenizer::{tokenizer_by_name, ByteTokenizer, Tokenizer, WhitespaceTokenizer};

pub const DEFAULT_MAX_LEN: usize = 1024;

/// A token sequence with the domain of every token.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Example {
    id: String,
    tokens: Vec<u32>,
    domain_ids: Vec<u32>,
}

impl Example {
    pub fn new(id: impl Into<String>, tokens: Vec<u32>, domain_ids: Vec<u32>) -> Result<Self> {
        let id = id.into();
        if tokens.is_empty() {
            return Err(Error::InvalidParameter(format!("example `{id}` has no tokens")));
        }
        if tokens.len() != domain_ids.len() {
            return Err(Error::DimensionMismatch {
                expected: tokens.len(),
                actual: domain_ids.len(),
            });
        }
        Ok(Example { id, tokens, domain_ids })
    }

    /// An unpacked example whose tokens all come from `domain`.
    pub fn single_domain(id: impl Into<String>, tokens: Vec<u32>, domain: u32) -> Result<Self> {
        let n = tokens.len();
        Self::new(id, tokens, vec![domain; n])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn domain_ids(&self) -> &[u32] {
        &self.domain_ids
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// `(token, domain)` pairs in order.
    pub fn attributed(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        self.tokens.iter().copied().zip(self.domain_ids.iter().copied())
    }

    /// The domain of the first token; the only domain for unpacked examples.
    pub fn primary_domain(&self) -> u32 {
        self.domain_ids[0]
    }

    pub fn is_packed(&self) -> bool {
        self.domain_ids.iter().any(|&d| d != self.domain_ids[0])
    }
}

/// k named domains, each with an ordered store of examples.
#[derive(Clone, Debug)]
pub struct Corpus {
    domains: DomainSet,
    stores: Vec<Vec<Example>>,
    tokenizer: String,
    vocab_size: usize,
    max_len: usize,
}

impl Corpus {
    pub fn new(
        domains: DomainSet,
        stores: Vec<Vec<Example>>,
        tokenizer: impl Into<String>,
        vocab_size: usize,
        max_len: usize,
    ) -> Result<Self> {
        if stores.len() != domains.len() {
            return Err(Error::DimensionMismatch {
                expected: domains.len(),
                actual: stores.len(),
            });
        }
        if max_len == 0 || vocab_size == 0 {
            return Err(Error::InvalidParameter(
                "max_len and vocab_size must be positive".into(),
            ));
        }
        let k = domains.len();
        for example in stores.iter().flatten() {
            if example.len() > max_len {
                return Err(Error::InvalidParameter(format!(
                    "example `{}` has {} tokens, longer than max_len {max_len}",
                    example.id(),
                    example.len()
                )));
            }
            for (token, domain) in example.attributed() {
                if domain as usize >= k {
                    return Err(Error::DomainOutOfRange {
                        index: domain as usize,
                        k,
                    });
                }
                if token as usize >= vocab_size {
                    return Err(Error::TokenOutOfRange {
                        token,
                        vocab: vocab_size,
                    });
                }
            }
        }
        Ok(Corpus {
            domains,
            stores,
            tokenizer: tokenizer.into(),
            vocab_size,
            max_len,
        })
    }

    pub fn domains(&self) -> &DomainSet {
        &self.domains
    }

    pub fn num_domains(&self) -> usize {
        self.domains.len()
    }

    pub fn examples(&self, domain: usize) -> &[Example] {
        &self.stores[domain]
    }

    pub fn counts(&self) -> Vec<usize> {
        self.stores.iter().map(Vec::len).collect()
    }

    pub fn total_examples(&self) -> usize {
        self.stores.iter().map(Vec::len).sum()
    }

    pub fn tokenizer(&self) -> &str {
        &self.tokenizer
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn iter(&self) -> impl Iterator<Item = &Example> {
        self.stores.iter().flatten()
    }

    /// Errors unless every domain has at least one example.
    pub fn require_nonempty(&self) -> Result<()> {
        for (i, store) in self.stores.iter().enumerate() {
            if store.is_empty() {
                return Err(Error::EmptyDomain(self.domains[i].to_string()));
            }
        }
        Ok(())
    }

    /// SHA-256 over `(domain, example_id, tokens)` sorted by domain name then
    /// example id, as lowercase hex.
    pub fn fingerprint(&self) -> String {
        let mut entries: Vec<(&str, &Example)> = self
            .stores
            .iter()
            .enumerate()
            .flat_map(|(d, store)| store.iter().map(move |e| (d, e)))
            .map(|(d, e)| (&self.domains[d], e))
            .collect();
        entries.sort_by(|a, b| a.0.cmp(b.0).then_with(|| a.1.id().cmp(b.1.id())));
        let mut hasher = Sha256::new();
        for (domain, example) in entries {
            hasher.update((domain.len() as u64).to_le_bytes());
            hasher.update(domain.as_bytes());
            hasher.update((example.id().len() as u64).to_le_bytes());
            hasher.update(example.id().as_bytes());
            hasher.update((example.len() as u64).to_le_bytes());
            for t in example.tokens() {
                hasher.update(t.to_le_bytes());
            }
        }
        hex::encode(hasher.finalize())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus() -> Corpus {
        let domains = DomainSet::new(["a", "b"]).unwrap();
        Corpus::new(
            domains,
            vec![
                vec![Example::single_domain("a:0", vec![1, 2], 0).unwrap()],
                vec![Example::single_domain("b:0", vec![3], 1).unwrap()],
            ],
            "byte",
            256,
            8,
        )
        .unwrap()
    }

    #[test]
    fn example_invariants() {
        assert!(Example::new("x", vec![], vec![]).is_err());
        assert!(Example::new("x", vec![1, 2], vec![0]).is_err());
        let e = Example::new("x", vec![1, 2], vec![0, 1]).unwrap();
        assert!(e.is_packed());
        assert!(!Example::single_domain("y", vec![1, 2], 0).unwrap().is_packed());
    }

    #[test]
    fn corpus_validates_attribution() {
        let domains = DomainSet::new(["a"]).unwrap();
        let bad = Example::single_domain("x", vec![1], 3).unwrap();
        assert!(Corpus::new(domains.clone(), vec![vec![bad]], "byte", 256, 8).is_err());
        let long = Example::single_domain("x", vec![1; 9], 0).unwrap();
        assert!(Corpus::new(domains, vec![vec![long]], "byte", 256, 8).is_err());
    }

    #[test]
    fn fingerprint_ignores_store_order_but_not_content() {
        let c = corpus();
        let mut swapped_stores = c.stores.clone();
        swapped_stores.reverse();
        let swapped = Corpus::new(
            DomainSet::new(["b", "a"]).unwrap(),
            swapped_stores
                .into_iter()
                .enumerate()
                .map(|(d, s)| {
                    s.into_iter()
                        .map(|e| Example::single_domain(e.id(), e.tokens().to_vec(), d as u32).unwrap())
                        .collect()
                })
                .collect(),
            "byte",
            256,
            8,
        )
        .unwrap();
        assert_eq!(c.fingerprint(), swapped.fingerprint());

        let mut changed = c.clone();
        changed.stores[0][0] = Example::single_domain("a:0", vec![1, 3], 0).unwrap();
        assert_ne!(c.fingerprint(), changed.fingerprint());
    }
}
