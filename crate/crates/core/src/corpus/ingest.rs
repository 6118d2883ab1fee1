use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{chunk, pack, tokenizer_by_name, Corpus, Example, Tokenizer, DEFAULT_MAX_LEN};
use crate::error::{Error, Result};
use crate::simplex::DomainSet;

/// `{"tokenizer": .., "max_len": .., "domains": [{"name", "epochs", "sources"}]}`.
///
/// Source paths are resolved relative to the manifest's directory. Files
/// ending in `.jsonl`/`.ndjson` hold one document per line in a `"text"`
/// field; anything else is one plain-text document.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub tokenizer: String,
    #[serde(default = "default_max_len")]
    pub max_len: usize,
    /// Pack short chunks of each domain into shared sequences.
    #[serde(default)]
    pub pack: bool,
    pub domains: Vec<DomainSource>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct DomainSource {
    pub name: String,
    #[serde(default = "default_epochs")]
    pub epochs: f64,
    pub sources: Vec<PathBuf>,
}

fn default_max_len() -> usize {
    DEFAULT_MAX_LEN
}

fn default_epochs() -> f64 {
    1.0
}

impl CorpusManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let manifest: CorpusManifest = serde_json::from_str(&text)
            .map_err(|e| Error::parse(format!("{}:{}", path.display(), e.line()), e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.domains.is_empty() {
            return Err(Error::InvalidParameter("manifest lists no domains".into()));
        }
        if self.max_len == 0 {
            return Err(Error::InvalidParameter("max_len must be at least 1".into()));
        }
        for d in &self.domains {
            if d.sources.is_empty() {
                return Err(Error::InvalidParameter(format!("domain `{}` lists no sources", d.name)));
            }
            if !(d.epochs > 0.0 && d.epochs.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "domain `{}` has non-positive epochs {}",
                    d.name, d.epochs
                )));
            }
        }
        DomainSet::new(self.domains.iter().map(|d| d.name.clone()))?;
        Ok(())
    }

    pub fn epochs(&self) -> Vec<f64> {
        self.domains.iter().map(|d| d.epochs).collect()
    }
}

/// Loads the manifest at `path` and ingests it with the tokenizer it names.
pub fn ingest(path: &Path) -> Result<(CorpusManifest, Corpus)> {
    let manifest = CorpusManifest::load(path)?;
    let mut tokenizer = tokenizer_by_name(&manifest.tokenizer)?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let corpus = ingest_manifest(&manifest, base, tokenizer.as_mut())?;
    Ok((manifest, corpus))
}

/// Reads, tokenizes and chunks every source. Files are read in parallel but
/// tokenized in manifest order, so ids and example order never depend on
/// scheduling.
pub fn ingest_manifest(manifest: &CorpusManifest, base_dir: &Path, tokenizer: &mut dyn Tokenizer) -> Result<Corpus> {
    manifest.validate()?;
    let domains = DomainSet::new(manifest.domains.iter().map(|d| d.name.clone()))?;

    let jobs: Vec<(usize, usize, PathBuf)> = manifest
        .domains
        .iter()
        .enumerate()
        .flat_map(|(d, dom)| {
            dom.sources
                .iter()
                .enumerate()
                .map(move |(s, p)| (d, s, base_dir.join(p)))
        })
        .collect();
    let documents: Vec<Vec<String>> = jobs
        .par_iter()
        .map(|(_, _, path)| read_documents(path))
        .collect::<Result<_>>()?;

    let mut stores: Vec<Vec<Example>> = vec![Vec::new(); domains.len()];
    for ((d, s, _), docs) in jobs.iter().zip(documents) {
        let domain_name = &domains[*d];
        for (doc_idx, text) in docs.iter().enumerate() {
            let tokens = tokenizer.encode(text);
            for (c, piece) in chunk(&tokens, manifest.max_len)?.into_iter().enumerate() {
                let id = format!("{domain_name}:{s}:{doc_idx}:{c}");
                stores[*d].push(Example::single_domain(id, piece, *d as u32)?);
            }
        }
    }
    for (d, store) in stores.iter_mut().enumerate() {
        if store.is_empty() {
            return Err(Error::EmptyDomain(domains[d].to_string()));
        }
        if manifest.pack {
            *store = pack(store, manifest.max_len)?;
        }
    }
    Corpus::new(
        domains,
        stores,
        tokenizer.name(),
        tokenizer.vocab_size(),
        manifest.max_len,
    )
}

fn read_documents(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let is_jsonl = matches!(path.extension().and_then(|e| e.to_str()), Some("jsonl" | "ndjson"));
    if !is_jsonl {
        return Ok(vec![text]);
    }
    #[derive(Deserialize)]
    struct Record {
        text: String,
    }
    text.lines()
        .enumerate()
        .filter(|(_, line)| !line.trim().is_empty())
        .map(|(i, line)| {
            serde_json::from_str::<Record>(line)
                .map(|r| r.text)
                .map_err(|e| Error::parse(format!("{}:{}", path.display(), i + 1), e.to_string()))
        })
        .collect()
}
