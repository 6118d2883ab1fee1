use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::sampling::hierarchical_sample_indices;
use super::{Corpus, Example};
use crate::error::{Error, Result};
use crate::rng::SeedTree;
use crate::simplex::DomainWeights;

/// Target mixture for a resampled dataset.
#[derive(Clone, Debug)]
pub struct MixtureSpec {
    pub weights: DomainWeights,
    pub n_out: usize,
    pub seed: u64,
}

impl MixtureSpec {
    pub fn new(weights: DomainWeights, n_out: usize, seed: u64) -> Result<Self> {
        if n_out == 0 {
            return Err(Error::InvalidParameter("n_out must be at least 1".into()));
        }
        Ok(MixtureSpec { weights, n_out, seed })
    }
}

/// One line of a resampled per-domain JSONL file.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct SavedExample {
    pub example_id: String,
    pub tokens: Vec<u32>,
    pub domain_ids: Vec<u32>,
}

impl From<&Example> for SavedExample {
    fn from(e: &Example) -> Self {
        SavedExample {
            example_id: e.id().to_string(),
            tokens: e.tokens().to_vec(),
            domain_ids: e.domain_ids().to_vec(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ResampleManifest {
    pub weights: IndexMap<String, f64>,
    pub n_out: usize,
    pub seed: u64,
    pub source_fingerprint: String,
    pub tokenizer: String,
    pub max_len: usize,
    pub realized_counts: IndexMap<String, usize>,
    /// Domain name to file name, relative to the manifest.
    pub files: IndexMap<String, String>,
}

/// Draws `spec.n_out` examples under `spec.weights` with the spec's seed.
pub fn resample<'c>(corpus: &'c Corpus, spec: &MixtureSpec) -> Result<Vec<&'c Example>> {
    Ok(resample_indices(corpus, spec)?
        .into_iter()
        .map(|(d, i)| &corpus.examples(d)[i])
        .collect())
}

fn resample_indices(corpus: &Corpus, spec: &MixtureSpec) -> Result<Vec<(usize, usize)>> {
    let mut rng = SeedTree::new(spec.seed).rng(&["resample"]);
    hierarchical_sample_indices(corpus, &spec.weights, spec.n_out, &mut rng)
}

/// Writes the resampled dataset to `out_dir` as one JSONL file per domain plus
/// `manifest.json`, and returns the manifest.
pub fn resample_dataset(corpus: &Corpus, spec: &MixtureSpec, out_dir: &Path) -> Result<ResampleManifest> {
    let drawn = resample_indices(corpus, spec)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let k = corpus.num_domains();
    let file_names: Vec<String> = corpus
        .domains()
        .iter()
        .enumerate()
        .map(|(i, name)| format!("{i:02}-{}.jsonl", sanitize(name)))
        .collect();
    let mut writers = Vec::with_capacity(k);
    for name in &file_names {
        let path = out_dir.join(name);
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        writers.push((path, BufWriter::new(file)));
    }

    let mut counts = vec![0usize; k];
    for (d, i) in drawn {
        let example = &corpus.examples(d)[i];
        counts[d] += 1;
        let (path, w) = &mut writers[d];
        serde_json::to_writer(&mut *w, &SavedExample::from(example))?;
        w.write_all(b"\n").map_err(|e| Error::io(path.clone(), e))?;
    }
    for (path, mut w) in writers {
        w.flush().map_err(|e| Error::io(path, e))?;
    }

    let names = corpus.domains().names();
    let manifest = ResampleManifest {
        weights: spec.weights.iter().map(|(n, v)| (n.to_string(), v)).collect(),
        n_out: spec.n_out,
        seed: spec.seed,
        source_fingerprint: corpus.fingerprint(),
        tokenizer: corpus.tokenizer().to_string(),
        max_len: corpus.max_len(),
        realized_counts: names.iter().cloned().zip(counts).collect(),
        files: names.iter().cloned().zip(file_names).collect(),
    };
    let path = out_dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(manifest)
}

fn sanitize(name: &str) -> String {
    name.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' {
                c
            } else {
                '_'
            }
        })
        .collect()
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::simplex::{normalize, DomainSet};
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig { cases: 8, failure_persistence: None, ..ProptestConfig::default() })]

        #[test]
        fn proportions_converge(raw in prop::collection::vec(1e-3f64..100.0, 1..=22), seed in any::<u64>()) {
            let k = raw.len();
            let domains = DomainSet::numbered(k).unwrap();
            let stores = (0..k)
                .map(|d| (0..3).map(|i| Example::single_domain(format!("{d}:{i}"), vec![i], d as u32).unwrap()).collect())
                .collect();
            let corpus = Corpus::new(domains.clone(), stores, "test", 8, 8).unwrap();
            let alpha = normalize(&domains, &raw).unwrap();
            let n = 1_000_000;
            let mut counts = vec![0usize; k];
            for e in resample(&corpus, &MixtureSpec::new(alpha.clone(), n, seed).unwrap()).unwrap() {
                counts[e.primary_domain() as usize] += 1;
            }
            for (d, &c) in counts.iter().enumerate() {
                prop_assert!((c as f64 / n as f64 - alpha[d]).abs() <= 0.01);
            }
        }
    }
}
