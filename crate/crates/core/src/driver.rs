//! Full rounds (train reference, reweight, average) and the iterated loop
//! that feeds each round's output back in as the next reference mixture.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{hierarchical_sample, Corpus};
use crate::dro::{run_with, write_trajectory_csv, DroConfig, RunManifest, RunOptions};
use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::rng::SeedTree;
use crate::simplex::{running_average, DomainWeights, WeightTrajectory};
use crate::weights_io::{write_weights, WeightFormat};

pub const DEFAULT_TOL: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    pub alpha_ref: DomainWeights,
    pub averaged: DomainWeights,
    /// `max_i |averaged_i - alpha_ref_i|`.
    pub change: f64,
    /// Relative to the run directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trajectory_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manifest_path: Option<PathBuf>,
    /// Kept in memory only.
    #[serde(skip)]
    pub trajectory: WeightTrajectory,
}

/// Where a round writes its artifacts.
#[derive(Clone, Debug)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    /// Creates `parent/<name>`.
    pub fn create(parent: &Path, name: &str) -> Result<Self> {
        let root = parent.join(name);
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(RunDir { root })
    }

    pub fn path(&self) -> &Path {
        &self.root
    }
}

/// `run-<unix seconds>-<first 8 hex digits of a hash of config and corpus>`.
pub fn run_dir_name(config: &DroConfig, corpus_fingerprint: &str, unix_seconds: u64) -> String {
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config).expect("config serializes"));
    hasher.update(corpus_fingerprint.as_bytes());
    let digest = hex::encode(hasher.finalize());
    format!("run-{unix_seconds}-{}", &digest[..8])
}

fn round_config(config: &DroConfig, round: usize) -> DroConfig {
    let seeds = SeedTree::new(config.seed);
    DroConfig {
        seed: seeds.child(&["round", &round.to_string(), "dro"]).master(),
        ..config.clone()
    }
}

/// Trains a fresh model on `steps * batch_size` examples drawn under
/// `alpha_ref`, every token at unit weight.
pub fn train_reference<P, F>(
    corpus: &Corpus,
    alpha_ref: &DomainWeights,
    config: &DroConfig,
    round: usize,
    fresh: &F,
) -> Result<P>
where
    P: LossModel,
    F: Fn() -> Result<P>,
{
    let mut model = fresh()?;
    let mut rng = SeedTree::new(config.seed).rng(&["round", &round.to_string(), "reference"]);
    let n = config
        .steps
        .checked_mul(config.batch_size)
        .ok_or_else(|| Error::InvalidParameter("reference budget overflows".into()))?;
    let ones = vec![1.0; corpus.num_domains()];
    for example in hierarchical_sample(corpus, alpha_ref, n, &mut rng)? {
        model.update(example, &ones)?;
    }
    Ok(model)
}

/// One round: reference under `alpha_ref`, then the reweighting loop with a
/// fresh proxy. `round` only selects random streams and labels artifacts.
pub fn run_round<P, F>(
    corpus: &Corpus,
    alpha_ref: &DomainWeights,
    config: &DroConfig,
    round: usize,
    fresh: &F,
    out: Option<&RunDir>,
) -> Result<RoundRecord>
where
    P: LossModel,
    F: Fn() -> Result<P>,
{
    if alpha_ref.domains() != corpus.domains() {
        return Err(Error::InvalidDomains(
            "reference weights and corpus name different domains".into(),
        ));
    }
    let reference = if config.objective.needs_reference() {
        Some(train_reference(corpus, alpha_ref, config, round, fresh)?)
    } else {
        None
    };
    let cfg = round_config(config, round);
    let result = run_with(
        &cfg,
        corpus,
        reference.as_ref().map(|r| r as &dyn LossModel),
        fresh()?,
        RunOptions::default(),
    )?;
    let change = result.averaged.max_abs_diff(alpha_ref)?;
    log::info!("round {round}: change {change:.3e}");

    let mut record = RoundRecord {
        round,
        alpha_ref: alpha_ref.clone(),
        averaged: result.averaged,
        change,
        trajectory_path: None,
        manifest_path: None,
        trajectory: result.trajectory,
    };
    if let Some(dir) = out {
        let rel = PathBuf::from(format!("round-{round:02}"));
        let abs = dir.path().join(&rel);
        fs::create_dir_all(&abs).map_err(|e| Error::io(&abs, e))?;

        let traj = abs.join("trajectory.csv");
        let bytes = write_trajectory_csv(&record.trajectory, &result.objectives, Vec::new())?;
        fs::write(&traj, bytes).map_err(|e| Error::io(&traj, e))?;

        let manifest = abs.join("manifest.json");
        let text = serde_json::to_string_pretty(&RunManifest::new(&cfg, corpus, &record.averaged))?;
        fs::write(&manifest, text + "\n").map_err(|e| Error::io(&manifest, e))?;

        for format in [WeightFormat::Json, WeightFormat::Tsv] {
            let path = abs.join(format!("weights.{}", format.extension()));
            write_weights(&record.averaged, &path, format)?;
        }
        record.trajectory_path = Some(rel.join("trajectory.csv"));
        record.manifest_path = Some(rel.join("manifest.json"));
    }
    Ok(record)
}

/// Rounds until `change < tol` or `max_rounds` rounds have run.
pub fn iterated_doremi<P, F>(
    corpus: &Corpus,
    alpha_init: &DomainWeights,
    config: &DroConfig,
    tol: f64,
    max_rounds: usize,
    fresh: &F,
    out: Option<&RunDir>,
) -> Result<Vec<RoundRecord>>
where
    P: LossModel,
    F: Fn() -> Result<P>,
{
    if max_rounds == 0 {
        return Err(Error::InvalidParameter("max_rounds must be at least 1".into()));
    }
    if !(tol > 0.0 && tol.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "tolerance must be positive, got {tol}"
        )));
    }
    let mut records = Vec::new();
    let mut alpha_ref = alpha_init.clone();
    for round in 1..=max_rounds {
        let record = run_round(corpus, &alpha_ref, config, round, fresh, out)?;
        let done = record.change < tol;
        alpha_ref = record.averaged.clone();
        records.push(record);
        if done {
            break;
        }
    }
    if let Some(dir) = out {
        let path = dir.path().join("rounds.json");
        let text = serde_json::to_string_pretty(&records)?;
        fs::write(&path, text + "\n").map_err(|e| Error::io(&path, e))?;
    }
    Ok(records)
}

/// Checks that a record's stored numbers agree with each other.
pub fn verify_record(record: &RoundRecord) -> Result<bool> {
    let change = record.averaged.max_abs_diff(&record.alpha_ref)?;
    let mut ok = change == record.change;
    if !record.trajectory.is_empty() {
        ok &= running_average(&record.trajectory)? == record.averaged;
    }
    Ok(ok)
}

pub fn export_weights(weights: &DomainWeights, path: &Path, format: WeightFormat) -> Result<()> {
    write_weights(weights, path, format)
}


#[cfg(test)]
mod props {
    use super::*;
    use crate::corpus::Example;
    use crate::loss::DirichletUnigramModel;
    use crate::simplex::DomainSet;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig { cases: 32, failure_persistence: None, ..ProptestConfig::default() })]

        #[test]
        fn stops_exactly_when_told(
            sizes in prop::collection::vec(1usize..4, 2..5),
            tol in 1e-4f64..0.3,
            max_rounds in 1usize..6,
            seed in any::<u64>(),
        ) {
            let k = sizes.len();
            let stores = sizes
                .iter()
                .enumerate()
                .map(|(d, &n)| (0..n).map(|i| Example::single_domain(format!("{d}:{i}"), vec![(d + i) as u32 % 8], d as u32).unwrap()).collect())
                .collect();
            let corpus = Corpus::new(DomainSet::numbered(k).unwrap(), stores, "test", 8, 8).unwrap();
            let fresh = || DirichletUnigramModel::symmetric(k, 8, 1.0);
            let u = DomainWeights::uniform(corpus.domains().clone());
            let records = iterated_doremi(&corpus, &u, &DroConfig::new(4, 2, seed), tol, max_rounds, &fresh, None).unwrap();
            prop_assert!(!records.is_empty() && records.len() <= max_rounds);
            let (last, earlier) = records.split_last().unwrap();
            for r in earlier {
                prop_assert!(r.change >= tol);
            }
            prop_assert!(last.change < tol || records.len() == max_rounds);
            for pair in records.windows(2) {
                prop_assert_eq!(&pair[1].alpha_ref, &pair[0].averaged);
            }
        }
    }
}
