//! Group-DRO domain reweighting.
//!
//! Each step draws a minibatch with uniform domain weights, measures per-domain
//! excess loss of the proxy over the reference, moves the domain weights by an
//! exponentiated-gradient step with smoothing toward uniform, and then trains
//! the proxy on the batch with every token weighted by the new weight of its
//! domain. The output is the average of the weights over all steps.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Example};
use crate::error::{Error, Result};
use crate::loss::LossModel;
use crate::rng::SeedTree;
use crate::simplex::{
    dot, exp_update, running_average, running_average_with_initial, smooth_renormalize, DomainSet, DomainWeights,
    WeightAccumulator, WeightTrajectory,
};

pub const DEFAULT_ETA: f64 = 1.0;
pub const DEFAULT_SMOOTHING: f64 = 1e-3;

/// Per-token signal that drives the weight update.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectiveMode {
    /// Proxy loss minus reference loss.
    #[default]
    Excess,
    /// Proxy loss alone; the reference is never queried.
    Hardest,
    /// Negated reference loss; the proxy's losses are never used.
    Easiest,
}

impl ObjectiveMode {
    pub fn needs_reference(self) -> bool {
        !matches!(self, ObjectiveMode::Hardest)
    }

    pub fn needs_proxy_losses(self) -> bool {
        !matches!(self, ObjectiveMode::Easiest)
    }
}

impl FromStr for ObjectiveMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "excess" => Ok(ObjectiveMode::Excess),
            "hardest" => Ok(ObjectiveMode::Hardest),
            "easiest" => Ok(ObjectiveMode::Easiest),
            other => Err(Error::InvalidParameter(format!("unknown objective `{other}`"))),
        }
    }
}

impl fmt::Display for ObjectiveMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ObjectiveMode::Excess => "excess",
            ObjectiveMode::Hardest => "hardest",
            ObjectiveMode::Easiest => "easiest",
        })
    }
}

/// Where the nonnegativity clamp is applied to the per-token signal.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Clipping {
    /// `max(signal, 0)` per token, then averaged per domain.
    #[default]
    PerToken,
    /// Averaged per domain, then `max(mean, 0)`.
    PerDomain,
    /// No clamp; the per-domain signal may be negative.
    None,
}

impl FromStr for Clipping {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per-token" => Ok(Clipping::PerToken),
            "per-domain" => Ok(Clipping::PerDomain),
            "none" => Ok(Clipping::None),
            other => Err(Error::InvalidParameter(format!("unknown clipping `{other}`"))),
        }
    }
}

impl fmt::Display for Clipping {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Clipping::PerToken => "per-token",
            Clipping::PerDomain => "per-domain",
            Clipping::None => "none",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DroConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub eta: f64,
    pub smoothing: f64,
    pub objective: ObjectiveMode,
    pub clipping: Clipping,
    pub seed: u64,
    /// Count the uniform starting point as an extra term of the average.
    pub average_includes_initial: bool,
    /// Keep every step in memory; otherwise only running sums are kept.
    pub retain_trajectory: bool,
}

impl DroConfig {
    pub fn new(steps: usize, batch_size: usize, seed: u64) -> Self {
        DroConfig {
            steps,
            batch_size,
            eta: DEFAULT_ETA,
            smoothing: DEFAULT_SMOOTHING,
            objective: ObjectiveMode::default(),
            clipping: Clipping::default(),
            seed,
            average_includes_initial: false,
            retain_trajectory: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::InvalidParameter("steps must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParameter("batch size must be at least 1".into()));
        }
        if !(self.eta > 0.0 && self.eta.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "step size must be positive, got {}",
                self.eta
            )));
        }
        if !(0.0..=1.0).contains(&self.smoothing) {
            return Err(Error::InvalidParameter(format!(
                "smoothing must lie in [0, 1], got {}",
                self.smoothing
            )));
        }
        Ok(())
    }
}

/// Per-domain update signal for one step.
#[derive(Clone, Debug, PartialEq)]
pub struct ExcessLossStats {
    pub lambda: Vec<f64>,
    /// Tokens of each domain seen in the batch.
    pub token_counts: Vec<u64>,
}

/// Aggregates per-token signals by token-level domain attribution and
/// normalizes by the number of tokens of each domain in `batch`. Domains with
/// no tokens get 0.
pub fn per_domain_excess_loss(
    batch: &[&Example],
    proxy: &dyn LossModel,
    reference: Option<&dyn LossModel>,
    mode: ObjectiveMode,
    clipping: Clipping,
    k: usize,
) -> Result<ExcessLossStats> {
    if batch.is_empty() {
        return Err(Error::InvalidParameter("empty batch".into()));
    }
    let reference = match (mode.needs_reference(), reference) {
        (true, None) => {
            return Err(Error::InvalidParameter(format!(
                "objective `{mode}` needs a reference model"
            )))
        }
        (true, Some(r)) => Some(r),
        (false, _) => None,
    };

    let signals: Vec<Vec<f64>> = batch
        .par_iter()
        .map(|example| token_signal(example, proxy, reference, mode))
        .collect::<Result<_>>()?;

    let mut sums = vec![0.0; k];
    let mut token_counts = vec![0u64; k];
    for (example, signal) in batch.iter().zip(&signals) {
        for (&d, &s) in example.domain_ids().iter().zip(signal) {
            let d = d as usize;
            if d >= k {
                return Err(Error::DomainOutOfRange { index: d, k });
            }
            sums[d] += match clipping {
                Clipping::PerToken => s.max(0.0),
                Clipping::PerDomain | Clipping::None => s,
            };
            token_counts[d] += 1;
        }
    }
    let lambda = sums
        .iter()
        .zip(&token_counts)
        .map(|(&sum, &n)| {
            if n == 0 {
                return 0.0;
            }
            let mean = sum / n as f64;
            match clipping {
                Clipping::PerDomain => mean.max(0.0),
                Clipping::PerToken | Clipping::None => mean,
            }
        })
        .collect();
    Ok(ExcessLossStats { lambda, token_counts })
}

fn token_signal(
    example: &Example,
    proxy: &dyn LossModel,
    reference: Option<&dyn LossModel>,
    mode: ObjectiveMode,
) -> Result<Vec<f64>> {
    let checked = |model: &dyn LossModel| -> Result<Vec<f64>> {
        let losses = model.per_token_losses(example)?;
        if losses.len() != example.len() {
            return Err(Error::LossLengthMismatch {
                example_id: example.id().to_string(),
                expected: example.len(),
                actual: losses.len(),
            });
        }
        Ok(losses)
    };
    match (mode, reference) {
        (ObjectiveMode::Hardest, _) => checked(proxy),
        (ObjectiveMode::Excess, Some(r)) => {
            let p = checked(proxy)?;
            let r = checked(r)?;
            Ok(p.iter().zip(&r).map(|(a, b)| a - b).collect())
        }
        (ObjectiveMode::Easiest, Some(r)) => Ok(checked(r)?.iter().map(|l| -l).collect()),
        (_, None) => unreachable!("reference presence checked by caller"),
    }
}

/// `sum_i alpha_i * lambda_i`, the mixture-weighted excess loss.
pub fn dro_objective(lambda: &[f64], alpha: &DomainWeights) -> Result<f64> {
    dot(alpha.values(), lambda)
}

/// `b` independent draws: a domain uniformly at random, then an example
/// uniformly within it.
pub fn sample_uniform_batch<'c, R: Rng + ?Sized>(
    corpus: &'c Corpus,
    batch_size: usize,
    rng: &mut R,
) -> Result<Vec<&'c Example>> {
    corpus.require_nonempty()?;
    let k = corpus.num_domains();
    Ok((0..batch_size)
        .map(|_| {
            let store = corpus.examples(rng.random_range(0..k));
            &store[rng.random_range(0..store.len())]
        })
        .collect())
}

/// Receives each step as it is produced.
pub trait TrajectorySink {
    fn record(&mut self, report: &StepReport) -> Result<()>;
}

/// Streams `step,domain,alpha,lambda,objective` rows.
pub struct CsvTrajectoryWriter<W: Write> {
    out: W,
    header_written: bool,
}

impl<W: Write> CsvTrajectoryWriter<W> {
    pub fn new(out: W) -> Self {
        CsvTrajectoryWriter {
            out,
            header_written: false,
        }
    }

    pub fn into_inner(self) -> W {
        self.out
    }

    fn write_report(&mut self, report: &StepReport) -> std::io::Result<()> {
        if !self.header_written {
            writeln!(self.out, "step,domain,alpha,lambda,objective")?;
            self.header_written = true;
        }
        for (i, (name, alpha)) in report.weights.iter().enumerate() {
            writeln!(
                self.out,
                "{},{},{},{},{}",
                report.step,
                csv_field(name),
                alpha,
                report.lambda[i],
                report.objective
            )?;
        }
        Ok(())
    }
}

impl<W: Write> TrajectorySink for CsvTrajectoryWriter<W> {
    fn record(&mut self, report: &StepReport) -> Result<()> {
        self.write_report(report)
            .map_err(|e| crate::error::Error::io("trajectory.csv", e))
    }
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

/// Writes an in-memory trajectory in the same CSV layout as
/// [`CsvTrajectoryWriter`].
pub fn write_trajectory_csv<W: Write>(traj: &WeightTrajectory, objectives: &[f64], out: W) -> Result<W> {
    let mut writer = CsvTrajectoryWriter::new(out);
    for (step, &objective) in traj.iter().zip(objectives) {
        writer.record(&StepReport {
            step: step.step,
            weights: step.weights.clone(),
            lambda: step.excess.clone(),
            token_counts: Vec::new(),
            objective,
        })?;
    }
    Ok(writer.into_inner())
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepReport {
    pub step: usize,
    pub weights: DomainWeights,
    pub lambda: Vec<f64>,
    pub token_counts: Vec<u64>,
    pub objective: f64,
}

/// Stepwise state of a reweighting run.
pub struct DroEngine<'r, P> {
    config: DroConfig,
    domains: DomainSet,
    alpha: DomainWeights,
    step: usize,
    proxy: P,
    reference: Option<&'r dyn LossModel>,
    eval_set: Option<Vec<Example>>,
    accumulator: WeightAccumulator,
    trajectory: WeightTrajectory,
    objectives: Vec<f64>,
}

impl<'r, P: LossModel> DroEngine<'r, P> {
    pub fn new(config: DroConfig, domains: DomainSet, reference: Option<&'r dyn LossModel>, proxy: P) -> Result<Self> {
        config.validate()?;
        if config.objective.needs_reference() && reference.is_none() {
            return Err(Error::InvalidParameter(format!(
                "objective `{}` needs a reference model",
                config.objective
            )));
        }
        Ok(DroEngine {
            alpha: DomainWeights::uniform(domains.clone()),
            accumulator: WeightAccumulator::new(domains.clone()),
            domains,
            config,
            step: 0,
            proxy,
            reference,
            eval_set: None,
            trajectory: WeightTrajectory::new(),
            objectives: Vec::new(),
        })
    }

    /// Measure the update signal on a fixed set of examples instead of on
    /// each training batch.
    pub fn with_eval_set(mut self, eval_set: Vec<Example>) -> Result<Self> {
        if eval_set.is_empty() {
            return Err(Error::InvalidParameter("evaluation set is empty".into()));
        }
        self.eval_set = Some(eval_set);
        Ok(self)
    }

    /// Current weights (`alpha_{t}` after `t` steps).
    pub fn weights(&self) -> &DomainWeights {
        &self.alpha
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    pub fn proxy(&self) -> &P {
        &self.proxy
    }

    pub fn trajectory(&self) -> &WeightTrajectory {
        &self.trajectory
    }

    /// One iteration: signal, weight update, then proxy update.
    pub fn step(&mut self, batch: &[&Example]) -> Result<StepReport> {
        let t = self.step + 1;
        self.proxy.begin_step(t);
        let k = self.domains.len();
        let stats = match &self.eval_set {
            Some(eval) => {
                let eval: Vec<&Example> = eval.iter().collect();
                self.signal(&eval, k)?
            }
            None => self.signal(batch, k)?,
        };

        let raw = exp_update(&self.alpha, &stats.lambda, self.config.eta)?;
        let alpha = smooth_renormalize(&self.domains, raw.scaled(), self.config.smoothing)?;

        if self.proxy.is_trainable() {
            for example in batch {
                self.proxy.update(example, alpha.values())?;
            }
        }

        let objective = dro_objective(&stats.lambda, &alpha)?;
        self.accumulator.add(&alpha)?;
        if self.config.retain_trajectory {
            self.trajectory.push(t, alpha.clone(), stats.lambda.clone())?;
            self.objectives.push(objective);
        }
        self.alpha = alpha.clone();
        self.step = t;
        Ok(StepReport {
            step: t,
            weights: alpha,
            lambda: stats.lambda,
            token_counts: stats.token_counts,
            objective,
        })
    }

    fn signal(&self, batch: &[&Example], k: usize) -> Result<ExcessLossStats> {
        per_domain_excess_loss(
            batch,
            &self.proxy,
            self.reference,
            self.config.objective,
            self.config.clipping,
            k,
        )
    }

    /// Averaged weights over the steps taken so far.
    pub fn averaged(&self) -> Result<DomainWeights> {
        if self.config.average_includes_initial {
            let initial = DomainWeights::uniform(self.domains.clone());
            if self.config.retain_trajectory {
                return running_average_with_initial(&self.trajectory, &initial);
            }
            let mut sums = self.accumulator.clone();
            sums.add(&initial)?;
            return sums.mean();
        }
        if self.config.retain_trajectory {
            return running_average(&self.trajectory);
        }
        self.accumulator.mean()
    }

    pub fn finish(self) -> Result<DroRunResult<P>> {
        let averaged = self.averaged()?;
        Ok(DroRunResult {
            averaged,
            trajectory: self.trajectory,
            objectives: self.objectives,
            final_weights: self.alpha,
            steps: self.step,
            proxy: self.proxy,
        })
    }
}

#[derive(Debug)]
pub struct DroRunResult<P> {
    /// Mean of `alpha_1..alpha_T`.
    pub averaged: DomainWeights,
    /// Every step, when the run retained its trajectory.
    pub trajectory: WeightTrajectory,
    /// `dro_objective` per retained step.
    pub objectives: Vec<f64>,
    pub final_weights: DomainWeights,
    pub steps: usize,
    pub proxy: P,
}

/// Optional hooks for [`run_with`].
#[derive(Default)]
pub struct RunOptions<'s> {
    pub eval_set: Option<Vec<Example>>,
    pub sink: Option<&'s mut dyn TrajectorySink>,
}

/// Runs `config.steps` steps from uniform weights. Batches come from a stream
/// derived from `config.seed`.
pub fn run<P: LossModel>(
    config: &DroConfig,
    corpus: &Corpus,
    reference: Option<&dyn LossModel>,
    proxy: P,
) -> Result<DroRunResult<P>> {
    run_with(config, corpus, reference, proxy, RunOptions::default())
}

pub fn run_with<P: LossModel>(
    config: &DroConfig,
    corpus: &Corpus,
    reference: Option<&dyn LossModel>,
    proxy: P,
    options: RunOptions<'_>,
) -> Result<DroRunResult<P>> {
    corpus.require_nonempty()?;
    let mut engine = DroEngine::new(config.clone(), corpus.domains().clone(), reference, proxy)?;
    if let Some(eval) = options.eval_set {
        engine = engine.with_eval_set(eval)?;
    }
    let mut sink = options.sink;
    let mut rng = SeedTree::new(config.seed).rng(&["dro", "batch"]);
    for _ in 0..config.steps {
        let batch = sample_uniform_batch(corpus, config.batch_size, &mut rng)?;
        let report = engine.step(&batch)?;
        log::debug!(
            "step {} objective {:.6} weights {:?}",
            report.step,
            report.objective,
            report.weights.values()
        );
        if let Some(s) = sink.as_deref_mut() {
            s.record(&report)?;
        }
    }
    engine.finish()
}

/// Echo of a run for reproducibility.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunManifest {
    pub config: DroConfig,
    pub seed: u64,
    pub corpus_fingerprint: String,
    pub domains: Vec<String>,
    pub averaged_weights: indexmap::IndexMap<String, f64>,
}

impl RunManifest {
    pub fn new(config: &DroConfig, corpus: &Corpus, averaged: &DomainWeights) -> Self {
        RunManifest {
            config: config.clone(),
            seed: config.seed,
            corpus_fingerprint: corpus.fingerprint(),
            domains: corpus.domains().names().to_vec(),
            averaged_weights: averaged.iter().map(|(n, v)| (n.to_string(), v)).collect(),
        }
    }
}
