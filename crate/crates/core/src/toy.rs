//! Unigram toy model: parameter-error closed form, a Monte Carlo check of it,
//! and a small end-to-end reweighting simulation.
//!
//! Each domain `z` is a unigram distribution `p*(.|z)` over `m` tokens with a
//! Dirichlet prior `lambda_z`, `s_z = sum_x lambda_z(x)`. With `n_z` samples the
//! posterior-mean estimate has expected squared error
//! `(n_z H_z + s_z^2 Delta_z) / (n_z + s_z)^2`.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{multinomial, Corpus, Example};
use crate::dro::{sample_uniform_batch, Clipping, DroConfig, DroEngine};
use crate::error::{Error, Result};
use crate::loss::{closed_form_cross_entropy, posterior_mean, DirichletUnigramModel, LossModel};
use crate::rng::SeedTree;
use crate::simplex::{normalize_values, DomainSet, DomainWeights};

const ROW_TOLERANCE: f64 = 1e-12;
const MC_BLOCK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyInstance {
    /// `truth[z][x] = p*(x|z)`.
    truth: Vec<Vec<f64>>,
    /// Dirichlet pseudo-counts `lambda_z(x)`.
    prior: Vec<Vec<f64>>,
    /// Training budget.
    n: usize,
}

impl ToyInstance {
    pub fn new(truth: Vec<Vec<f64>>, prior: Vec<Vec<f64>>, n: usize) -> Result<Self> {
        let m = truth.first().map_or(0, Vec::len);
        if truth.is_empty() || m == 0 {
            return Err(Error::InvalidParameter("instance needs domains and tokens".into()));
        }
        if prior.len() != truth.len() {
            return Err(Error::DimensionMismatch {
                expected: truth.len(),
                actual: prior.len(),
            });
        }
        for (row, lam) in truth.iter().zip(&prior) {
            for r in [row, lam] {
                if r.len() != m {
                    return Err(Error::DimensionMismatch {
                        expected: m,
                        actual: r.len(),
                    });
                }
            }
            if row.iter().any(|p| !(0.0..=1.0).contains(p)) {
                return Err(Error::InvalidParameter("probabilities must lie in [0, 1]".into()));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_TOLERANCE {
                return Err(Error::WeightSum {
                    sum,
                    tolerance: ROW_TOLERANCE,
                });
            }
            if lam.iter().any(|l| !(*l > 0.0 && l.is_finite())) {
                return Err(Error::InvalidParameter("prior must be strictly positive".into()));
            }
        }
        Ok(ToyInstance { truth, prior, n })
    }

    pub fn k(&self) -> usize {
        self.truth.len()
    }

    pub fn m(&self) -> usize {
        self.truth[0].len()
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn truth(&self, z: usize) -> &[f64] {
        &self.truth[z]
    }

    pub fn prior(&self, z: usize) -> &[f64] {
        &self.prior[z]
    }

    pub fn s(&self, z: usize) -> f64 {
        self.prior[z].iter().sum()
    }

    pub fn difficulty(&self, z: usize) -> f64 {
        difficulty(&self.truth[z])
    }

    pub fn prior_gap(&self, z: usize) -> f64 {
        prior_gap(&self.truth[z], &self.prior[z]).expect("validated instance")
    }

    pub fn domains(&self) -> DomainSet {
        DomainSet::numbered(self.k()).expect("k >= 1")
    }

    /// Closed-form error of domain `z` after `n_z` samples.
    pub fn param_error(&self, z: usize, n_z: f64) -> f64 {
        closed_form_param_error(n_z, self.difficulty(z), self.prior_gap(z), self.s(z)).expect("validated instance")
    }

    fn check_domain(&self, z: usize) -> Result<()> {
        if z >= self.k() {
            return Err(Error::DomainOutOfRange { index: z, k: self.k() });
        }
        Ok(())
    }
}

/// Three domains over three tokens where moving samples away from the third
/// domain helps every domain: the first is deterministic, the second is
/// skewed, the third matches the prior exactly.
pub fn no_tradeoff_instance() -> ToyInstance {
    let third = 1.0 / 3.0;
    ToyInstance::new(
        vec![vec![1.0, 0.0, 0.0], vec![0.7, 0.2, 0.1], vec![third, third, third]],
        vec![vec![third; 3]; 3],
        500,
    )
    .expect("valid instance")
}

/// `H = sum_x p(x) (1 - p(x))`.
pub fn difficulty(row: &[f64]) -> f64 {
    row.iter().map(|p| p * (1.0 - p)).sum()
}

/// `Delta = sum_x (p(x) - lambda(x)/s)^2`.
pub fn prior_gap(row: &[f64], prior: &[f64]) -> Result<f64> {
    if row.len() != prior.len() {
        return Err(Error::DimensionMismatch {
            expected: row.len(),
            actual: prior.len(),
        });
    }
    let s: f64 = prior.iter().sum();
    if s.is_nan() || s <= 0.0 {
        return Err(Error::InvalidParameter("prior mass must be positive".into()));
    }
    Ok(row.iter().zip(prior).map(|(p, l)| (p - l / s).powi(2)).sum())
}

pub fn closed_form_param_error(n: f64, h: f64, delta: f64, s: f64) -> Result<f64> {
    if !(n >= 0.0 && n.is_finite()) {
        return Err(Error::InvalidParameter(format!("sample count must be >= 0, got {n}")));
    }
    if !(s > 0.0 && s.is_finite()) {
        return Err(Error::InvalidParameter(format!("prior mass must be > 0, got {s}")));
    }
    if h < 0.0 || delta < 0.0 {
        return Err(Error::InvalidParameter("H and Delta must be nonnegative".into()));
    }
    Ok((n * h + s * s * delta) / (n + s).powi(2))
}

/// Sample count above which the error decreases in `n`:
/// `s - 2 s^2 Delta / H`. Requires `H > 0`.
pub fn derivative_threshold(h: f64, delta: f64, s: f64) -> Result<f64> {
    if h.is_nan() || h <= 0.0 {
        return Err(Error::InvalidParameter("threshold needs H > 0".into()));
    }
    Ok(s - 2.0 * s * s * delta / h)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub mean: f64,
    pub stderr: f64,
    pub trials: usize,
}

/// Simulated expected squared error of the posterior mean for domain `z`
/// after `n_z` draws. Trials run in parallel blocks, each with its own stream
/// derived from `seeds`; block sums are combined in block order.
pub fn monte_carlo_param_error(
    instance: &ToyInstance,
    z: usize,
    n_z: u64,
    trials: usize,
    seeds: &SeedTree,
) -> Result<McEstimate> {
    instance.check_domain(z)?;
    if trials == 0 {
        return Err(Error::InvalidParameter("trials must be at least 1".into()));
    }
    let truth = instance.truth(z);
    let prior = instance.prior(z);
    let blocks = trials.div_ceil(MC_BLOCK);
    let z_tag = z.to_string();
    let n_tag = n_z.to_string();
    let sums: Vec<(f64, f64)> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let b_tag = b.to_string();
            let mut rng = seeds.rng(&["mc", &z_tag, &n_tag, &b_tag]);
            let len = MC_BLOCK.min(trials - b * MC_BLOCK);
            let mut sum = 0.0;
            let mut sq = 0.0;
            for _ in 0..len {
                let counts: Vec<f64> = multinomial(n_z, truth, &mut rng)
                    .into_iter()
                    .map(|c| c as f64)
                    .collect();
                let theta = posterior_mean(&counts, prior)?;
                let err: f64 = theta.iter().zip(truth).map(|(t, p)| (t - p).powi(2)).sum();
                sum += err;
                sq += err * err;
            }
            Ok((sum, sq))
        })
        .collect::<Result<_>>()?;
    let (sum, sq) = sums.iter().fold((0.0, 0.0), |(a, b), (s, q)| (a + s, b + q));
    let t = trials as f64;
    let mean = sum / t;
    let stderr = if trials > 1 {
        let var = ((sq - t * mean * mean) / (t - 1.0)).max(0.0);
        (var / t).sqrt()
    } else {
        0.0
    };
    Ok(McEstimate { mean, stderr, trials })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamErrorRow {
    pub domain: usize,
    pub n: u64,
    pub difficulty: f64,
    pub prior_gap: f64,
    pub prior_mass: f64,
    pub closed_form: f64,
    pub monte_carlo: McEstimate,
}

impl ParamErrorRow {
    /// `|MC - closed form|` in units of the MC standard error.
    pub fn z_score(&self) -> f64 {
        let gap = (self.monte_carlo.mean - self.closed_form).abs();
        if self.monte_carlo.stderr == 0.0 {
            if gap < 1e-12 {
                0.0
            } else {
                f64::INFINITY
            }
        } else {
            gap / self.monte_carlo.stderr
        }
    }
}

/// Closed form against simulation for every domain and every count in `ns`.
pub fn lemma_table(instance: &ToyInstance, ns: &[u64], trials: usize, seeds: &SeedTree) -> Result<Vec<ParamErrorRow>> {
    let mut rows = Vec::with_capacity(instance.k() * ns.len());
    for z in 0..instance.k() {
        for &n in ns {
            rows.push(ParamErrorRow {
                domain: z,
                n,
                difficulty: instance.difficulty(z),
                prior_gap: instance.prior_gap(z),
                prior_mass: instance.s(z),
                closed_form: instance.param_error(z, n as f64),
                monte_carlo: monte_carlo_param_error(instance, z, n, trials, seeds)?,
            });
        }
    }
    Ok(rows)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoTradeoffReport {
    pub uniform_counts: Vec<f64>,
    pub counts: Vec<f64>,
    pub uniform_errors: Vec<f64>,
    pub errors: Vec<f64>,
    /// Per domain: error did not increase, and strictly decreased if the
    /// domain gained samples.
    pub holds: Vec<bool>,
}

impl NoTradeoffReport {
    pub fn all_hold(&self) -> bool {
        self.holds.iter().all(|h| *h)
    }
}

/// Compares closed-form errors at expected counts `counts` against the even
/// split `n/k`. Only the last domain may give up samples, and the total must
/// be preserved.
pub fn verify_no_tradeoff(instance: &ToyInstance, counts: &[f64]) -> Result<NoTradeoffReport> {
    let k = instance.k();
    if counts.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: counts.len(),
        });
    }
    let n = instance.n() as f64;
    let even = n / k as f64;
    let total: f64 = counts.iter().sum();
    if (total - n).abs() > 1e-9 * n.max(1.0) {
        return Err(Error::InvalidParameter(format!(
            "reallocation must keep {n} samples, got {total}"
        )));
    }
    let slack = 1e-9 * n.max(1.0);
    for (z, &c) in counts.iter().enumerate() {
        let ok = if z + 1 == k {
            c <= even + slack && c >= 0.0
        } else {
            c >= even - slack
        };
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "reallocation may only move samples out of domain {k} (domain {} has {c})",
                z + 1
            )));
        }
    }
    let uniform_counts = vec![even; k];
    let uniform_errors: Vec<f64> = (0..k).map(|z| instance.param_error(z, even)).collect();
    let errors: Vec<f64> = (0..k).map(|z| instance.param_error(z, counts[z])).collect();
    let holds = (0..k)
        .map(|z| {
            if counts[z] > even + slack {
                errors[z] < uniform_errors[z]
            } else {
                errors[z] <= uniform_errors[z]
            }
        })
        .collect();
    Ok(NoTradeoffReport {
        uniform_counts,
        counts: counts.to_vec(),
        uniform_errors,
        errors,
        holds,
    })
}

/// Which model supplies the reference losses in the simulation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceChoice {
    /// Frozen fit on the uniform-weight training set.
    #[default]
    TrainingSetFit,
    /// Frozen fit on a second, independent uniform-weight sample of size `n`.
    IndependentFit,
    /// The ground-truth distributions.
    GroundTruth,
}

impl ReferenceChoice {
    pub const ALL: [ReferenceChoice; 3] = [
        ReferenceChoice::TrainingSetFit,
        ReferenceChoice::IndependentFit,
        ReferenceChoice::GroundTruth,
    ];
}

impl FromStr for ReferenceChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "training-set-fit" => Ok(ReferenceChoice::TrainingSetFit),
            "independent-fit" => Ok(ReferenceChoice::IndependentFit),
            "ground-truth" => Ok(ReferenceChoice::GroundTruth),
            other => Err(Error::InvalidParameter(format!("unknown reference `{other}`"))),
        }
    }
}

impl fmt::Display for ReferenceChoice {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReferenceChoice::TrainingSetFit => "training-set-fit",
            ReferenceChoice::IndependentFit => "independent-fit",
            ReferenceChoice::GroundTruth => "ground-truth",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySimConfig {
    pub steps: usize,
    pub eta: f64,
    pub batch_size: usize,
    pub eval_per_domain: usize,
    pub eval_len: usize,
    pub smoothing: f64,
    pub clipping: Clipping,
    pub reference: ReferenceChoice,
}

impl Default for ToySimConfig {
    fn default() -> Self {
        ToySimConfig {
            steps: 500,
            eta: 0.5,
            batch_size: 1,
            eval_per_domain: 10,
            eval_len: 10,
            smoothing: 0.0,
            clipping: Clipping::PerToken,
            reference: ReferenceChoice::TrainingSetFit,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySimResult {
    pub seed: u64,
    pub weights: Vec<f64>,
    /// Per-domain cross-entropy against the truth of a model fit on `n`
    /// fresh samples drawn under the averaged weights.
    pub doremi_log_ppl: Vec<f64>,
    /// Same, for the model fit on the uniform-weight training set.
    pub baseline_log_ppl: Vec<f64>,
    /// Domain counts of the training set.
    pub train_counts: Vec<u64>,
    /// Domain counts of the reweighted sample.
    pub resampled_counts: Vec<u64>,
}

impl ToySimResult {
    /// Reweighted model is no worse than the baseline on every domain.
    pub fn improves_all(&self) -> bool {
        self.doremi_log_ppl
            .iter()
            .zip(&self.baseline_log_ppl)
            .all(|(d, b)| d <= b)
    }
}

/// Fixed per-domain token distributions.
struct UnigramTable(Vec<Vec<f64>>);

impl LossModel for UnigramTable {
    fn per_token_losses(&self, example: &Example) -> Result<Vec<f64>> {
        example
            .attributed()
            .map(|(token, domain)| {
                let p = self.0[domain as usize][token as usize];
                if p <= 0.0 {
                    Err(Error::InfiniteLoss {
                        domain: domain as usize,
                        token,
                    })
                } else {
                    Ok((-p.ln()).max(0.0))
                }
            })
            .collect()
    }
}

/// Draws `n` single-token examples with domains chosen uniformly.
fn draw_uniform_dataset(instance: &ToyInstance, n: usize, rng: &mut crate::rng::Rng) -> Result<Corpus> {
    let k = instance.k();
    let counts = multinomial(n as u64, &vec![1.0 / k as f64; k], rng);
    let stores = draw_tokens(instance, &counts, 1, "train", rng)?;
    Corpus::new(instance.domains(), stores, "toy", instance.m(), 1)
}

/// For each domain, `counts[z]` examples of `len` i.i.d. tokens.
fn draw_tokens(
    instance: &ToyInstance,
    counts: &[u64],
    len: usize,
    tag: &str,
    rng: &mut crate::rng::Rng,
) -> Result<Vec<Vec<Example>>> {
    use rand::distr::{weighted::WeightedIndex, Distribution};
    (0..instance.k())
        .map(|z| {
            let dist = WeightedIndex::new(instance.truth(z)).map_err(|e| Error::InvalidParameter(e.to_string()))?;
            (0..counts[z])
                .map(|i| {
                    let tokens = (0..len).map(|_| dist.sample(rng) as u32).collect();
                    Example::single_domain(format!("{tag}:{z}:{i}"), tokens, z as u32)
                })
                .collect()
        })
        .collect()
}

fn fit(instance: &ToyInstance, corpus: &Corpus) -> Result<DirichletUnigramModel> {
    let prior = (0..instance.k()).map(|z| instance.prior(z).to_vec()).collect();
    let mut model = DirichletUnigramModel::new(prior)?;
    for example in corpus.iter() {
        for (token, domain) in example.attributed() {
            model.online_update(domain as usize, token, 1.0)?;
        }
    }
    Ok(model.freeze())
}

fn log_ppl(instance: &ToyInstance, model: &DirichletUnigramModel) -> Result<Vec<f64>> {
    (0..instance.k())
        .map(|z| closed_form_cross_entropy(instance.truth(z), &model.params(z)?))
        .collect()
}

/// One seed of the toy protocol:
/// 1. draw `n` training examples (one token each) under uniform weights;
/// 2. draw a fixed evaluation set of `eval_per_domain` examples of
///    `eval_len` tokens per domain;
/// 3. run the reweighting loop for `steps` steps, measuring excess loss on
///    the evaluation set and training a fresh proxy on single draws from the
///    training set with weight `alpha_t[domain]`;
/// 4. fit a model on `n` fresh examples drawn under the averaged weights and
///    compare its per-domain cross-entropy to the fit on the training set.
pub fn simulate_doremi_toy(instance: &ToyInstance, config: &ToySimConfig, seed: u64) -> Result<ToySimResult> {
    if config.eval_per_domain == 0 || config.eval_len == 0 {
        return Err(Error::InvalidParameter("evaluation set must be non-empty".into()));
    }
    let seeds = SeedTree::new(seed);
    let k = instance.k();

    let train = draw_uniform_dataset(instance, instance.n(), &mut seeds.rng(&["toy", "train"]))?;
    train.require_nonempty()?;
    let baseline = fit(instance, &train)?;

    let eval_stores = draw_tokens(
        instance,
        &vec![config.eval_per_domain as u64; k],
        config.eval_len,
        "eval",
        &mut seeds.rng(&["toy", "eval"]),
    )?;
    let eval_set: Vec<Example> = eval_stores.into_iter().flatten().collect();

    let reference: Box<dyn LossModel> = match config.reference {
        ReferenceChoice::TrainingSetFit => Box::new(baseline.clone()),
        ReferenceChoice::IndependentFit => {
            let other = draw_uniform_dataset(instance, instance.n(), &mut seeds.rng(&["toy", "reference"]))?;
            Box::new(fit(instance, &other)?)
        }
        ReferenceChoice::GroundTruth => Box::new(UnigramTable(instance.truth.clone())),
    };

    let prior = (0..k).map(|z| instance.prior(z).to_vec()).collect();
    let proxy = DirichletUnigramModel::new(prior)?;
    let mut dro = DroConfig::new(config.steps, config.batch_size, seed);
    dro.eta = config.eta;
    dro.smoothing = config.smoothing;
    dro.clipping = config.clipping;
    let mut engine =
        DroEngine::new(dro, train.domains().clone(), Some(reference.as_ref()), proxy)?.with_eval_set(eval_set)?;
    let mut rng = seeds.rng(&["toy", "dro"]);
    for _ in 0..config.steps {
        let batch = sample_uniform_batch(&train, config.batch_size, &mut rng)?;
        engine.step(&batch)?;
    }
    let averaged = engine.finish()?.averaged;

    let mut rng = seeds.rng(&["toy", "resample"]);
    let resampled_counts = multinomial(instance.n() as u64, averaged.values(), &mut rng);
    let stores = draw_tokens(instance, &resampled_counts, 1, "resampled", &mut rng)?;
    let resampled = Corpus::new(instance.domains(), stores, "toy", instance.m(), 1)?;
    let doremi = fit(instance, &resampled)?;

    Ok(ToySimResult {
        seed,
        weights: averaged.values().to_vec(),
        doremi_log_ppl: log_ppl(instance, &doremi)?,
        baseline_log_ppl: log_ppl(instance, &baseline)?,
        train_counts: train.counts().iter().map(|&c| c as u64).collect(),
        resampled_counts,
    })
}

/// Runs every seed (in parallel) and returns results in seed order.
pub fn simulate_seeds(instance: &ToyInstance, config: &ToySimConfig, seeds: &[u64]) -> Result<Vec<ToySimResult>> {
    seeds
        .par_iter()
        .map(|&s| simulate_doremi_toy(instance, config, s))
        .collect()
}

/// Coordinate-wise mean of the per-seed weights.
pub fn mean_weights(results: &[ToySimResult]) -> Result<Vec<f64>> {
    let first = results.first().ok_or(Error::EmptyTrajectory)?;
    let mut sums = vec![0.0; first.weights.len()];
    for r in results {
        for (s, w) in sums.iter_mut().zip(&r.weights) {
            *s += w;
        }
    }
    normalize_values(&sums)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlternativeOutcome {
    pub reference: ReferenceChoice,
    pub mean_weights: Vec<f64>,
    pub improves_all_count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToySimReport {
    pub instance: ToyInstance,
    pub config: ToySimConfig,
    pub seeds: Vec<u64>,
    pub per_seed: Vec<ToySimResult>,
    pub mean_weights: Vec<f64>,
    pub mean_doremi_log_ppl: Vec<f64>,
    pub mean_baseline_log_ppl: Vec<f64>,
    pub improves_all_count: usize,
    /// Outcomes under the other reference choices, same seeds.
    pub alternatives: Vec<AlternativeOutcome>,
    pub lemma: Vec<ParamErrorRow>,
}

fn column_means(rows: impl Iterator<Item = Vec<f64>>, k: usize) -> Vec<f64> {
    let mut sums = vec![0.0; k];
    let mut n = 0usize;
    for row in rows {
        for (s, v) in sums.iter_mut().zip(row) {
            *s += v;
        }
        n += 1;
    }
    sums.into_iter().map(|s| s / n.max(1) as f64).collect()
}

pub fn toy_sim_report(
    instance: &ToyInstance,
    config: &ToySimConfig,
    seeds: &[u64],
    lemma_ns: &[u64],
    lemma_trials: usize,
) -> Result<ToySimReport> {
    let per_seed = simulate_seeds(instance, config, seeds)?;
    let k = instance.k();
    let mut alternatives = Vec::new();
    for choice in ReferenceChoice::ALL {
        if choice == config.reference {
            continue;
        }
        let alt = ToySimConfig {
            reference: choice,
            ..config.clone()
        };
        let results = simulate_seeds(instance, &alt, seeds)?;
        alternatives.push(AlternativeOutcome {
            reference: choice,
            mean_weights: mean_weights(&results)?,
            improves_all_count: results.iter().filter(|r| r.improves_all()).count(),
        });
    }
    let lemma_seed = seeds.first().copied().unwrap_or(0);
    Ok(ToySimReport {
        instance: instance.clone(),
        config: config.clone(),
        seeds: seeds.to_vec(),
        mean_weights: mean_weights(&per_seed)?,
        mean_doremi_log_ppl: column_means(per_seed.iter().map(|r| r.doremi_log_ppl.clone()), k),
        mean_baseline_log_ppl: column_means(per_seed.iter().map(|r| r.baseline_log_ppl.clone()), k),
        improves_all_count: per_seed.iter().filter(|r| r.improves_all()).count(),
        per_seed,
        alternatives,
        lemma: lemma_table(instance, lemma_ns, lemma_trials, &SeedTree::new(lemma_seed))?,
    })
}

/// Weights as a [`DomainWeights`] over `domain1..domaink`.
pub fn as_domain_weights(instance: &ToyInstance, weights: &[f64]) -> Result<DomainWeights> {
    DomainWeights::new(instance.domains(), weights.to_vec())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn instance_shape() {
        let inst = no_tradeoff_instance();
        assert_eq!((inst.k(), inst.m(), inst.n()), (3, 3, 500));
        for z in 0..3 {
            assert!(close(inst.s(z), 1.0, 1e-15));
            assert!(close(inst.truth(z).iter().sum(), 1.0, 1e-12));
        }
        assert_eq!(inst.truth(2), inst.prior(2));
    }

    #[test]
    fn invalid_instances() {
        assert!(ToyInstance::new(vec![vec![0.5, 0.4]], vec![vec![1.0, 1.0]], 1).is_err());
        assert!(ToyInstance::new(vec![vec![0.5, 0.5]], vec![vec![1.0, 0.0]], 1).is_err());
        assert!(ToyInstance::new(vec![vec![0.5, 0.5]], vec![], 1).is_err());
    }

    #[test]
    fn difficulty_and_gap() {
        assert_eq!(difficulty(&[1.0, 0.0, 0.0]), 0.0);
        assert!(close(difficulty(&[0.7, 0.2, 0.1]), 0.46, 1e-12));
        assert!(close(difficulty(&[1.0 / 3.0; 3]), 2.0 / 3.0, 1e-12));
        let u = [1.0 / 3.0; 3];
        assert_eq!(prior_gap(&u, &u).unwrap(), 0.0);
        assert!(close(prior_gap(&[0.7, 0.2, 0.1], &u).unwrap(), 0.207, 5e-4));
        assert!(close(prior_gap(&[1.0, 0.0, 0.0], &u).unwrap(), 2.0 / 3.0, 1e-12));
    }

    #[test]
    fn closed_form_examples() {
        assert_eq!(closed_form_param_error(0.0, 0.46, 0.207, 1.0).unwrap(), 0.207);
        assert!(close(
            closed_form_param_error(10.0, 0.46, 0.207, 1.0).unwrap(),
            0.03973,
            5e-6
        ));
        let mut prev = f64::INFINITY;
        for n in 0..50 {
            let e = closed_form_param_error(n as f64, 0.0, 2.0 / 3.0, 1.0).unwrap();
            assert!(e < prev);
            prev = e;
        }
        assert!(closed_form_param_error(-1.0, 0.1, 0.1, 1.0).is_err());
        assert!(closed_form_param_error(1.0, 0.1, 0.1, 0.0).is_err());
    }

    #[test]
    fn monte_carlo_zero_samples_is_exact() {
        let inst = no_tradeoff_instance();
        let est = monte_carlo_param_error(&inst, 1, 0, 100, &SeedTree::new(1)).unwrap();
        assert!(close(est.mean, inst.prior_gap(1), 1e-15));
        assert!(est.stderr < 1e-12);
    }

    #[test]
    fn monte_carlo_is_deterministic_and_close() {
        let inst = no_tradeoff_instance();
        let seeds = SeedTree::new(7);
        let a = monte_carlo_param_error(&inst, 1, 10, 20_000, &seeds).unwrap();
        let b = monte_carlo_param_error(&inst, 1, 10, 20_000, &seeds).unwrap();
        assert_eq!(a, b);
        assert!((a.mean - inst.param_error(1, 10.0)).abs() <= 4.0 * a.stderr);
    }

    #[test]
    fn no_tradeoff_examples() {
        let inst = no_tradeoff_instance();
        let even = 500.0 / 3.0;
        let same = verify_no_tradeoff(&inst, &[even, even, even]).unwrap();
        assert_eq!(same.errors, same.uniform_errors);
        assert!(same.all_hold());

        let moved = verify_no_tradeoff(&inst, &[250.0, 250.0, 0.0]).unwrap();
        assert!(moved.all_hold());
        assert!(moved.errors[0] < moved.uniform_errors[0]);
        assert!(moved.errors[1] < moved.uniform_errors[1]);
        assert_eq!(moved.errors[2], 0.0);

        assert!(verify_no_tradeoff(&inst, &[100.0, 200.0, 200.0]).is_err());
        assert!(verify_no_tradeoff(&inst, &[250.0, 250.0, 10.0]).is_err());
    }

    #[test]
    fn threshold_for_skewed_domain() {
        let t = derivative_threshold(0.46, 0.207, 1.0).unwrap();
        assert!(close(t, 0.1, 1e-12));
        assert!(derivative_threshold(0.0, 0.1, 1.0).is_err());
    }

    #[test]
    fn simulation_is_deterministic_and_on_simplex() {
        let inst = no_tradeoff_instance();
        let config = ToySimConfig {
            steps: 50,
            ..ToySimConfig::default()
        };
        let a = simulate_doremi_toy(&inst, &config, 3).unwrap();
        let b = simulate_doremi_toy(&inst, &config, 3).unwrap();
        assert_eq!(a, b);
        assert!(close(a.weights.iter().sum(), 1.0, 1e-9));
        assert!(a.weights.iter().all(|w| *w >= 0.0));
        assert_eq!(a.train_counts.iter().sum::<u64>(), 500);
        assert_eq!(a.resampled_counts.iter().sum::<u64>(), 500);
    }

    #[test]
    fn identical_domains_give_near_uniform_weights() {
        let row = vec![0.7, 0.2, 0.1];
        let inst = ToyInstance::new(vec![row; 3], vec![vec![1.0 / 3.0; 3]; 3], 500).unwrap();
        // Single runs land far from uniform; only the seed average is symmetric.
        let results = simulate_seeds(&inst, &ToySimConfig::default(), &(0..200).collect::<Vec<_>>()).unwrap();
        let mean = mean_weights(&results).unwrap();
        for w in mean {
            assert!(close(w, 1.0 / 3.0, 0.08), "{w}");
        }
    }

    #[test]
    fn reference_choices_parse() {
        for c in ReferenceChoice::ALL {
            assert_eq!(c.to_string().parse::<ReferenceChoice>().unwrap(), c);
        }
    }
}
