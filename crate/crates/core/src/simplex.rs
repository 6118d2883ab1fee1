//! Arithmetic on domain-weight vectors.
//!
//! Every reduction runs in domain-index order so results do not depend on
//! thread count or call site. Whenever a vector is put back on the simplex the
//! last operation is an explicit division by its computed sum.

use std::collections::HashSet;
use std::fmt;
use std::ops::Index;
use std::sync::Arc;

use serde::ser::SerializeMap;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Tolerance for the unit-sum invariant of [`DomainWeights`].
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

/// Ordered, duplicate-free list of domain names shared between weight vectors.
#[derive(Clone, PartialEq, Eq)]
pub struct DomainSet(Arc<[String]>);

impl DomainSet {
    pub fn new<I, S>(names: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.is_empty() {
            return Err(Error::InvalidDomains("at least one domain is required".into()));
        }
        let mut seen = HashSet::with_capacity(names.len());
        for name in &names {
            if !seen.insert(name.as_str()) {
                return Err(Error::InvalidDomains(format!("duplicate domain `{name}`")));
            }
        }
        Ok(DomainSet(names.into()))
    }

    /// `domain1`, `domain2`, ... for synthetic instances.
    pub fn numbered(k: usize) -> Result<Self> {
        Self::new((1..=k).map(|i| format!("domain{i}")))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.0
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.0.iter().position(|n| n == name)
    }

    pub fn iter(&self) -> impl Iterator<Item = &str> {
        self.0.iter().map(String::as_str)
    }
}

impl fmt::Debug for DomainSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_list().entries(self.0.iter()).finish()
    }
}

impl Index<usize> for DomainSet {
    type Output = str;

    fn index(&self, index: usize) -> &str {
        &self.0[index]
    }
}

/// A point on the probability simplex over a named set of domains.
#[derive(Clone, Debug, PartialEq)]
pub struct DomainWeights {
    domains: DomainSet,
    values: Vec<f64>,
}

impl DomainWeights {
    /// Validates that `values` already lies on the simplex.
    pub fn new(domains: DomainSet, values: Vec<f64>) -> Result<Self> {
        check_dim(domains.len(), values.len())?;
        check_nonnegative(&values)?;
        let sum = ordered_sum(&values);
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(Error::WeightSum {
                sum,
                tolerance: SIMPLEX_TOLERANCE,
            });
        }
        Ok(DomainWeights { domains, values })
    }

    pub fn uniform(domains: DomainSet) -> Self {
        let k = domains.len();
        DomainWeights {
            values: vec![1.0 / k as f64; k],
            domains,
        }
    }

    /// All mass on domain `index`.
    pub fn one_hot(domains: DomainSet, index: usize) -> Result<Self> {
        let k = domains.len();
        if index >= k {
            return Err(Error::DomainOutOfRange { index, k });
        }
        let mut values = vec![0.0; k];
        values[index] = 1.0;
        Ok(DomainWeights { domains, values })
    }

    pub fn domains(&self) -> &DomainSet {
        &self.domains
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, domain: &str) -> Option<f64> {
        self.domains.index_of(domain).map(|i| self.values[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, f64)> {
        self.domains.iter().zip(self.values.iter().copied())
    }

    /// `max_i |self_i - other_i|`.
    pub fn max_abs_diff(&self, other: &DomainWeights) -> Result<f64> {
        check_dim(self.len(), other.len())?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

impl Index<usize> for DomainWeights {
    type Output = f64;

    fn index(&self, index: usize) -> &f64 {
        &self.values[index]
    }
}

impl Serialize for DomainWeights {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let mut map = serializer.serialize_map(Some(self.len()))?;
        for (name, value) in self.iter() {
            map.serialize_entry(name, &value)?;
        }
        map.end()
    }
}

impl<'de> Deserialize<'de> for DomainWeights {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let map = indexmap::IndexMap::<String, f64>::deserialize(deserializer)?;
        let domains = DomainSet::new(map.keys().cloned()).map_err(serde::de::Error::custom)?;
        DomainWeights::new(domains, map.into_values().collect()).map_err(serde::de::Error::custom)
    }
}

/// One recorded step of a reweighting run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryStep {
    pub step: usize,
    pub weights: DomainWeights,
    /// Per-domain excess losses that produced `weights` (post-clipping, so
    /// nonnegative, unless clipping was disabled).
    pub excess: Vec<f64>,
}

/// Ordered record of `(t, alpha_t, lambda_t)` for `t = 1..T`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightTrajectory {
    steps: Vec<TrajectoryStep>,
}

impl WeightTrajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a trajectory with steps numbered from 1 and zero excess.
    pub fn from_weights(weights: impl IntoIterator<Item = DomainWeights>) -> Result<Self> {
        let mut traj = Self::new();
        for (i, w) in weights.into_iter().enumerate() {
            let k = w.len();
            traj.push(i + 1, w, vec![0.0; k])?;
        }
        Ok(traj)
    }

    pub fn push(&mut self, step: usize, weights: DomainWeights, excess: Vec<f64>) -> Result<()> {
        let min_step = self.steps.last().map_or(1, |s| s.step + 1);
        if step < min_step {
            return Err(Error::InvalidParameter(format!(
                "trajectory step {step} must be at least {min_step}"
            )));
        }
        check_dim(weights.len(), excess.len())?;
        if let Some(first) = self.steps.first() {
            if first.weights.domains() != weights.domains() {
                return Err(Error::InvalidDomains(
                    "trajectory steps must share one domain set".into(),
                ));
            }
        }
        check_finite(&excess)?;
        self.steps.push(TrajectoryStep { step, weights, excess });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn steps(&self) -> &[TrajectoryStep] {
        &self.steps
    }

    pub fn last(&self) -> Option<&TrajectoryStep> {
        self.steps.last()
    }

    pub fn iter(&self) -> impl Iterator<Item = &TrajectoryStep> {
        self.steps.iter()
    }
}

/// Result of an exponentiated-gradient step before renormalization.
///
/// Stored as `scaled * exp(log_shift)` so that large excess losses do not
/// overflow; `scaled` is bounded by the previous weights.
#[derive(Clone, Debug, PartialEq)]
pub struct UnnormalizedWeights {
    scaled: Vec<f64>,
    log_shift: f64,
}

impl UnnormalizedWeights {
    /// Values proportional to the true update, all finite and at most 1.
    pub fn scaled(&self) -> &[f64] {
        &self.scaled
    }

    pub fn log_shift(&self) -> f64 {
        self.log_shift
    }

    /// The literal `prev * exp(eta * lambda)`. May overflow to infinity for
    /// very large excess losses; use [`scaled`](Self::scaled) for arithmetic.
    pub fn materialize(&self) -> Vec<f64> {
        let factor = self.log_shift.exp();
        self.scaled.iter().map(|v| v * factor).collect()
    }
}

/// Scales a nonnegative vector to unit sum.
pub fn normalize(domains: &DomainSet, raw: &[f64]) -> Result<DomainWeights> {
    check_dim(domains.len(), raw.len())?;
    let values = normalize_values(raw)?;
    Ok(DomainWeights {
        domains: domains.clone(),
        values,
    })
}

pub(crate) fn normalize_values(raw: &[f64]) -> Result<Vec<f64>> {
    check_nonnegative(raw)?;
    let sum = ordered_sum(raw);
    if sum <= 0.0 {
        return Err(Error::DegenerateWeights);
    }
    if !sum.is_finite() {
        return Err(Error::NonFinite {
            index: raw.iter().position(|v| !v.is_finite()).unwrap_or(0),
            value: sum,
        });
    }
    Ok(raw.iter().map(|v| v / sum).collect())
}

/// `prev[i] * exp(eta * lambda[i])`, entrywise, without renormalizing.
///
/// `lambda` is normally nonnegative (clipped excess loss); negative entries are
/// accepted for unclipped ablations.
pub fn exp_update(prev: &DomainWeights, lambda: &[f64], eta: f64) -> Result<UnnormalizedWeights> {
    check_dim(prev.len(), lambda.len())?;
    if !(eta > 0.0 && eta.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "step size must be positive and finite, got {eta}"
        )));
    }
    check_finite(lambda)?;
    let log_shift = lambda.iter().map(|l| eta * l).fold(f64::NEG_INFINITY, f64::max);
    let scaled = prev
        .values()
        .iter()
        .zip(lambda)
        .map(|(&p, &l)| {
            if p == 0.0 {
                0.0
            } else {
                (p.ln() + eta * l - log_shift).exp()
            }
        })
        .collect();
    Ok(UnnormalizedWeights { scaled, log_shift })
}

/// `(1 - c) * normalize(raw) + c * uniform`.
pub fn smooth_renormalize(domains: &DomainSet, raw: &[f64], c: f64) -> Result<DomainWeights> {
    if !(0.0..=1.0).contains(&c) {
        return Err(Error::InvalidParameter(format!(
            "smoothing must lie in [0, 1], got {c}"
        )));
    }
    check_dim(domains.len(), raw.len())?;
    let normalized = normalize_values(raw)?;
    let floor = c / raw.len() as f64;
    let mixed: Vec<f64> = normalized.iter().map(|v| (1.0 - c) * v + floor).collect();
    // Mixing can drift the sum by an ulp; the final division restores it
    // while keeping every entry at or above the floor up to rounding.
    let values = normalize_values(&mixed)?;
    Ok(DomainWeights {
        domains: domains.clone(),
        values,
    })
}

/// Coordinate-wise mean of `alpha_1..alpha_T`.
pub fn running_average(traj: &WeightTrajectory) -> Result<DomainWeights> {
    let first = traj.steps().first().ok_or(Error::EmptyTrajectory)?;
    let mut acc = WeightAccumulator::new(first.weights.domains().clone());
    for step in traj.iter() {
        acc.add(&step.weights)?;
    }
    acc.mean()
}

/// Same as [`running_average`] but with `initial` (usually the uniform
/// `alpha_0`) counted as an extra leading term.
pub fn running_average_with_initial(traj: &WeightTrajectory, initial: &DomainWeights) -> Result<DomainWeights> {
    let mut acc = WeightAccumulator::new(initial.domains().clone());
    acc.add(initial)?;
    for step in traj.iter() {
        acc.add(&step.weights)?;
    }
    acc.mean()
}

/// Exponential moving average `e_1 = alpha_1`,
/// `e_t = decay * e_{t-1} + (1 - decay) * alpha_t`.
pub fn ema_trajectory(traj: &WeightTrajectory, decay: f64) -> Result<Vec<DomainWeights>> {
    if !(0.0..1.0).contains(&decay) {
        return Err(Error::InvalidParameter(format!(
            "decay must lie in [0, 1), got {decay}"
        )));
    }
    let mut out: Vec<DomainWeights> = Vec::with_capacity(traj.len());
    for step in traj.iter() {
        let next = match out.last() {
            None => step.weights.clone(),
            Some(prev) => {
                let mixed: Vec<f64> = prev
                    .values()
                    .iter()
                    .zip(step.weights.values())
                    .map(|(e, a)| decay * e + (1.0 - decay) * a)
                    .collect();
                normalize(step.weights.domains(), &mixed)?
            }
        };
        out.push(next);
    }
    if out.is_empty() {
        return Err(Error::EmptyTrajectory);
    }
    Ok(out)
}

/// Running coordinate sums of weight vectors. Produces the same bits as
/// [`running_average`] over the same sequence.
#[derive(Clone, Debug)]
pub struct WeightAccumulator {
    domains: DomainSet,
    sums: Vec<f64>,
    count: usize,
}

impl WeightAccumulator {
    pub fn new(domains: DomainSet) -> Self {
        let k = domains.len();
        WeightAccumulator {
            domains,
            sums: vec![0.0; k],
            count: 0,
        }
    }

    pub fn add(&mut self, weights: &DomainWeights) -> Result<()> {
        check_dim(self.sums.len(), weights.len())?;
        for (s, v) in self.sums.iter_mut().zip(weights.values()) {
            *s += v;
        }
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn mean(&self) -> Result<DomainWeights> {
        if self.count == 0 {
            return Err(Error::EmptyTrajectory);
        }
        let n = self.count as f64;
        let means: Vec<f64> = self.sums.iter().map(|s| s / n).collect();
        normalize(&self.domains, &means)
    }
}

/// `sum_i alpha_i * lambda_i`.
pub fn dot(alpha: &[f64], lambda: &[f64]) -> Result<f64> {
    check_dim(alpha.len(), lambda.len())?;
    Ok(alpha.iter().zip(lambda).fold(0.0, |acc, (a, l)| acc + a * l))
}

pub(crate) fn ordered_sum(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc + v)
}

pub(crate) fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

fn check_finite(values: &[f64]) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if !value.is_finite() {
            return Err(Error::NonFinite { index, value });
        }
    }
    Ok(())
}

fn check_nonnegative(values: &[f64]) -> Result<()> {
    for (index, &value) in values.iter().enumerate() {
        if value.is_nan() {
            return Err(Error::NonFinite { index, value });
        }
        if value < 0.0 {
            return Err(Error::NegativeWeight { index, value });
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn domains(k: usize) -> DomainSet {
        DomainSet::numbered(k).unwrap()
    }

    fn weights(values: &[f64]) -> DomainWeights {
        DomainWeights::new(domains(values.len()), values.to_vec()).unwrap()
    }

    fn assert_close(actual: &[f64], expected: &[f64], tol: f64) {
        assert_eq!(actual.len(), expected.len());
        for (a, e) in actual.iter().zip(expected) {
            assert!((a - e).abs() <= tol, "{actual:?} != {expected:?}");
        }
    }

    #[test]
    fn domain_set_rejects_duplicates_and_empty() {
        assert!(DomainSet::new(["a", "b", "a"]).is_err());
        assert!(DomainSet::new(Vec::<String>::new()).is_err());
    }

    #[test]
    fn normalize_examples() {
        assert_close(normalize(&domains(2), &[2.0, 2.0]).unwrap().values(), &[0.5, 0.5], 0.0);
        assert_close(
            normalize(&domains(3), &[1.0, 0.0, 0.0]).unwrap().values(),
            &[1.0, 0.0, 0.0],
            0.0,
        );
        // 0.1121 / 0.7178 and 0.6057 / 0.7178
        assert_close(
            normalize(&domains(2), &[0.1121, 0.6057]).unwrap().values(),
            &[0.15617, 0.84383],
            5e-6,
        );
    }

    #[test]
    fn normalize_errors() {
        assert!(matches!(
            normalize(&domains(2), &[0.0, 0.0]),
            Err(Error::DegenerateWeights)
        ));
        assert!(matches!(
            normalize(&domains(2), &[1.0, -0.5]),
            Err(Error::NegativeWeight { index: 1, .. })
        ));
        assert!(matches!(
            normalize(&domains(3), &[1.0, 1.0]),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn exp_update_examples() {
        let out = exp_update(&weights(&[0.5, 0.5]), &[std::f64::consts::LN_2, 0.0], 1.0).unwrap();
        assert_close(&out.materialize(), &[1.0, 0.5], 1e-12);

        let prev = weights(&[0.2, 0.3, 0.5]);
        let out = exp_update(&prev, &[0.0; 3], 1.0).unwrap();
        assert_close(&out.materialize(), prev.values(), 1e-15);

        let out = exp_update(&weights(&[0.25, 0.75]), &[1.0, 1.0], 1.0).unwrap();
        let e = std::f64::consts::E;
        assert_close(&out.materialize(), &[0.25 * e, 0.75 * e], 1e-12);
        let back = normalize(&domains(2), &out.materialize()).unwrap();
        assert_close(back.values(), &[0.25, 0.75], 1e-15);
    }

    #[test]
    fn exp_update_survives_huge_excess() {
        let out = exp_update(&weights(&[0.5, 0.5]), &[1e4, 0.0], 1.0).unwrap();
        assert!(out.scaled().iter().all(|v| v.is_finite()));
        let w = smooth_renormalize(&domains(2), out.scaled(), 0.0).unwrap();
        assert_eq!(w.values(), &[1.0, 0.0]);
    }

    #[test]
    fn exp_update_errors() {
        let prev = weights(&[0.5, 0.5]);
        assert!(matches!(
            exp_update(&prev, &[1.0], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            exp_update(&prev, &[f64::NAN, 0.0], 1.0),
            Err(Error::NonFinite { .. })
        ));
        assert!(matches!(
            exp_update(&prev, &[f64::INFINITY, 0.0], 1.0),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn smooth_renormalize_examples() {
        let w = smooth_renormalize(&domains(2), &[1.0, 0.5], 0.0).unwrap();
        assert_close(w.values(), &[2.0 / 3.0, 1.0 / 3.0], 1e-15);

        let w = smooth_renormalize(&domains(2), &[1.0, 0.5], 1e-3).unwrap();
        // 0.999 * 2/3 + 0.0005 and 0.999 * 1/3 + 0.0005
        assert_close(w.values(), &[0.6665, 0.3335], 1e-15);

        let w = smooth_renormalize(&domains(4), &[1.0, 0.0, 0.0, 0.0], 0.001).unwrap();
        let min = w.values().iter().copied().fold(f64::INFINITY, f64::min);
        assert!((min - 0.00025).abs() < 1e-15);
    }

    #[test]
    fn smooth_renormalize_rejects_bad_smoothing() {
        assert!(smooth_renormalize(&domains(2), &[1.0, 1.0], 1.5).is_err());
        assert!(smooth_renormalize(&domains(2), &[1.0, 1.0], -0.1).is_err());
    }

    #[test]
    fn running_average_examples() {
        let w = weights(&[0.3, 0.7]);
        let traj = WeightTrajectory::from_weights(vec![w.clone(); 5]).unwrap();
        assert_close(running_average(&traj).unwrap().values(), w.values(), 1e-15);

        let traj = WeightTrajectory::from_weights([weights(&[1.0, 0.0]), weights(&[0.0, 1.0])]).unwrap();
        assert_close(running_average(&traj).unwrap().values(), &[0.5, 0.5], 0.0);

        let traj =
            WeightTrajectory::from_weights([weights(&[0.8, 0.2]), weights(&[0.6, 0.4]), weights(&[0.4, 0.6])]).unwrap();
        assert_close(running_average(&traj).unwrap().values(), &[0.6, 0.4], 1e-15);

        assert!(matches!(
            running_average(&WeightTrajectory::new()),
            Err(Error::EmptyTrajectory)
        ));
    }

    #[test]
    fn running_average_with_initial_counts_alpha_zero() {
        let traj = WeightTrajectory::from_weights([weights(&[1.0, 0.0])]).unwrap();
        let avg = running_average_with_initial(&traj, &DomainWeights::uniform(domains(2))).unwrap();
        assert_close(avg.values(), &[0.75, 0.25], 1e-15);
    }

    #[test]
    fn ema_examples() {
        let traj =
            WeightTrajectory::from_weights([weights(&[0.8, 0.2]), weights(&[0.1, 0.9]), weights(&[0.5, 0.5])]).unwrap();
        let ema = ema_trajectory(&traj, 0.0).unwrap();
        for (e, s) in ema.iter().zip(traj.iter()) {
            assert_close(e.values(), s.weights.values(), 1e-15);
        }

        let constant = WeightTrajectory::from_weights(vec![weights(&[0.3, 0.7]); 4]).unwrap();
        for e in ema_trajectory(&constant, 0.99).unwrap() {
            assert_close(e.values(), &[0.3, 0.7], 1e-15);
        }

        let traj = WeightTrajectory::from_weights([weights(&[1.0, 0.0]), weights(&[0.0, 1.0])]).unwrap();
        let ema = ema_trajectory(&traj, 0.5).unwrap();
        assert_close(ema[1].values(), &[0.5, 0.5], 0.0);

        assert!(ema_trajectory(&traj, 1.0).is_err());
        assert!(ema_trajectory(&traj, -0.1).is_err());
        assert!(ema_trajectory(&WeightTrajectory::new(), 0.5).is_err());
    }

    #[test]
    fn trajectory_rejects_out_of_order_steps() {
        let mut traj = WeightTrajectory::new();
        assert!(traj.push(0, weights(&[0.5, 0.5]), vec![0.0, 0.0]).is_err());
        traj.push(1, weights(&[0.5, 0.5]), vec![0.0, 0.0]).unwrap();
        assert!(traj.push(1, weights(&[0.5, 0.5]), vec![0.0, 0.0]).is_err());
        assert!(traj.push(2, weights(&[0.5, 0.5]), vec![f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn weights_serialize_as_ordered_map() {
        let w = DomainWeights::new(DomainSet::new(["b", "a"]).unwrap(), vec![0.25, 0.75]).unwrap();
        assert_eq!(serde_json::to_string(&w).unwrap(), r#"{"b":0.25,"a":0.75}"#);
    }
}
