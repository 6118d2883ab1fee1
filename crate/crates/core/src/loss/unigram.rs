use super::LossModel;
use crate::corpus::Example;
use crate::error::{Error, Result};

/// Posterior mean of a Dirichlet-multinomial:
/// `theta(x) = (pseudocount(x) + count(x)) / (n + s)` with `n = sum(counts)`,
/// `s = sum(pseudocounts)`.
pub fn posterior_mean(counts: &[f64], pseudocounts: &[f64]) -> Result<Vec<f64>> {
    if counts.len() != pseudocounts.len() {
        return Err(Error::DimensionMismatch {
            expected: pseudocounts.len(),
            actual: counts.len(),
        });
    }
    validate_prior(pseudocounts)?;
    for (index, &value) in counts.iter().enumerate() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
    }
    let n = counts.iter().fold(0.0, |a, c| a + c);
    let s = pseudocounts.iter().fold(0.0, |a, c| a + c);
    let total = n + s;
    Ok(pseudocounts.iter().zip(counts).map(|(l, c)| (l + c) / total).collect())
}

/// `-sum_x truth(x) ln params(x)`; terms with `truth(x) = 0` contribute 0.
pub fn closed_form_cross_entropy(truth: &[f64], params: &[f64]) -> Result<f64> {
    if truth.len() != params.len() {
        return Err(Error::DimensionMismatch {
            expected: truth.len(),
            actual: params.len(),
        });
    }
    let mut total = 0.0;
    for (x, (&p, &q)) in truth.iter().zip(params).enumerate() {
        if p > 0.0 {
            if q <= 0.0 {
                return Err(Error::InfiniteLoss {
                    domain: 0,
                    token: x as u32,
                });
            }
            total -= p * q.ln();
        }
    }
    Ok(total.max(0.0))
}

fn validate_prior(pseudocounts: &[f64]) -> Result<()> {
    for (index, &value) in pseudocounts.iter().enumerate() {
        if !(value >= 0.0 && value.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
    }
    if pseudocounts.iter().fold(0.0, |a, c| a + c) <= 0.0 {
        return Err(Error::InvalidParameter("pseudocounts must have a positive sum".into()));
    }
    Ok(())
}

/// Per-domain unigram models with Dirichlet priors, estimated by posterior
/// mean. Training adds (possibly fractional) weight to observed-token counts.
#[derive(Clone, Debug, PartialEq)]
pub struct DirichletUnigramModel {
    vocab: usize,
    pseudocounts: Vec<Vec<f64>>,
    prior_mass: Vec<f64>,
    counts: Vec<Vec<f64>>,
    observed: Vec<f64>,
    frozen: bool,
}

impl DirichletUnigramModel {
    /// One pseudocount row per domain; all rows must share a length `m >= 1`.
    pub fn new(pseudocounts: Vec<Vec<f64>>) -> Result<Self> {
        let vocab = pseudocounts.first().map_or(0, Vec::len);
        if pseudocounts.is_empty() || vocab == 0 {
            return Err(Error::InvalidParameter("need at least one domain and one token".into()));
        }
        for row in &pseudocounts {
            if row.len() != vocab {
                return Err(Error::DimensionMismatch {
                    expected: vocab,
                    actual: row.len(),
                });
            }
            validate_prior(row)?;
        }
        let k = pseudocounts.len();
        let prior_mass = pseudocounts.iter().map(|r| r.iter().fold(0.0, |a, c| a + c)).collect();
        Ok(DirichletUnigramModel {
            vocab,
            pseudocounts,
            prior_mass,
            counts: vec![vec![0.0; vocab]; k],
            observed: vec![0.0; k],
            frozen: false,
        })
    }

    /// Symmetric prior with total pseudo-count `prior_mass` per domain.
    pub fn symmetric(domains: usize, vocab: usize, prior_mass: f64) -> Result<Self> {
        if vocab == 0 {
            return Err(Error::InvalidParameter("vocabulary must be non-empty".into()));
        }
        Self::new(vec![vec![prior_mass / vocab as f64; vocab]; domains])
    }

    /// Batch fit on `(domain, tokens)` pairs with unit weight per token,
    /// returned frozen.
    pub fn fit_reference<'a, I>(samples: I, pseudocounts: Vec<Vec<f64>>) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, &'a [u32])>,
    {
        let mut model = Self::new(pseudocounts)?;
        let mut seen = false;
        for (domain, tokens) in samples {
            for &token in tokens {
                model.online_update(domain, token, 1.0)?;
            }
            seen = true;
        }
        if !seen {
            return Err(Error::InvalidParameter("reference sample is empty".into()));
        }
        model.frozen = true;
        Ok(model)
    }

    pub fn num_domains(&self) -> usize {
        self.pseudocounts.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(mut self) -> Self {
        self.frozen = true;
        self
    }

    pub fn pseudocounts(&self, domain: usize) -> &[f64] {
        &self.pseudocounts[domain]
    }

    pub fn counts(&self, domain: usize) -> &[f64] {
        &self.counts[domain]
    }

    /// Total weight added to `domain` so far (`n_z`).
    pub fn observed(&self, domain: usize) -> f64 {
        self.observed[domain]
    }

    /// Prior total `s_z`.
    pub fn prior_mass(&self, domain: usize) -> f64 {
        self.prior_mass[domain]
    }

    /// Adds `weight` to the count of `token` in `domain`.
    pub fn online_update(&mut self, domain: usize, token: u32, weight: f64) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenModel);
        }
        self.check_domain(domain)?;
        if token as usize >= self.vocab {
            return Err(Error::TokenOutOfRange {
                token,
                vocab: self.vocab,
            });
        }
        if !(weight >= 0.0 && weight.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "update weight must be finite and nonnegative, got {weight}"
            )));
        }
        self.counts[domain][token as usize] += weight;
        self.observed[domain] += weight;
        Ok(())
    }

    /// Posterior-mean token distribution of `domain`.
    pub fn params(&self, domain: usize) -> Result<Vec<f64>> {
        self.check_domain(domain)?;
        let total = self.observed[domain] + self.prior_mass[domain];
        Ok(self.pseudocounts[domain]
            .iter()
            .zip(&self.counts[domain])
            .map(|(l, c)| (l + c) / total)
            .collect())
    }

    pub fn prob(&self, domain: usize, token: u32) -> f64 {
        let x = token as usize;
        (self.pseudocounts[domain][x] + self.counts[domain][x]) / (self.observed[domain] + self.prior_mass[domain])
    }

    pub fn token_loss(&self, domain: usize, token: u32) -> Result<f64> {
        self.check_domain(domain)?;
        if token as usize >= self.vocab {
            return Err(Error::TokenOutOfRange {
                token,
                vocab: self.vocab,
            });
        }
        let p = self.prob(domain, token);
        if p <= 0.0 {
            return Err(Error::InfiniteLoss { domain, token });
        }
        // -ln p is +0.0 rather than -0.0 when p == 1
        Ok((-p.ln()).max(0.0))
    }

    fn check_domain(&self, domain: usize) -> Result<()> {
        let k = self.num_domains();
        if domain >= k {
            return Err(Error::DomainOutOfRange { index: domain, k });
        }
        Ok(())
    }
}

impl LossModel for DirichletUnigramModel {
    fn per_token_losses(&self, example: &Example) -> Result<Vec<f64>> {
        example
            .attributed()
            .map(|(token, domain)| self.token_loss(domain as usize, token))
            .collect()
    }

    fn is_trainable(&self) -> bool {
        !self.frozen
    }

    fn update(&mut self, example: &Example, domain_weights: &[f64]) -> Result<()> {
        if self.frozen {
            return Err(Error::FrozenModel);
        }
        for (token, domain) in example.attributed() {
            let w = *domain_weights.get(domain as usize).ok_or(Error::DomainOutOfRange {
                index: domain as usize,
                k: domain_weights.len(),
            })?;
            self.online_update(domain as usize, token, w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const THIRD: f64 = 1.0 / 3.0;

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn posterior_mean_examples() {
        let prior = [THIRD; 3];
        assert!(close(&posterior_mean(&[0.0; 3], &prior).unwrap(), &prior, 1e-15));
        let p = posterior_mean(&[3.0, 1.0, 0.0], &prior).unwrap();
        assert!(close(&p, &[(10.0 / 3.0) / 5.0, (4.0 / 3.0) / 5.0, THIRD / 5.0], 1e-15));
        assert!(close(&p, &[0.66667, 0.26667, 0.06667], 5e-6));
        assert!(posterior_mean(&[1.0, 0.0], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn posterior_mean_consistency_limit() {
        let f = [0.5, 0.3, 0.2];
        let n = 1e6;
        let counts: Vec<f64> = f.iter().map(|p| p * n).collect();
        assert!(close(&posterior_mean(&counts, &[THIRD; 3]).unwrap(), &f, 1e-3));
    }

    #[test]
    fn online_update_examples() {
        let mut m = DirichletUnigramModel::symmetric(2, 3, 1.0).unwrap();
        let before = m.clone();
        m.online_update(1, 0, 0.0).unwrap();
        assert_eq!(m, before);

        m.online_update(1, 0, 1.0).unwrap();
        let expected = [(THIRD + 1.0) / 2.0, THIRD / 2.0, THIRD / 2.0];
        assert!(close(&m.params(1).unwrap(), &expected, 1e-15));
        assert!(close(&m.params(0).unwrap(), &[THIRD; 3], 1e-15));

        assert!(matches!(
            m.online_update(2, 0, 1.0),
            Err(Error::DomainOutOfRange { .. })
        ));
        assert!(matches!(m.online_update(0, 3, 1.0), Err(Error::TokenOutOfRange { .. })));
        assert!(m.online_update(0, 0, f64::NAN).is_err());
    }

    #[test]
    fn losses_examples() {
        let m = DirichletUnigramModel::symmetric(1, 3, 1.0).unwrap();
        let ex = Example::single_domain("e", vec![0, 1, 2], 0).unwrap();
        let losses = m.per_token_losses(&ex).unwrap();
        assert!(losses.iter().all(|l| (l - 3f64.ln()).abs() < 1e-15));

        let mut m = DirichletUnigramModel::symmetric(1, 3, 1.0).unwrap();
        for (x, c) in [(0u32, 3usize), (1, 1)] {
            for _ in 0..c {
                m.online_update(0, x, 1.0).unwrap();
            }
        }
        let ex = Example::single_domain("e", vec![0, 1], 0).unwrap();
        let losses = m.per_token_losses(&ex).unwrap();
        assert!(close(&losses, &[0.4055, 1.3218], 5e-5), "{losses:?}");
    }

    #[test]
    fn zero_pseudocount_token_has_infinite_loss() {
        let m = DirichletUnigramModel::new(vec![vec![1.0, 0.0]]).unwrap();
        let ex = Example::single_domain("e", vec![1], 0).unwrap();
        assert!(matches!(m.per_token_losses(&ex), Err(Error::InfiniteLoss { .. })));
    }

    #[test]
    fn cross_entropy_examples() {
        let u = [THIRD; 3];
        assert!((closed_form_cross_entropy(&u, &u).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert_eq!(
            closed_form_cross_entropy(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(),
            0.0
        );
        assert!((closed_form_cross_entropy(&[0.7, 0.2, 0.1], &u).unwrap() - 3f64.ln()).abs() < 1e-15);
        assert!(closed_form_cross_entropy(&[0.5, 0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn frozen_reference_rejects_updates() {
        let tokens = [0u32, 0, 1];
        let mut r = DirichletUnigramModel::fit_reference([(0usize, &tokens[..])], vec![vec![0.5; 2]]).unwrap();
        assert!(r.is_frozen());
        assert!(!r.is_trainable());
        assert!(matches!(r.online_update(0, 0, 1.0), Err(Error::FrozenModel)));
        let ex = Example::single_domain("e", vec![0], 0).unwrap();
        assert!(matches!(r.update(&ex, &[1.0]), Err(Error::FrozenModel)));
    }

    #[test]
    fn reference_with_empty_domain_keeps_prior() {
        let tokens = [0u32, 1];
        let r = DirichletUnigramModel::fit_reference([(0usize, &tokens[..])], vec![vec![THIRD; 3]; 2]).unwrap();
        assert!(close(&r.params(1).unwrap(), &[THIRD; 3], 1e-15));
    }

    #[test]
    fn duplicated_sample_follows_formula() {
        let tokens = [0u32, 0, 1];
        let prior = vec![vec![THIRD; 3]];
        let once = DirichletUnigramModel::fit_reference([(0usize, &tokens[..])], prior.clone()).unwrap();
        let twice = DirichletUnigramModel::fit_reference([(0usize, &tokens[..]), (0, &tokens[..])], prior).unwrap();
        assert!(close(
            &once.params(0).unwrap(),
            &posterior_mean(&[2.0, 1.0, 0.0], &[THIRD; 3]).unwrap(),
            1e-15
        ));
        assert!(close(
            &twice.params(0).unwrap(),
            &posterior_mean(&[4.0, 2.0, 0.0], &[THIRD; 3]).unwrap(),
            1e-15
        ));
        assert_ne!(once.params(0).unwrap(), twice.params(0).unwrap());
    }

    #[test]
    fn packed_example_uses_token_attribution() {
        let mut m = DirichletUnigramModel::symmetric(2, 2, 1.0).unwrap();
        m.online_update(1, 1, 8.0).unwrap();
        let ex = Example::new("p", vec![1, 1], vec![0, 1]).unwrap();
        let losses = m.per_token_losses(&ex).unwrap();
        assert!((losses[0] - 2f64.ln()).abs() < 1e-15);
        assert!((losses[1] + (8.5f64 / 9.0).ln()).abs() < 1e-15);

        m.update(&ex, &[0.25, 0.5]).unwrap();
        assert_eq!(m.counts(0), &[0.0, 0.25]);
        assert_eq!(m.counts(1), &[0.0, 8.5]);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig { cases: 256, failure_persistence: None, ..ProptestConfig::default() })]

        #[test]
        fn batch_fit_matches_online_updates(
            docs in prop::collection::vec((0usize..3, prop::collection::vec(0u32..6, 1..10)), 1..30),
            mass in 0.1f64..5.0,
        ) {
            let prior = vec![vec![mass / 6.0; 6]; 3];
            let batch = DirichletUnigramModel::fit_reference(docs.iter().map(|(d, t)| (*d, t.as_slice())), prior.clone()).unwrap();
            // Same tokens, reversed order.
            let mut online = DirichletUnigramModel::new(prior).unwrap();
            for (d, tokens) in docs.iter().rev() {
                for &t in tokens.iter().rev() {
                    online.online_update(*d, t, 1.0).unwrap();
                }
            }
            for d in 0..3 {
                for (x, y) in batch.params(d).unwrap().iter().zip(&online.params(d).unwrap()) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn posterior_commutes_with_token_permutation(
            pairs in prop::collection::vec((0f64..50.0, 0.01f64..5.0), 1..20),
            perm in Just(()).prop_flat_map(|_| Just((0usize..20).collect::<Vec<_>>()).prop_shuffle()),
        ) {
            let m = pairs.len();
            let perm: Vec<usize> = perm.into_iter().filter(|&i| i < m).collect();
            let counts: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let prior: Vec<f64> = pairs.iter().map(|p| p.1).collect();
            let base = posterior_mean(&counts, &prior).unwrap();
            let permuted = posterior_mean(
                &perm.iter().map(|&i| counts[i]).collect::<Vec<_>>(),
                &perm.iter().map(|&i| prior[i]).collect::<Vec<_>>(),
            )
            .unwrap();
            for (j, &i) in perm.iter().enumerate() {
                prop_assert!((permuted[j] - base[i]).abs() <= 1e-15);
            }
        }
    }
}
