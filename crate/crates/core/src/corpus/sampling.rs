use rand::Rng;
use rand_distr::{Binomial, Distribution};

use super::{Corpus, Example};
use crate::error::{Error, Result};
use crate::simplex::{normalize, DomainWeights};

/// Counts from `multinomial(n, probs)`, drawn as a chain of conditional
/// binomials in domain-index order.
pub fn multinomial<R: Rng + ?Sized>(n: u64, probs: &[f64], rng: &mut R) -> Vec<u64> {
    let mut counts = vec![0; probs.len()];
    // Leftover mass from rounding must never land on a zero-probability entry.
    let Some(last_positive) = probs.iter().rposition(|&p| p > 0.0) else {
        return counts;
    };
    let mut remaining_n = n;
    let mut remaining_p = probs.iter().fold(0.0, |acc, p| acc + p);
    for (i, &p) in probs.iter().enumerate() {
        if remaining_n == 0 {
            break;
        }
        if p <= 0.0 {
            continue;
        }
        if i == last_positive || remaining_p <= p {
            counts[i] = remaining_n;
            break;
        }
        let q = (p / remaining_p).clamp(0.0, 1.0);
        let draw = Binomial::new(remaining_n, q)
            .expect("probability clamped to [0, 1]")
            .sample(rng);
        counts[i] = draw;
        remaining_n -= draw;
        remaining_p -= p;
    }
    counts
}

/// Draws `n` examples from the mixture `sum_i alpha_i * unif(D_i)`: domain
/// counts come from one multinomial, then each domain is sampled uniformly
/// with replacement. The result is grouped by domain in index order.
pub fn hierarchical_sample<'c, R: Rng + ?Sized>(
    corpus: &'c Corpus,
    alpha: &DomainWeights,
    n: usize,
    rng: &mut R,
) -> Result<Vec<&'c Example>> {
    Ok(hierarchical_sample_indices(corpus, alpha, n, rng)?
        .into_iter()
        .map(|(d, i)| &corpus.examples(d)[i])
        .collect())
}

/// `(domain, index within domain)` pairs behind [`hierarchical_sample`].
pub(crate) fn hierarchical_sample_indices<R: Rng + ?Sized>(
    corpus: &Corpus,
    alpha: &DomainWeights,
    n: usize,
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    if alpha.domains() != corpus.domains() {
        return Err(Error::InvalidDomains(
            "mixture weights and corpus name different domains".into(),
        ));
    }
    for (d, &w) in alpha.values().iter().enumerate() {
        if w > 0.0 && corpus.examples(d).is_empty() {
            return Err(Error::EmptyDomain(corpus.domains()[d].to_string()));
        }
    }
    let counts = multinomial(n as u64, alpha.values(), rng);
    let mut out = Vec::with_capacity(n);
    for (d, &count) in counts.iter().enumerate() {
        let len = corpus.examples(d).len();
        for _ in 0..count {
            out.push((d, rng.random_range(0..len)));
        }
    }
    Ok(out)
}

#[derive(Clone, Debug)]
pub struct BaselineWeights {
    pub weights: DomainWeights,
    pub warnings: Vec<String>,
}

/// `normalize(count_i * epochs_i)` where `count_i` is the number of examples
/// in domain `i`.
pub fn baseline_weights_from_counts(corpus: &Corpus, epochs: &[f64]) -> Result<BaselineWeights> {
    let k = corpus.num_domains();
    if epochs.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k,
            actual: epochs.len(),
        });
    }
    if let Some(&bad) = epochs.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
        return Err(Error::InvalidParameter(format!("epochs must be positive, got {bad}")));
    }
    if corpus.total_examples() == 0 {
        return Err(Error::InvalidParameter("corpus has no examples".into()));
    }
    let mut warnings = Vec::new();
    let raw: Vec<f64> = corpus
        .counts()
        .iter()
        .zip(epochs)
        .enumerate()
        .map(|(d, (&count, &ep))| {
            if count == 0 {
                let msg = format!("domain `{}` has no examples; weight 0", &corpus.domains()[d]);
                log::warn!("{msg}");
                warnings.push(msg);
            }
            count as f64 * ep
        })
        .collect();
    Ok(BaselineWeights {
        weights: normalize(corpus.domains(), &raw)?,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedTree;
    use crate::simplex::DomainSet;

    fn corpus(sizes: &[usize]) -> Corpus {
        let domains = DomainSet::numbered(sizes.len()).unwrap();
        let stores = sizes
            .iter()
            .enumerate()
            .map(|(d, &n)| {
                (0..n)
                    .map(|i| Example::single_domain(format!("{d}:{i}"), vec![i as u32], d as u32).unwrap())
                    .collect()
            })
            .collect();
        Corpus::new(domains, stores, "test", 1000, 8).unwrap()
    }

    #[test]
    fn baseline_examples() {
        let c = corpus(&[100, 100]);
        let w = baseline_weights_from_counts(&c, &[1.0, 1.0]).unwrap();
        assert_eq!(w.weights.values(), &[0.5, 0.5]);
        let w = baseline_weights_from_counts(&c, &[2.0, 1.0]).unwrap();
        assert!((w.weights[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((w.weights[1] - 1.0 / 3.0).abs() < 1e-15);

        let c = corpus(&[10, 0]);
        let w = baseline_weights_from_counts(&c, &[1.0, 1.0]).unwrap();
        assert_eq!(w.weights.values(), &[1.0, 0.0]);
        assert_eq!(w.warnings.len(), 1);

        assert!(baseline_weights_from_counts(&corpus(&[0, 0]), &[1.0, 1.0]).is_err());
        assert!(baseline_weights_from_counts(&c, &[0.0, 1.0]).is_err());
    }

    #[test]
    fn one_hot_draws_single_domain() {
        let c = corpus(&[3, 5]);
        let alpha = DomainWeights::one_hot(c.domains().clone(), 1).unwrap();
        let mut rng = SeedTree::new(1).rng(&["t"]);
        let s = hierarchical_sample(&c, &alpha, 100, &mut rng).unwrap();
        assert_eq!(s.len(), 100);
        assert!(s.iter().all(|e| e.primary_domain() == 1));
        assert!(hierarchical_sample(&c, &alpha, 0, &mut rng).unwrap().is_empty());
    }

    #[test]
    fn positive_weight_on_empty_domain_fails() {
        let c = corpus(&[3, 0]);
        let mut rng = SeedTree::new(1).rng(&["t"]);
        let uniform = DomainWeights::uniform(c.domains().clone());
        assert!(matches!(
            hierarchical_sample(&c, &uniform, 5, &mut rng),
            Err(Error::EmptyDomain(_))
        ));
        let one_hot = DomainWeights::one_hot(c.domains().clone(), 0).unwrap();
        assert!(hierarchical_sample(&c, &one_hot, 5, &mut rng).is_ok());
    }

    #[test]
    fn balanced_counts_within_four_sigma() {
        let c = corpus(&[7, 9]);
        let alpha = DomainWeights::uniform(c.domains().clone());
        let mut rng = SeedTree::new(3).rng(&["t"]);
        let n = 10_000;
        let s = hierarchical_sample(&c, &alpha, n, &mut rng).unwrap();
        let first = s.iter().filter(|e| e.primary_domain() == 0).count() as f64;
        let sigma = (n as f64 * 0.25).sqrt();
        assert!((first - 5000.0).abs() <= 4.0 * sigma, "{first}");
    }

    #[test]
    fn multinomial_conserves_total() {
        let mut rng = SeedTree::new(9).rng(&["m"]);
        for n in [0, 1, 17, 1000] {
            let counts = multinomial(n, &[0.1, 0.0, 0.6, 0.3], &mut rng);
            assert_eq!(counts.iter().sum::<u64>(), n);
            assert_eq!(counts[1], 0);
        }
    }
}
