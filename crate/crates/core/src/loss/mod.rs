//! Per-token loss providers for the proxy and reference roles.
//!
//! Losses are negative log-likelihoods in nats. Examples never carry padding,
//! so every token position yields exactly one loss.

mod replay;
mod unigram;

pub use replay::{RecordRole, ReplayRecord, ReplayRole, ReplayStore, ReplayedLossModel};
pub use unigram::{closed_form_cross_entropy, posterior_mean, DirichletUnigramModel};

use crate::corpus::Example;
use crate::error::{Error, Result};

pub trait LossModel: Send + Sync {
    /// One nonnegative, finite loss per token of `example`.
    fn per_token_losses(&self, example: &Example) -> Result<Vec<f64>>;

    /// Whether [`update`](Self::update) is supported.
    fn is_trainable(&self) -> bool {
        false
    }

    /// Weighted training update on one example. `domain_weights[d]` scales the
    /// contribution of every token attributed to domain `d`.
    fn update(&mut self, _example: &Example, _domain_weights: &[f64]) -> Result<()> {
        Err(Error::NotTrainable)
    }

    /// Called by the reweighting loop before step `step` (1-based) evaluates
    /// any losses.
    fn begin_step(&mut self, _step: usize) {}
}

pub(crate) fn check_losses(example: &Example, losses: &[f64]) -> Result<()> {
    if losses.len() != example.len() {
        return Err(Error::LossLengthMismatch {
            example_id: example.id().to_string(),
            expected: example.len(),
            actual: losses.len(),
        });
    }
    for (index, &value) in losses.iter().enumerate() {
        if !value.is_finite() || value < 0.0 {
            return Err(Error::NonFinite { index, value });
        }
    }
    Ok(())
}
