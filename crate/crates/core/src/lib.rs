//! Domain-weight optimization for multi-domain text mixtures.
//!
//! The crate is organised around the reweighting loop in [`dro`]: a proxy model
//! is trained on uniformly mixed minibatches while the domain weights follow an
//! exponentiated-gradient ascent on clipped per-domain excess loss against a
//! frozen reference model. The averaged weights are then used to resample the
//! corpus ([`corpus`]). [`driver`] repeats the procedure until the weights stop
//! moving. [`toy`] holds the closed-form Dirichlet-unigram instance that makes
//! the whole loop checkable without training a neural model.

pub mod corpus;
pub mod driver;
pub mod dro;
pub mod error;
pub mod loss;
pub mod report;
pub mod rng;
pub mod simplex;
pub mod toy;
pub mod weights_io;

pub use error::{Error, Result};
pub use simplex::{DomainSet, DomainWeights, WeightTrajectory};
