//! Latent factor models for rating prediction.
//!
//! The crate covers a complete experimental pipeline:
//!
//! * [`dataset`]: parsing rating logs into a dense-indexed [`dataset::RatingsDataset`]
//!   with summary statistics.
//! * [`split`]: chronological leave-latest-out train/test splitting and seeded
//!   validation sampling.
//! * [`baselines`]: MAP-trained matrix factorization (plain SGD, biased SGD, and
//!   full-batch gradient descent with momentum).
//! * [`vi`]: mean-field variational inference for the Bayesian counterpart, with a
//!   fully factorized Gaussian posterior, analytic ELBO, and analytic gradients.
//! * [`eval`]: RMSE evaluation, overfit gaps, posterior parameter traces, and
//!   configuration sweeps.
//! * [`checkpoint`]: JSON persistence for trained models and posteriors.
//!
//! Every stochastic step draws from a `ChaCha8Rng` seeded through [`seeding`], so a
//! fixed master seed makes the whole pipeline reproducible byte for byte.

pub mod baselines;
pub mod checkpoint;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod seeding;
pub mod split;
pub mod vi;

pub use error::{Error, Result};
