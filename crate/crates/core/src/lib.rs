//! Hierarchical proximal policy optimization for temporal hierarchies.
//!
//! A manager picks one of `n` latent skills every `p` steps (with `p` drawn
//! at random between two bounds), and a latent-conditioned sub-policy acts
//! in the environment. The crate provides:
//!
//! * [`diffcore`]: parameter vectors, MLPs, log-densities, gradients and
//!   finite-difference checks, plus the binary checkpoint container.
//! * [`envs`]: seeded toy Gather and Blocks environments with dynamics
//!   perturbations.
//! * [`hierpolicy`]: the two-level policy and scripted diverse skills.
//! * [`rollout`]: randomized time-commitment rollouts and batch collection.
//! * [`grads`]: exact marginal gradient oracle, approximate hierarchical
//!   gradient, baselines, advantages and clipped surrogates.
//! * [`trainer`]: the training loop and its variants.
//! * [`evalkit`]: diversity diagnostics, zero-shot transfer, estimator
//!   variance and sensitivity sweeps.

pub mod diffcore;
pub mod envs;
pub mod error;
pub mod evalkit;
pub mod grads;
pub mod hierpolicy;
pub mod rollout;
pub mod seeding;
pub mod trainer;

pub use error::{Error, Result};
