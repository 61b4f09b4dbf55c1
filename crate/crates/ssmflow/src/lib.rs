//! Mini-batch variational inference for state space models with local
//! inverse autoregressive flows.
//!
//! The library fits a joint variational approximation `q(θ) q(x | θ)` to the
//! posterior of a continuous-state state space model: a masked inverse
//! autoregressive flow over the parameters θ and a *local* inverse
//! autoregressive flow over the latent path x. Because the local flow has a
//! finite receptive field, a short subsequence of x can be sampled at cost
//! independent of the series length, so each training iteration touches only
//! one mini-batch of the time series.
//!
//! Modules:
//!
//! - [`diffcore`] — tensors, the reverse-mode tape, checkpoints.
//! - [`flows`] — the masked flow for θ and the local flow for x.
//! - [`models`] — AR(1), Lotka-Volterra and FitzHugh-Nagumo state space
//!   models with simulators.
//! - [`inference`] — the mini-batch ELBO estimator, AdaMax training loop,
//!   pre-training objectives and side-information assembly.
//! - [`baselines`] — exact forward-filter likelihood for AR(1) and a
//!   random-walk Metropolis-Hastings sampler.
//! - [`eval`] — maximum mean discrepancy, posterior summaries, sample
//!   archives.
//! - [`config`] / [`experiment`] — run configuration and the end-to-end
//!   experiment pipeline behind the CLI.

pub mod baselines;
pub mod config;
pub mod diffcore;
pub mod models;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod flows;
pub mod inference;
pub mod rngstream;

pub use error::{Error, Result};
