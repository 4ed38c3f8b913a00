//! Bayesian Markov-switching multiple-equation tensor regression.
//!
//! Coefficient tensors use a soft-PARAFAC structure with a global/local
//! shrinkage prior. Posterior inference runs a collapsed Gibbs sampler with
//! random partial scans and forward-filtering backward-sampling of the
//! latent regime path.

pub mod baselines;
pub mod diagnostics;
pub mod distributions;
pub mod error;
pub mod io;
pub mod model;
pub mod prior;
pub mod quadrature;
pub mod sampler;
pub mod simulation;
pub mod tensor;

pub use error::{Error, Result};
pub use model::{Dataset, MarkovChain, ModelState, StateParams};
pub use prior::Hyperparameters;
pub use sampler::{run_chain, run_chains, select_start, ChainConfig, IdentRule, PosteriorDraws, Sampler};
pub use simulation::{SimSetting, Truth};
pub use tensor::{hadamard_compose, inner_product, FactorSet, Marginals, Tensor};
