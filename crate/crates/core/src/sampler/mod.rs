//! Gibbs sampler over GP-correlated and deep splitting probabilities with latent data.

pub mod chain;
pub mod config;
pub mod model;
pub mod update;

pub use chain::{
    cdf_eval, density_eval, run_chain, run_chains, ChainDiagnostics, ChainOutput, ChainState, Checkpoint, FitOutput,
    PosteriorDraws, RunOptions,
};
pub use config::{Elicitation, FitConfig, RetainDeep};
pub use model::{FutureCohort, Model};
pub use update::{deep_level_update, pg_node_update};
