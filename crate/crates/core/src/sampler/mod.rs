//! Gibbs sampler for the two-arm common-atoms mixture with a cluster-specific response model,
//! under a degree-k weak-limit approximation.

mod chain;
mod config;
mod gibbs;
mod hmc;
mod state;

use thiserror::Error;

pub use chain::{
    geweke_z, long_run_variance, read_draws, run_chain, run_chain_with_rng, write_draws, ChainDiagnostics, DrawFileHeader,
    GewekeScore, HmcSummary, PosteriorChain,
};
pub use config::{ChainConfig, HmcConfig, ResponseHyper};
pub use gibbs::{alpha_log_post, hyper_log_post, Sampler, SweepCounters};
pub use hmc::{DualAveraging, Hmc, HmcStats};
pub use state::GibbsState;

#[derive(Debug, Error)]
pub enum SamplerError {
    #[error("invalid chain configuration: {0}")]
    Config(String),
    #[error("invalid study data: {0}")]
    Data(String),
    #[error("state invariant violated: {0}")]
    Invariant(String),
    #[error("draw file: {0}")]
    Format(String),
}
