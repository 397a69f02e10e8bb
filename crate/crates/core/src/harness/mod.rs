//! Experiment harness: the exact Markov oracle, human-effort accounting and
//! the end-to-end experiment with its JSON, text and SVG outputs.

pub mod effort;
pub mod experiment;
pub mod markov;
pub mod svg;

pub use effort::{effort_accounting, effort_from_counts, CostConfig, EffortReport};
pub use experiment::{render_text, run_experiment, ExperimentConfig, MetricsReport};
pub use markov::{
    chain_params_for, chain_scenario, markov_success, ChainParams, ChainSetup, SubtaskChain,
};
pub use svg::render_svg;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("degenerate configuration: {0}")]
    DegenerateConfig(String),
    #[error("schema: {0}")]
    Schema(String),
    #[error(transparent)]
    Sim(#[from] crate::simenv::SimError),
    #[error(transparent)]
    Pool(#[from] crate::policypool::PoolError),
}
