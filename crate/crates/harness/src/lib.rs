//! Experiment orchestration for policy selection under an episode budget: TOML
//! configs, the GP|Ind × UCB|Uniform × OPE|NoOPE method grid, seeded
//! repetitions run in parallel, and CSV/JSON result files.

pub mod config;
pub mod experiment;
pub mod method;
pub mod report;

pub use config::{ExperimentConfig, TaskSource};
pub use experiment::{
    default_workers, run_experiment, run_ope_only, vary_k_experiment, vary_ope_experiment, ExperimentResult, Manifest,
    MethodResult, RepMetrics,
};
pub use method::{Method, Strategy};
