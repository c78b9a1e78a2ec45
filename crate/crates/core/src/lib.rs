//! Policy selection from OPE scores and a small budget of online episodes.
//!
//! Candidate policies are compared through their actions on a fixed set of
//! probe states; a Gaussian process over policy values, warm-started with
//! off-policy evaluation (OPE) scores, decides which policy to run next in
//! the environment and which one to recommend.

pub mod adam;
pub mod error;
pub mod gp;
pub mod ind;
pub mod kernel;
mod linalg;
pub mod metrics;
pub mod observations;
pub mod rng;
pub mod selection;
pub mod simenv;

pub use adam::AdamConfig;
pub use error::{Error, Result};
pub use gp::{GPHyperparams, GPPriors, IGPrior, Posterior};
pub use kernel::{ActionFingerprint, ActionKind, DistanceMatrix, KernelParams};
pub use linalg::cholesky_with_jitter;
pub use observations::ObservationLog;
pub use selection::{run_selection, AcquisitionStrategy, LoopConfig, ModelKind, ReturnSampler, Trace};
pub use simenv::{make_synthetic_task, SyntheticTask, SyntheticTaskConfig};
