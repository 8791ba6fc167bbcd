//! Local clustering of users inside a linear contextual bandit.
//!
//! The crate is organised bottom-up:
//!
//! * [`linalg`]: small dense vectors and the identity-initialised ridge
//!   accumulator `A = I + Σ x xᵀ` with an incrementally maintained inverse.
//! * [`estimator`]: per-user ridge state, parameter estimates and the
//!   confidence-radius families used for clustering and arm selection.
//! * [`clustering`]: seed-based neighbourhood refinement with an
//!   interval-overlap test and a supremum-radius stopping rule.
//! * [`policy`]: overlapping-cluster UCB arm selection (LOCB), its
//!   naive-termination variant and the LinUCB baselines.
//! * [`environment`]: synthetic worlds and replay logs that generate rounds
//!   and rewards.
//! * [`evaluation`]: ground-truth derivation, best-match F1 accuracy and
//!   regret accounting.
//! * [`simulation`]: the sequential round loop tying a policy to an
//!   environment.

pub mod clustering;
pub mod environment;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod linalg;
pub mod policy;
pub mod rng;
pub mod simulation;

pub use clustering::{ClusteringConfig, MemberSet, SeedClusterState};
pub use environment::{Environment, ReplayLog, SyntheticParams, SyntheticWorld};
pub use error::{Error, Result};
pub use estimator::{ConfidenceConfig, RadiusMode, UserRidgeState};
pub use evaluation::{Accuracy, GroundTruth, RegretLedger};
pub use linalg::SpdAccumulator;
pub use policy::{AlphaSchedule, LinUcbPolicy, LocbPolicy, Policy, PolicyDecision, PolicyKind};
pub use simulation::{simulate, SimulationOptions, SimulationOutcome};

/// Dense index of a user inside an experiment (`0..n`).
pub type UserId = usize;
