//! Active sequential anomaly detection.
//!
//! An agent watches `N` processes through one noisy binary sensor per step,
//! tracks a posterior over all `2^N` abnormal subsets, and learns which sensor
//! to query with an actor-critic policy. A Chernoff-test sensor selector is
//! included as a baseline.
//!
//! The numeric modules are generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below fix them to `f64`, which is what the harness, checkpoints
//! and CLI use.

pub mod agent;
pub mod belief;
pub mod checkpoint;
pub mod chernoff;
pub mod config;
pub mod error;
pub mod harness;
pub mod hypothesis;
pub mod neuralnet;
pub mod report;
pub mod scalar;
pub mod seed;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Belief = belief::BeliefVector<f64>;
pub type Estimates = belief::EstimatedDistributions<f64>;
pub type Net = neuralnet::DenseNet<f64>;
pub type Processes = hypothesis::ProcessSet<f64>;
pub type Thresholds = belief::Thresholds<f64>;
pub type ActorCritic = agent::ActorCritic<f64>;
