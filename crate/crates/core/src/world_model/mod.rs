//! Latent world model: encoder, dynamics, reward head, Q ensemble with an
//! EMA target copy, and a stochastic tanh-Gaussian policy prior, together
//! with the model and policy objectives used for both pretraining on
//! demonstrations and online RL.

mod batch;
mod config;
mod losses;
mod model;
mod policy;

pub use batch::SegmentBatch;
pub use config::WorldModelConfig;
pub use losses::{percentile, ModelLossOutput, ModelTargets, PolicyLossOutput, RunningScale};
pub use model::WorldModel;
pub use policy::PolicyOutput;

#[cfg(test)]
mod tests;
