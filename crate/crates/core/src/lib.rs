//! newt-core: a self-contained multitask model-based RL engine.
//!
//! The crate bundles everything needed to train and evaluate a latent
//! world model with sampling-based planning on a built-in suite of toy
//! continuous-control tasks: a small hand-rolled neural network stack
//! with exact backward passes, discrete log-space value regression,
//! an MPPI-style planner with policy-prior warm starts, dual replay
//! buffers with demonstration oversampling, and the training loops that
//! tie them together (demo collection, pretraining, online RL, behavior
//! cloning, closed- and open-loop evaluation, finetuning).

pub mod checkpoint;
pub mod config;
pub mod demo_file;
pub mod discretizer;
pub mod error;
pub mod gradcheck;
pub mod matrix;
pub mod metrics;
pub mod nn;
pub mod planner;
pub mod replay;
pub mod rng;
pub mod scalar;
pub mod tasks;
pub mod trainer;
pub mod world_model;

pub use error::{NewtError, Result};
pub use matrix::Matrix;
pub use rng::Rng;
pub use scalar::{Real, Scalar};
