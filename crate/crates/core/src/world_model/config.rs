use crate::error::{NewtError, Result};
use serde::{Deserialize, Serialize};

/// Shapes, horizon, and loss coefficients for the world model.
///
/// `default_desk()` is sized for CPU-only experiments on the built-in
/// task suite; `default_paper()` mirrors the reference architecture and
/// coefficients of the full-scale agent.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct WorldModelConfig {
    /// Padded (unified) observation width.
    pub state_dim: usize,
    /// Padded (unified) action width.
    pub action_dim: usize,
    /// Instruction embedding width.
    pub lang_dim: usize,
    /// Optional precomputed image-embedding width.
    pub img_dim: Option<usize>,
    pub latent_dim: usize,
    pub mlp_dim: usize,
    pub encoder_layers: usize,
    /// Total layers in each prediction head (dynamics, reward, Q,
    /// policy), including the output layer.
    pub head_layers: usize,
    pub q_ensemble: usize,
    pub q_subset: usize,
    /// Rollout horizon H used by both objectives.
    pub horizon: usize,
    /// Temporal decay applied per rollout step.
    pub lambda: f64,
    pub coef_self_pred: f64,
    pub coef_reward: f64,
    pub coef_value: f64,
    pub coef_bc: f64,
    pub coef_entropy: f64,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub simplicial_v: usize,
    pub num_bins: usize,
    pub bin_vmin: f64,
    pub bin_vmax: f64,
}

impl WorldModelConfig {
    pub fn default_desk() -> Self {
        WorldModelConfig {
            state_dim: 16,
            action_dim: 4,
            lang_dim: 32,
            img_dim: None,
            latent_dim: 64,
            mlp_dim: 128,
            encoder_layers: 2,
            head_layers: 3,
            q_ensemble: 3,
            q_subset: 2,
            horizon: 3,
            lambda: 0.5,
            coef_self_pred: 20.0,
            coef_reward: 0.1,
            coef_value: 0.1,
            coef_bc: 10.0,
            coef_entropy: 1e-4,
            log_std_min: -10.0,
            log_std_max: 2.0,
            simplicial_v: 8,
            num_bins: 101,
            bin_vmin: -10.0,
            bin_vmax: 10.0,
        }
    }

    pub fn default_paper() -> Self {
        WorldModelConfig {
            state_dim: 128,
            action_dim: 16,
            lang_dim: 512,
            img_dim: None,
            latent_dim: 512,
            mlp_dim: 1024,
            encoder_layers: 3,
            head_layers: 3,
            q_ensemble: 5,
            q_subset: 2,
            horizon: 3,
            lambda: 0.5,
            coef_self_pred: 20.0,
            coef_reward: 0.1,
            coef_value: 0.1,
            coef_bc: 10.0,
            coef_entropy: 1e-4,
            log_std_min: -10.0,
            log_std_max: 2.0,
            simplicial_v: 8,
            num_bins: 101,
            bin_vmin: -10.0,
            bin_vmax: 10.0,
        }
    }

    /// Tiny shapes used by gradient checks.
    pub fn tiny() -> Self {
        WorldModelConfig {
            state_dim: 6,
            action_dim: 2,
            lang_dim: 8,
            img_dim: None,
            latent_dim: 8,
            mlp_dim: 16,
            encoder_layers: 2,
            head_layers: 2,
            q_ensemble: 2,
            q_subset: 2,
            horizon: 2,
            lambda: 0.5,
            coef_self_pred: 20.0,
            coef_reward: 0.1,
            coef_value: 0.1,
            coef_bc: 10.0,
            coef_entropy: 1e-4,
            log_std_min: -10.0,
            log_std_max: 2.0,
            simplicial_v: 4,
            num_bins: 11,
            bin_vmin: -10.0,
            bin_vmax: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.latent_dim % self.simplicial_v != 0 {
            return Err(NewtError::invalid(format!(
                "latent_dim {} not divisible by simplicial_v {}",
                self.latent_dim, self.simplicial_v
            )));
        }
        if self.q_subset == 0 || self.q_subset > self.q_ensemble {
            return Err(NewtError::invalid(format!(
                "q_subset {} out of range 1..={}",
                self.q_subset, self.q_ensemble
            )));
        }
        if !(self.lambda > 0.0 && self.lambda <= 1.0) {
            return Err(NewtError::invalid("lambda must lie in (0, 1]".to_string()));
        }
        if self.horizon == 0 || self.encoder_layers == 0 || self.head_layers < 2 {
            return Err(NewtError::invalid(
                "horizon, encoder_layers must be >= 1 and head_layers >= 2".to_string(),
            ));
        }
        if self.log_std_min >= self.log_std_max {
            return Err(NewtError::invalid("log_std bounds inverted".to_string()));
        }
        Ok(())
    }

    /// Encoder input width: [state, image?, language] concatenated.
    pub fn encoder_input_dim(&self) -> usize {
        self.state_dim + self.img_dim.unwrap_or(0) + self.lang_dim
    }
}
