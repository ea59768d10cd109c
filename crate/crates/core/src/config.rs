//! Run configuration: a flat `key=value` text format with dotted section
//! prefixes. The `profile` key picks the baseline (`desk` or `paper`);
//! every other key overrides one field of that baseline. The full key
//! table lives in the README.

use crate::error::{NewtError, Result};
use crate::planner::{BiasSchedule, PlannerConfig};
use crate::tasks::SuiteConfig;
use crate::world_model::WorldModelConfig;
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct TrainConfig {
    pub profile: String,
    pub seed: u64,
    pub tasks: Vec<String>,
    pub total_env_steps: u64,
    pub utd: f64,
    pub batch: usize,
    pub pretrain_iters: u64,
    pub bc_iters: u64,
    pub bias: BiasSchedule,
    pub eval_every: u64,
    pub eval_episodes: usize,
    pub lr: f64,
    pub encoder_lr: f64,
    pub clip_norm: f64,
    pub q_momentum: f64,
    pub demos_per_task: usize,
    pub replay_capacity: usize,
    pub suite: SuiteConfig,
    pub model: WorldModelConfig,
    pub planner: PlannerConfig,
}

impl TrainConfig {
    pub fn default_desk() -> Self {
        TrainConfig {
            profile: "desk".to_string(),
            seed: 1,
            tasks: crate::tasks::registry().iter().map(|s| s.to_string()).collect(),
            total_env_steps: 100_000,
            utd: 0.075,
            batch: 256,
            pretrain_iters: 5_000,
            bc_iters: 5_000,
            bias: BiasSchedule {
                anneal_start: 2_000,
                anneal_end: 12_000,
            },
            eval_every: 25_000,
            eval_episodes: 20,
            lr: 3e-4,
            encoder_lr: 1e-4,
            clip_norm: 20.0,
            q_momentum: 0.99,
            demos_per_task: 20,
            replay_capacity: 500_000,
            suite: SuiteConfig::default_desk(),
            model: WorldModelConfig::default_desk(),
            planner: PlannerConfig::default_desk(),
        }
    }

    pub fn default_paper() -> Self {
        TrainConfig {
            profile: "paper".to_string(),
            seed: 1,
            tasks: crate::tasks::registry().iter().map(|s| s.to_string()).collect(),
            total_env_steps: 100_000_000,
            utd: 0.075,
            batch: 1024,
            pretrain_iters: 200_000,
            bc_iters: 200_000,
            bias: BiasSchedule {
                anneal_start: 2_000_000,
                anneal_end: 12_000_000,
            },
            eval_every: 1_000_000,
            eval_episodes: 20,
            lr: 3e-4,
            encoder_lr: 1e-4,
            clip_norm: 20.0,
            q_momentum: 0.99,
            demos_per_task: 20,
            replay_capacity: 10_000_000,
            suite: SuiteConfig::default_paper(),
            model: WorldModelConfig::default_paper(),
            planner: PlannerConfig::default(),
        }
    }

    pub fn for_profile(profile: &str) -> Result<Self> {
        match profile {
            "desk" => Ok(TrainConfig::default_desk()),
            "paper" => Ok(TrainConfig::default_paper()),
            other => Err(NewtError::invalid(format!(
                "unknown profile '{other}' (expected desk or paper)"
            ))),
        }
    }

    /// Parses the key=value text format. `profile=` (anywhere in the
    /// file) selects the defaults; other keys apply in file order.
    pub fn from_kv_text(text: &str) -> Result<Self> {
        let mut profile = "desk".to_string();
        for (key, value) in kv_lines(text)? {
            if key == "profile" {
                profile = value.to_string();
            }
        }
        let mut cfg = TrainConfig::for_profile(&profile)?;
        for (key, value) in kv_lines(text)? {
            cfg.apply_kv(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        TrainConfig::from_kv_text(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(NewtError::invalid("tasks must be nonempty".to_string()));
        }
        if !(self.utd > 0.0) {
            return Err(NewtError::invalid("utd must be > 0".to_string()));
        }
        if self.batch == 0 {
            return Err(NewtError::invalid("batch must be >= 1".to_string()));
        }
        self.bias.validate()?;
        self.model.validate()?;
        self.planner.validate()?;
        if self.model.state_dim != self.suite.state_dim
            || self.model.action_dim != self.suite.action_dim
            || self.model.lang_dim != self.suite.lang_dim
        {
            return Err(NewtError::invalid(
                "model dims must match suite padded dims".to_string(),
            ));
        }
        Ok(())
    }

    fn apply_kv(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| NewtError::invalid(format!("bad value '{v}' for '{key}'")))
        }
        match key {
            "profile" => {} // handled in the first pass
            "seed" => self.seed = num(key, value)?,
            "tasks" => {
                self.tasks = value.split(',').map(|s| s.trim().to_string()).collect();
            }
            "total_env_steps" => self.total_env_steps = num(key, value)?,
            "utd" => self.utd = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "pretrain_iters" => self.pretrain_iters = num(key, value)?,
            "bc_iters" => self.bc_iters = num(key, value)?,
            "bias.start" => self.bias.anneal_start = num(key, value)?,
            "bias.end" => self.bias.anneal_end = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "eval_episodes" => self.eval_episodes = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "encoder_lr" => self.encoder_lr = num(key, value)?,
            "clip_norm" => self.clip_norm = num(key, value)?,
            "q_momentum" => self.q_momentum = num(key, value)?,
            "demos_per_task" => self.demos_per_task = num(key, value)?,
            "replay.capacity" => self.replay_capacity = num(key, value)?,
            "suite.state_dim" => {
                self.suite.state_dim = num(key, value)?;
                self.model.state_dim = self.suite.state_dim;
            }
            "suite.action_dim" => {
                self.suite.action_dim = num(key, value)?;
                self.model.action_dim = self.suite.action_dim;
            }
            "suite.lang_dim" => {
                self.suite.lang_dim = num(key, value)?;
                self.model.lang_dim = self.suite.lang_dim;
            }
            "suite.embed_salt" => self.suite.embed_salt = num(key, value)?,
            "model.latent_dim" => self.model.latent_dim = num(key, value)?,
            "model.mlp_dim" => self.model.mlp_dim = num(key, value)?,
            "model.encoder_layers" => self.model.encoder_layers = num(key, value)?,
            "model.head_layers" => self.model.head_layers = num(key, value)?,
            "model.q_ensemble" => self.model.q_ensemble = num(key, value)?,
            "model.q_subset" => self.model.q_subset = num(key, value)?,
            "model.horizon" => self.model.horizon = num(key, value)?,
            "model.lambda" => self.model.lambda = num(key, value)?,
            "model.coef_self_pred" => self.model.coef_self_pred = num(key, value)?,
            "model.coef_reward" => self.model.coef_reward = num(key, value)?,
            "model.coef_value" => self.model.coef_value = num(key, value)?,
            "model.coef_bc" => self.model.coef_bc = num(key, value)?,
            "model.coef_entropy" => self.model.coef_entropy = num(key, value)?,
            "model.log_std_min" => self.model.log_std_min = num(key, value)?,
            "model.log_std_max" => self.model.log_std_max = num(key, value)?,
            "model.simplicial_v" => self.model.simplicial_v = num(key, value)?,
            "model.num_bins" => self.model.num_bins = num(key, value)?,
            "model.bin_vmin" => self.model.bin_vmin = num(key, value)?,
            "model.bin_vmax" => self.model.bin_vmax = num(key, value)?,
            "model.img_dim" => {
                self.model.img_dim = if value == "none" {
                    None
                } else {
                    Some(num(key, value)?)
                };
            }
            "planner.horizon" => self.planner.horizon = num(key, value)?,
            "planner.iterations" => self.planner.iterations = num(key, value)?,
            "planner.population" => self.planner.population = num(key, value)?,
            "planner.prior_samples" => self.planner.prior_samples = num(key, value)?,
            "planner.elites" => self.planner.elites = num(key, value)?,
            "planner.std_min" => self.planner.std_min = num(key, value)?,
            "planner.std_max" => self.planner.std_max = num(key, value)?,
            "planner.temperature" => self.planner.temperature = num(key, value)?,
            "planner.momentum" => {
                self.planner.momentum = match value {
                    "true" | "yes" | "1" => true,
                    "false" | "no" | "0" => false,
                    _ => return Err(NewtError::invalid(format!("bad bool '{value}' for '{key}'"))),
                };
            }
            other => {
                return Err(NewtError::invalid(format!("unknown config key '{other}'")));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("config serializes")
    }

    pub fn from_json(json: &str) -> Result<Self> {
        serde_json::from_str(json).map_err(|e| NewtError::Format(format!("config JSON: {e}")))
    }
}

fn kv_lines(text: &str) -> Result<Vec<(&str, &str)>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            NewtError::Format(format!("config line {}: expected key=value", i + 1))
        })?;
        out.push((key.trim(), value.trim()));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn desk_defaults_are_valid() {
        TrainConfig::default_desk().validate().unwrap();
        TrainConfig::default_paper().validate().unwrap();
    }

    #[test]
    fn paper_profile_matches_reference_hyperparameters() {
        let cfg = TrainConfig::default_paper();
        assert_eq!(cfg.batch, 1024);
        assert!((cfg.utd - 0.075).abs() < 1e-12);
        assert_eq!(cfg.planner.population, 512);
        assert_eq!(cfg.planner.prior_samples, 24);
        assert_eq!(cfg.planner.elites, 64);
        assert!((cfg.planner.temperature - 0.5).abs() < 1e-12);
        assert!(!cfg.planner.momentum);
        assert_eq!(cfg.model.num_bins, 101);
        assert_eq!(cfg.model.q_ensemble, 5);
        assert_eq!(cfg.model.simplicial_v, 8);
        assert!((cfg.model.coef_self_pred - 20.0).abs() < 1e-12);
        assert!((cfg.model.coef_reward - 0.1).abs() < 1e-12);
        assert!((cfg.model.coef_value - 0.1).abs() < 1e-12);
        assert!((cfg.model.coef_bc - 10.0).abs() < 1e-12);
        assert!((cfg.model.coef_entropy - 1e-4).abs() < 1e-12);
        assert!((cfg.model.lambda - 0.5).abs() < 1e-12);
        assert!((cfg.q_momentum - 0.99).abs() < 1e-12);
        assert!((cfg.lr - 3e-4).abs() < 1e-12);
        assert!((cfg.encoder_lr - 1e-4).abs() < 1e-12);
        assert!((cfg.clip_norm - 20.0).abs() < 1e-12);
        assert_eq!(cfg.model.log_std_min, -10.0);
        assert_eq!(cfg.model.log_std_max, 2.0);
        assert_eq!(cfg.replay_capacity, 10_000_000);
        assert_eq!(cfg.bias.anneal_start, 2_000_000);
        assert_eq!(cfg.bias.anneal_end, 12_000_000);
        assert_eq!(cfg.model.lang_dim, 512);
        assert_eq!(cfg.model.state_dim, 128);
        assert_eq!(cfg.model.action_dim, 16);
    }

    #[test]
    fn kv_text_overrides_apply() {
        let text = "\n# comment\nprofile=desk\nseed=9\ntasks=point-reach,chase\n\
                    model.latent_dim=32\nplanner.population=16\nbias.start=100\nbias.end=200\n";
        let cfg = TrainConfig::from_kv_text(text).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.tasks, vec!["point-reach", "chase"]);
        assert_eq!(cfg.model.latent_dim, 32);
        assert_eq!(cfg.planner.population, 16);
        assert_eq!(cfg.bias.anneal_start, 100);
    }

    #[test]
    fn unknown_key_is_an_error() {
        assert!(TrainConfig::from_kv_text("bogus_key=1").is_err());
    }

    #[test]
    fn json_snapshot_roundtrip() {
        let cfg = TrainConfig::default_desk();
        let json = cfg.to_json();
        let back = TrainConfig::from_json(&json).unwrap();
        assert_eq!(back, cfg);
    }
}
