//! Built-in toy multitask suite. Every task exposes the same interface
//! contract: padded observation/action vectors with validity masks,
//! fixed-length auto-resetting episodes, a per-task discount from the
//! shared heuristic, normalized scoring, a deterministic instruction
//! embedding, and a scripted expert for demonstration collection.

mod embed;
mod envs;
mod expert;

pub use embed::{embed_instruction, EmbeddingTable};
pub use expert::scripted_expert;

use crate::error::{NewtError, Result};
use crate::scalar::Real;
use serde::{Deserialize, Serialize};

/// Padded widths shared by every task in a run.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct SuiteConfig {
    pub state_dim: usize,
    pub action_dim: usize,
    pub lang_dim: usize,
    /// Salt mixed into the instruction-embedding hash.
    pub embed_salt: u64,
}

impl SuiteConfig {
    pub fn default_desk() -> Self {
        SuiteConfig {
            state_dim: 16,
            action_dim: 4,
            lang_dim: 32,
            embed_salt: 0,
        }
    }

    pub fn default_paper() -> Self {
        SuiteConfig {
            state_dim: 128,
            action_dim: 16,
            lang_dim: 512,
            embed_salt: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Scoring {
    /// Binary task success at end of episode.
    Success,
    /// Episode return clipped into [lo, hi] and scaled to [0, 1].
    Return { lo: f64, hi: f64 },
}

#[derive(Clone, Debug)]
pub struct TaskSpec {
    pub task_id: u32,
    pub name: String,
    pub instruction: String,
    pub lang_embedding: Vec<Real>,
    pub state_dim_native: usize,
    pub action_dim_native: usize,
    pub episode_len: usize,
    pub gamma: f64,
    pub scoring: Scoring,
    /// Prefix-aligned validity over padded dims.
    pub state_mask: Vec<bool>,
    pub action_mask: Vec<bool>,
}

impl TaskSpec {
    pub fn action_mask_real(&self) -> Vec<Real> {
        self.action_mask
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct StepResult {
    /// Padded next observation of the current episode (masked dims 0).
    pub obs: Vec<Real>,
    pub reward: Real,
    /// True exactly at step T of each episode.
    pub episode_done: bool,
    /// Task success flag, meaningful when episode_done.
    pub success: bool,
    /// Native state snapshot after the step.
    pub info: Vec<f64>,
}

/// One steppable task instance. Instances auto-reset internally when an
/// episode completes: the step after `episode_done` starts fresh.
pub trait Environment: Send {
    fn spec(&self) -> &TaskSpec;
    /// Starts a new seeded episode stream and returns the first padded
    /// observation.
    fn reset(&mut self, seed: u64) -> Vec<Real>;
    /// Current padded observation.
    fn obs(&self) -> Vec<Real>;
    /// Current native state (expert controllers consume this).
    fn native_state(&self) -> Vec<f64>;
    fn step(&mut self, action: &[Real]) -> Result<StepResult>;
}

/// Names of the training tasks, in registry order.
pub const TRAIN_TASKS: [&str; 5] = ["point-reach", "point-maze", "chase", "push-1d", "collector"];

/// Held-out transfer task (unseen goal region and instruction).
pub const TRANSFER_TASKS: [&str; 1] = ["point-reach-far"];

pub fn registry() -> Vec<&'static str> {
    TRAIN_TASKS.to_vec()
}

pub(crate) fn known_task_list() -> String {
    TRAIN_TASKS
        .iter()
        .chain(TRANSFER_TASKS.iter())
        .copied()
        .collect::<Vec<_>>()
        .join(", ")
}

/// Discount heuristic: clip(((T/5) - 1) / (T/5), [0.95, 0.995]).
pub fn discount_for(episode_len: usize) -> f64 {
    let t5 = episode_len as f64 / 5.0;
    ((t5 - 1.0) / t5).clamp(0.95, 0.995)
}

/// Zero-pads a native vector to the padded width.
pub fn pad(native: &[f64], padded_dim: usize) -> Vec<Real> {
    let mut out = vec![0.0; padded_dim];
    for (dst, &v) in out.iter_mut().zip(native) {
        *dst = v as Real;
    }
    out
}

/// Recovers the native prefix of a padded vector.
pub fn unpad(padded: &[Real], native_dim: usize) -> Vec<f64> {
    padded[..native_dim].iter().map(|&v| v as f64).collect()
}

fn prefix_mask(native: usize, padded: usize) -> Vec<bool> {
    (0..padded).map(|i| i < native).collect()
}

/// Normalized score in [0, 1] for a completed episode.
pub fn normalized_score(spec: &TaskSpec, episode_return: f64, success: bool) -> f64 {
    match &spec.scoring {
        Scoring::Success => {
            if success {
                1.0
            } else {
                0.0
            }
        }
        Scoring::Return { lo, hi } => ((episode_return - lo) / (hi - lo)).clamp(0.0, 1.0),
    }
}

pub(crate) struct TaskDef {
    pub name: &'static str,
    pub instruction: &'static str,
    pub state_dim_native: usize,
    pub action_dim_native: usize,
    pub episode_len: usize,
    pub scoring: Scoring,
}

pub(crate) fn task_def(name: &str) -> Result<(u32, TaskDef)> {
    let defs = [
        TaskDef {
            name: "point-reach",
            instruction: "Embodiment: 2D point mass with 2 controllable acceleration axes. \
                          Instruction: Move to the goal position and stay there.",
            state_dim_native: 6,
            action_dim_native: 2,
            episode_len: 100,
            scoring: Scoring::Success,
        },
        TaskDef {
            name: "point-maze",
            instruction: "Embodiment: 2D point mass with 2 controllable acceleration axes. \
                          Instruction: Navigate through the wall gap to reach the goal.",
            state_dim_native: 6,
            action_dim_native: 2,
            episode_len: 200,
            scoring: Scoring::Success,
        },
        TaskDef {
            name: "chase",
            instruction: "Embodiment: 2D point mass with 2 controllable acceleration axes. \
                          Instruction: Chase the target moving along a circle.",
            state_dim_native: 8,
            action_dim_native: 2,
            episode_len: 100,
            scoring: Scoring::Return { lo: 0.0, hi: 80.0 },
        },
        TaskDef {
            name: "push-1d",
            instruction: "Embodiment: 1D pusher with a single velocity actuator. \
                          Instruction: Push the block onto the goal marker.",
            state_dim_native: 3,
            action_dim_native: 1,
            episode_len: 50,
            scoring: Scoring::Success,
        },
        TaskDef {
            name: "collector",
            instruction: "Embodiment: 2D point mass with 2 controllable acceleration axes. \
                          Instruction: Collect coins that respawn at random locations.",
            state_dim_native: 6,
            action_dim_native: 2,
            episode_len: 250,
            scoring: Scoring::Return {
                lo: 0.0,
                hi: envs::collector_return_bound(250),
            },
        },
        TaskDef {
            name: "point-reach-far",
            instruction: "Embodiment: 2D point mass with 2 controllable acceleration axes. \
                          Instruction: Travel to the far marker near the arena boundary and hold \
                          position.",
            state_dim_native: 6,
            action_dim_native: 2,
            episode_len: 100,
            scoring: Scoring::Success,
        },
    ];
    defs.into_iter()
        .enumerate()
        .find(|(_, d)| d.name == name)
        .map(|(i, d)| (i as u32, d))
        .ok_or_else(|| NewtError::UnknownTask {
            name: name.to_string(),
            known: known_task_list(),
        })
}

/// Builds the spec for a task under the given suite widths.
pub fn make_spec(name: &str, suite: &SuiteConfig, embeds: Option<&EmbeddingTable>) -> Result<TaskSpec> {
    let (task_id, def) = task_def(name)?;
    if def.state_dim_native > suite.state_dim || def.action_dim_native > suite.action_dim {
        return Err(NewtError::dim(format!(
            "task '{name}' needs {}x{} native dims, suite pads to {}x{}",
            def.state_dim_native, def.action_dim_native, suite.state_dim, suite.action_dim
        )));
    }
    let lang_embedding = match embeds.and_then(|t| t.get(def.instruction)) {
        Some(v) => {
            if v.len() != suite.lang_dim {
                return Err(NewtError::dim(format!(
                    "embedding override for '{name}' has dim {}, expected {}",
                    v.len(),
                    suite.lang_dim
                )));
            }
            v.to_vec()
        }
        None => embed_instruction(def.instruction, suite.lang_dim, suite.embed_salt),
    };
    Ok(TaskSpec {
        task_id,
        name: def.name.to_string(),
        instruction: def.instruction.to_string(),
        lang_embedding,
        state_dim_native: def.state_dim_native,
        action_dim_native: def.action_dim_native,
        episode_len: def.episode_len,
        gamma: discount_for(def.episode_len),
        scoring: def.scoring,
        state_mask: prefix_mask(def.state_dim_native, suite.state_dim),
        action_mask: prefix_mask(def.action_dim_native, suite.action_dim),
    })
}

/// Instantiates a task environment plus its spec.
pub fn make_task(
    name: &str,
    suite: &SuiteConfig,
    embeds: Option<&EmbeddingTable>,
) -> Result<(Box<dyn Environment>, TaskSpec)> {
    let spec = make_spec(name, suite, embeds)?;
    let env = envs::instantiate(name, spec.clone(), suite)?;
    Ok((env, spec))
}

#[cfg(test)]
mod tests;
