//! Deterministic scripted controllers, one per task. Pure functions of
//! the native state; used only to collect demonstrations.

use crate::error::{NewtError, Result};
use crate::scalar::Real;
use crate::tasks::envs::{DT, MAZE_GAP_HALF, PUSH_BLOCK_HALF};

fn clamp(v: f64) -> Real {
    v.clamp(-1.0, 1.0) as Real
}

/// PD pursuit with velocity feedforward for a moving target.
fn pd(pos: [f64; 2], vel: [f64; 2], target: [f64; 2], target_vel: [f64; 2]) -> Vec<Real> {
    const KP: f64 = 6.0;
    const KD: f64 = 4.0;
    (0..2)
        .map(|i| clamp(KP * (target[i] - pos[i]) - KD * (vel[i] - target_vel[i])))
        .collect()
}

/// Native-dimension expert action for `task` at `native` state.
pub fn scripted_expert(task: &str, native: &[f64]) -> Result<Vec<Real>> {
    match task {
        "point-reach" | "point-reach-far" | "collector" => {
            let (pos, vel, goal) = split_point(native)?;
            Ok(pd(pos, vel, goal, [0.0, 0.0]))
        }
        "point-maze" => {
            let (pos, vel, goal) = split_point(native)?;
            let target = if pos[0] >= 0.12 {
                goal
            } else if pos[1].abs() <= MAZE_GAP_HALF - 0.12 {
                [0.25, 0.0]
            } else {
                [-0.25, 0.0]
            };
            Ok(pd(pos, vel, target, [0.0, 0.0]))
        }
        "chase" => {
            if native.len() < 8 {
                return Err(NewtError::dim("chase expert needs 8 state dims".to_string()));
            }
            let pos = [native[0], native[1]];
            let vel = [native[2], native[3]];
            let goal = [native[4], native[5]];
            let gv = [native[6], native[7]];
            // aim ahead of the target by a few steps
            let lead = 4.0;
            let target = [goal[0] + lead * gv[0], goal[1] + lead * gv[1]];
            let target_vel = [gv[0] / DT, gv[1] / DT];
            Ok(pd(pos, vel, target, target_vel))
        }
        "push-1d" => {
            if native.len() < 3 {
                return Err(NewtError::dim("push expert needs 3 state dims".to_string()));
            }
            let (agent, block, goal) = (native[0], native[1], native[2]);
            let face = block - PUSH_BLOCK_HALF;
            let a = if (block - goal).abs() < 0.02 {
                // placed; back off and idle so the final state keeps the
                // block untouched
                if agent > face - 0.1 {
                    -0.5
                } else {
                    0.0
                }
            } else if agent < face - 1e-9 {
                // approach the contact face exactly, never overshooting
                ((face - agent) / DT).min(1.0)
            } else {
                // in contact: the block tracks the agent face, so this
                // velocity places it on the goal without overshoot
                ((goal - block) / DT).clamp(-1.0, 1.0)
            };
            Ok(vec![clamp(a)])
        }
        other => Err(NewtError::UnknownTask {
            name: other.to_string(),
            known: super::known_task_list(),
        }),
    }
}

fn split_point(native: &[f64]) -> Result<([f64; 2], [f64; 2], [f64; 2])> {
    if native.len() < 6 {
        return Err(NewtError::dim("point expert needs 6 state dims".to_string()));
    }
    Ok((
        [native[0], native[1]],
        [native[2], native[3]],
        [native[4], native[5]],
    ))
}
