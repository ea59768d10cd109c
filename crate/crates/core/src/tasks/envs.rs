//! Native task dynamics. Everything is closed-form arithmetic stepped in
//! f64, so trajectories are exactly reproducible and oracle-checkable.

use crate::error::{NewtError, Result};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tasks::{pad, Environment, StepResult, SuiteConfig, TaskSpec};

pub(crate) const DT: f64 = 0.1;
pub(crate) const DAMPING: f64 = 0.9;
pub(crate) const REACH_RADIUS: f64 = 0.1;
// The maze run is twice as long and ends after sustained goal-holding;
// its terminal region scales accordingly.
pub(crate) const MAZE_REACH_RADIUS: f64 = 0.15;
pub(crate) const MAZE_WALL_X: f64 = 0.0;
pub(crate) const MAZE_GAP_HALF: f64 = 0.3;
pub(crate) const CHASE_RADIUS: f64 = 0.5;
pub(crate) const CHASE_RATE: f64 = 0.05;
pub(crate) const PUSH_BLOCK_HALF: f64 = 0.05;
pub(crate) const PUSH_SUCCESS: f64 = 0.05;
pub(crate) const COIN_RADIUS: f64 = 0.15;

/// Analytic return upper bound for the collector task: a point mass at
/// top speed covers the mean distance between uniform coin positions in
/// E[d]/(v_max*dt) steps; spin-up under velocity damping adds a fixed
/// overhead per leg. No policy can collect faster.
pub(crate) fn collector_return_bound(episode_len: usize) -> f64 {
    let side = 1.6; // coins spawn in [-0.8, 0.8]^2
    let mean_dist = 0.5214 * side; // expected distance between uniform points in a square
    let travel_steps = mean_dist / DT; // v_max = dt/(1-damping) = 1.0
    let spinup_steps = 5.0;
    (episode_len as f64 / (travel_steps + spinup_steps)).floor()
}

fn check_action(action: &[Real], native: usize) -> Result<()> {
    if action.len() < native {
        return Err(NewtError::dim(format!(
            "action has {} dims, task needs {native}",
            action.len()
        )));
    }
    if action[..native].iter().any(|a| !a.is_finite()) {
        return Err(NewtError::NonFinite("action".to_string()));
    }
    Ok(())
}

#[inline]
fn clamp_unit(v: f64) -> f64 {
    v.clamp(-1.0, 1.0)
}

/// Shared 2-D point-mass integrator: v' = damping*v + a*dt, p' = p + v'*dt.
fn point_step(pos: &mut [f64; 2], vel: &mut [f64; 2], accel: [f64; 2]) {
    for i in 0..2 {
        vel[i] = DAMPING * vel[i] + clamp_unit(accel[i]) * DT;
        pos[i] += vel[i] * DT;
        pos[i] = pos[i].clamp(-1.0, 1.0);
    }
}

fn dist2(a: [f64; 2], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

enum Kind {
    Reach { far_goal: bool },
    Maze,
    Chase,
    Push,
    Collector,
}

/// One struct drives all tasks; `Kind` selects dynamics and reward.
struct ToyEnv {
    spec: TaskSpec,
    suite: SuiteConfig,
    kind: Kind,
    rng: Rng,
    t: usize,
    // point-mass tasks
    pos: [f64; 2],
    vel: [f64; 2],
    goal: [f64; 2],
    theta: f64,
    // push-1d
    agent: f64,
    block: f64,
    goal1: f64,
}

impl ToyEnv {
    fn new(kind: Kind, spec: TaskSpec, suite: SuiteConfig) -> Self {
        let mut env = ToyEnv {
            spec,
            suite,
            kind,
            rng: Rng::seed_from(0),
            t: 0,
            pos: [0.0; 2],
            vel: [0.0; 2],
            goal: [0.0; 2],
            theta: 0.0,
            agent: 0.0,
            block: 0.0,
            goal1: 0.0,
        };
        env.start_episode();
        env
    }

    fn start_episode(&mut self) {
        self.t = 0;
        self.vel = [0.0; 2];
        match self.kind {
            Kind::Reach { far_goal } => {
                self.pos = [self.rng.range(-0.8, 0.8), self.rng.range(-0.8, 0.8)];
                if far_goal {
                    // goal region shifted outside the training band
                    let side = if self.rng.uniform() < 0.5 { 1.0 } else { -1.0 };
                    self.goal = [side * self.rng.range(0.85, 0.95), self.rng.range(-0.9, 0.9)];
                    self.pos = [self.rng.range(-0.5, 0.5), self.rng.range(-0.5, 0.5)];
                } else {
                    self.goal = [self.rng.range(-0.8, 0.8), self.rng.range(-0.8, 0.8)];
                }
            }
            Kind::Maze => {
                self.pos = [self.rng.range(-0.8, -0.3), self.rng.range(-0.8, 0.8)];
                self.goal = [self.rng.range(0.3, 0.8), self.rng.range(-0.8, 0.8)];
            }
            Kind::Chase => {
                self.pos = [self.rng.range(-0.8, 0.8), self.rng.range(-0.8, 0.8)];
                self.theta = self.rng.range(0.0, std::f64::consts::TAU);
                self.goal = [
                    CHASE_RADIUS * self.theta.cos(),
                    CHASE_RADIUS * self.theta.sin(),
                ];
            }
            Kind::Push => {
                self.agent = self.rng.range(-0.9, -0.6);
                self.block = self.rng.range(-0.3, 0.1);
                self.goal1 = self.rng.range(0.4, 0.8);
            }
            Kind::Collector => {
                self.pos = [self.rng.range(-0.8, 0.8), self.rng.range(-0.8, 0.8)];
                self.goal = [self.rng.range(-0.8, 0.8), self.rng.range(-0.8, 0.8)];
            }
        }
    }

    fn native(&self) -> Vec<f64> {
        match self.kind {
            Kind::Reach { .. } | Kind::Maze | Kind::Collector => vec![
                self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.goal[0], self.goal[1],
            ],
            Kind::Chase => {
                // goal velocity as per-step displacement of the circular motion
                let next = self.theta + CHASE_RATE;
                let gv = [
                    CHASE_RADIUS * (next.cos() - self.theta.cos()),
                    CHASE_RADIUS * (next.sin() - self.theta.sin()),
                ];
                vec![
                    self.pos[0], self.pos[1], self.vel[0], self.vel[1], self.goal[0],
                    self.goal[1], gv[0], gv[1],
                ]
            }
            Kind::Push => vec![self.agent, self.block, self.goal1],
        }
    }

    /// Advances native dynamics one control step; returns (reward, success-so-far).
    fn advance(&mut self, action: &[Real]) -> (f64, bool) {
        match self.kind {
            Kind::Reach { .. } => {
                point_step(
                    &mut self.pos,
                    &mut self.vel,
                    [action[0] as f64, action[1] as f64],
                );
                let d = dist2(self.pos, self.goal);
                ((-3.0 * d).exp(), d < REACH_RADIUS)
            }
            Kind::Maze => {
                let before = self.pos;
                point_step(
                    &mut self.pos,
                    &mut self.vel,
                    [action[0] as f64, action[1] as f64],
                );
                // Block movement through the wall outside the gap. The
                // per-step travel is <= 0.1, so a linear crossing test is
                // exact enough at these speeds.
                let (x0, x1) = (before[0] - MAZE_WALL_X, self.pos[0] - MAZE_WALL_X);
                if x0.signum() != x1.signum() && x0 != 0.0 {
                    let frac = x0.abs() / (x0 - x1).abs();
                    let y_cross = before[1] + frac * (self.pos[1] - before[1]);
                    if y_cross.abs() > MAZE_GAP_HALF {
                        self.pos[0] = MAZE_WALL_X + x0.signum() * 1e-3;
                        self.vel[0] = 0.0;
                    }
                }
                let d = dist2(self.pos, self.goal);
                ((-3.0 * d).exp(), d < MAZE_REACH_RADIUS)
            }
            Kind::Chase => {
                point_step(
                    &mut self.pos,
                    &mut self.vel,
                    [action[0] as f64, action[1] as f64],
                );
                self.theta += CHASE_RATE;
                self.goal = [
                    CHASE_RADIUS * self.theta.cos(),
                    CHASE_RADIUS * self.theta.sin(),
                ];
                let d = dist2(self.pos, self.goal);
                ((-3.0 * d).exp(), false)
            }
            Kind::Push => {
                let a = clamp_unit(action[0] as f64);
                let before = self.agent;
                self.agent = (self.agent + a * DT).clamp(-1.0, 1.0);
                // Quasi-static block: a swept contact test so one step can
                // never tunnel through; the block ends at the agent's face.
                // Rounding can leave the agent embedded a hair inside the
                // extent after a push, so embedded starts also count as
                // contact, resolved along the direction of motion.
                let (lo, hi) = (self.block - PUSH_BLOCK_HALF, self.block + PUSH_BLOCK_HALF);
                let inside_before = before > lo && before < hi;
                if (before <= lo || inside_before) && self.agent > lo && self.agent > before {
                    self.block = (self.agent + PUSH_BLOCK_HALF).clamp(-1.0, 1.0);
                } else if (before >= hi || inside_before) && self.agent < hi && self.agent < before
                {
                    self.block = (self.agent - PUSH_BLOCK_HALF).clamp(-1.0, 1.0);
                }
                let d = (self.block - self.goal1).abs();
                ((-3.0 * d).exp(), d < PUSH_SUCCESS)
            }
            Kind::Collector => {
                point_step(
                    &mut self.pos,
                    &mut self.vel,
                    [action[0] as f64, action[1] as f64],
                );
                if dist2(self.pos, self.goal) < COIN_RADIUS {
                    self.goal = [self.rng.range(-0.8, 0.8), self.rng.range(-0.8, 0.8)];
                    (1.0, false)
                } else {
                    (0.0, false)
                }
            }
        }
    }
}

impl Environment for ToyEnv {
    fn spec(&self) -> &TaskSpec {
        &self.spec
    }

    fn reset(&mut self, seed: u64) -> Vec<Real> {
        self.rng = Rng::seed_from(seed ^ 0x5eed_0000_0000 ^ self.spec.task_id as u64);
        self.start_episode();
        self.obs()
    }

    fn obs(&self) -> Vec<Real> {
        pad(&self.native(), self.suite.state_dim)
    }

    fn native_state(&self) -> Vec<f64> {
        self.native()
    }

    fn step(&mut self, action: &[Real]) -> Result<StepResult> {
        check_action(action, self.spec.action_dim_native)?;
        let (reward, success_now) = self.advance(action);
        self.t += 1;
        let episode_done = self.t >= self.spec.episode_len;
        let obs = self.obs();
        let info = self.native();
        // Success is judged at episode end (tasks have no early
        // termination).
        let success = episode_done && success_now;
        if episode_done {
            self.start_episode();
        }
        Ok(StepResult {
            obs,
            reward: reward as Real,
            episode_done,
            success,
            info,
        })
    }
}

pub(crate) fn instantiate(
    name: &str,
    spec: TaskSpec,
    suite: &SuiteConfig,
) -> Result<Box<dyn Environment>> {
    let kind = match name {
        "point-reach" => Kind::Reach { far_goal: false },
        "point-reach-far" => Kind::Reach { far_goal: true },
        "point-maze" => Kind::Maze,
        "chase" => Kind::Chase,
        "push-1d" => Kind::Push,
        "collector" => Kind::Collector,
        other => {
            return Err(NewtError::UnknownTask {
                name: other.to_string(),
                known: super::known_task_list(),
            })
        }
    };
    Ok(Box::new(ToyEnv::new(kind, spec, suite.clone())))
}
