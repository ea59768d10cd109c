use crate::config::TrainConfig;
use crate::demo_file::DemoFile;
use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::metrics::{MetricRecord, MetricsWriter};
use crate::planner::{
    bias_coef, plan, PlanMode, PlanRequest, PlanState, PlannerConfig, WorldPlanModel,
};
use crate::replay::{DualBuffer, EpisodeRecord, SampleMix, Source};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tasks::{
    make_task, normalized_score, pad, scripted_expert, Environment, Scoring, TaskSpec,
};
use crate::trainer::agent::Agent;
use std::path::Path;

#[derive(Clone, Debug)]
pub struct CollectStats {
    pub task: String,
    pub attempts: usize,
    pub accepted: usize,
    pub mean_score: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    /// Re-plan every step, execute the distribution mean's first action.
    Closed,
    /// Plan a window of `horizon` actions from the true observation,
    /// execute it blind, re-plan at the window end.
    Open { horizon: usize },
    /// Policy prior mean, no planning.
    Prior,
}

#[derive(Clone, Debug)]
pub struct TaskScore {
    pub task: String,
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub scores: Vec<TaskScore>,
    pub mean: f64,
    pub fallbacks: u64,
}

impl EvalReport {
    pub fn score_for(&self, task: &str) -> Option<f64> {
        self.scores.iter().find(|s| s.task == task).map(|s| s.score)
    }
}

fn episode_seed(base: u64, task_id: u32, episode: usize) -> u64 {
    // splitmix-style mixing keeps per-episode seeds decorrelated while
    // staying identical across checkpoints for paired comparisons
    let mut x = base
        .wrapping_mul(0x9e3779b97f4a7c15)
        .wrapping_add((task_id as u64) << 32)
        .wrapping_add(episode as u64 + 1);
    x ^= x >> 30;
    x = x.wrapping_mul(0xbf58476d1ce4e5b9);
    x ^ (x >> 27)
}

/// Rolls the scripted expert until enough episodes pass the quality gate.
/// Success-scored tasks require success; return-scored tasks require a
/// return of at least 0.75x the running median of attempts so far.
pub fn collect_demos(
    config: &TrainConfig,
    task: &str,
    n_episodes: usize,
    out: &Path,
    seed: u64,
) -> Result<CollectStats> {
    collect_demos_with_policy(config, task, n_episodes, out, seed, scripted_expert)
}

/// `collect_demos` with an injectable controller (tests use this to force
/// the rejection/abort paths).
pub fn collect_demos_with_policy(
    config: &TrainConfig,
    task: &str,
    n_episodes: usize,
    out: &Path,
    seed: u64,
    mut policy: impl FnMut(&str, &[f64]) -> Result<Vec<Real>>,
) -> Result<CollectStats> {
    let (mut env, spec) = make_task(task, &config.suite, None)?;
    let mut file = DemoFile::new(vec![spec.name.clone()]);
    let mut returns_seen: Vec<f64> = Vec::new();
    let mut attempts = 0usize;
    let mut score_sum = 0.0;
    let max_attempts = 10 * n_episodes;
    while file.episodes.len() < n_episodes && attempts < max_attempts {
        let ep_seed = episode_seed(seed, spec.task_id, attempts);
        attempts += 1;
        let mut obs = env.reset(ep_seed);
        let mut states: Vec<Real> = Vec::with_capacity((spec.episode_len + 1) * config.suite.state_dim);
        let mut actions: Vec<Real> = Vec::with_capacity(spec.episode_len * config.suite.action_dim);
        let mut rewards: Vec<Real> = Vec::with_capacity(spec.episode_len);
        states.extend_from_slice(&obs);
        let mut ep_return = 0.0f64;
        let mut success = false;
        for _ in 0..spec.episode_len {
            let native = env.native_state();
            let action = policy(task, &native)?;
            let padded = pad(
                &action.iter().map(|&a| a as f64).collect::<Vec<_>>(),
                config.suite.action_dim,
            );
            let step = env.step(&padded)?;
            obs = step.obs;
            states.extend_from_slice(&obs);
            actions.extend_from_slice(&padded);
            rewards.push(step.reward);
            ep_return += step.reward as f64;
            if step.episode_done {
                success = step.success;
            }
        }
        returns_seen.push(ep_return);
        let accepted = match spec.scoring {
            Scoring::Success => success,
            Scoring::Return { .. } => {
                let mut sorted = returns_seen.clone();
                sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite returns"));
                let median = sorted[sorted.len() / 2];
                ep_return >= 0.75 * median
            }
        };
        if accepted {
            score_sum += normalized_score(&spec, ep_return, success);
            file.episodes.push(EpisodeRecord {
                task_id: 0, // index into this file's task table
                state_dim: config.suite.state_dim,
                action_dim: config.suite.action_dim,
                states,
                actions,
                rewards,
                source: Source::Demo,
            });
        }
    }
    if file.episodes.len() < n_episodes {
        return Err(NewtError::State(format!(
            "demo collection for '{task}' accepted only {}/{n_episodes} episodes in {attempts} \
             attempts; the scripted expert may be broken for this task",
            file.episodes.len()
        )));
    }
    file.write_to(out)?;
    Ok(CollectStats {
        task: task.to_string(),
        attempts,
        accepted: file.episodes.len(),
        mean_score: score_sum / n_episodes as f64,
    })
}

/// Loads demo files into a fresh dual buffer, re-keying task ids to the
/// global registry, and checks that every configured task is covered.
pub fn load_demo_buffer(config: &TrainConfig, paths: &[std::path::PathBuf]) -> Result<DualBuffer> {
    let mut buffer = DualBuffer::new(config.replay_capacity);
    let mut covered: Vec<String> = Vec::new();
    for path in paths {
        let file = DemoFile::read_from(path)?;
        for mut ep in file.episodes {
            let name = file
                .tasks
                .get(ep.task_id as usize)
                .ok_or_else(|| NewtError::Format("demo episode outside task table".to_string()))?;
            let spec = crate::tasks::make_spec(name, &config.suite, None)?;
            ep.task_id = spec.task_id;
            if ep.state_dim != config.suite.state_dim || ep.action_dim != config.suite.action_dim {
                return Err(NewtError::dim(format!(
                    "demo file '{}' was collected with different padded dims",
                    path.display()
                )));
            }
            buffer.add_episode(ep)?;
            if !covered.contains(name) {
                covered.push(name.clone());
            }
        }
    }
    for task in &config.tasks {
        if !covered.contains(task) {
            return Err(NewtError::State(format!(
                "no demonstrations for configured task '{task}'"
            )));
        }
    }
    Ok(buffer)
}

fn specs_for(config: &TrainConfig, names: &[String]) -> Result<Vec<TaskSpec>> {
    names
        .iter()
        .map(|n| crate::tasks::make_spec(n, &config.suite, None))
        .collect()
}

/// Model-based pretraining on demo-only batches. Every component trains;
/// the policy's Q-value term stays off. Periodic evaluations use the
/// policy prior directly (no planning).
pub fn pretrain(
    config: &TrainConfig,
    demo_paths: &[std::path::PathBuf],
    out_ckpt: &Path,
    metrics: &mut MetricsWriter,
) -> Result<Agent> {
    let buffer = load_demo_buffer(config, demo_paths)?;
    let mut agent = Agent::new(config.clone())?;
    let specs = specs_for(config, &config.tasks)?;
    let log_every = (config.pretrain_iters / 10).max(1);
    for iter in 0..config.pretrain_iters {
        let batch = buffer.sample_segments(
            &specs,
            config.batch,
            config.model.horizon,
            SampleMix::DemoOnly,
            &mut agent.update_rng,
        )?;
        let stats = agent.pretrain_update(&batch).map_err(|e| {
            let _ = agent.save(out_ckpt);
            e
        })?;
        if (iter + 1) % log_every == 0 || iter == 0 {
            let mut rec = MetricRecord::new(iter + 1, "pretrain");
            rec.model_loss = Some(stats.model_loss);
            rec.policy_loss = Some(stats.policy_loss);
            rec.bc_loss = Some(stats.bc_term);
            metrics.emit(rec)?;
        }
    }
    let report = evaluate(&agent, &config.tasks, config.eval_episodes, EvalMode::Prior, config.seed, None)?;
    emit_eval(metrics, 0, "pretrain-eval", &report)?;
    agent.save(out_ckpt)?;
    Ok(agent)
}

/// Behavior-cloning baseline: encoder and policy trained on the masked
/// regression objective only; evaluation uses the policy mean.
pub fn bc_train(
    config: &TrainConfig,
    demo_paths: &[std::path::PathBuf],
    out_ckpt: &Path,
    metrics: &mut MetricsWriter,
) -> Result<Agent> {
    let buffer = load_demo_buffer(config, demo_paths)?;
    let mut agent = Agent::new(config.clone())?;
    let specs = specs_for(config, &config.tasks)?;
    let log_every = (config.bc_iters / 10).max(1);
    for iter in 0..config.bc_iters {
        let batch = buffer.sample_segments(
            &specs,
            config.batch,
            config.model.horizon,
            SampleMix::DemoOnly,
            &mut agent.update_rng,
        )?;
        let loss = agent.bc_update(&batch)?;
        if (iter + 1) % log_every == 0 || iter == 0 {
            let mut rec = MetricRecord::new(iter + 1, "bc");
            rec.bc_loss = Some(loss);
            metrics.emit(rec)?;
        }
    }
    let report = evaluate(&agent, &config.tasks, config.eval_episodes, EvalMode::Prior, config.seed, None)?;
    emit_eval(metrics, 0, "bc-eval", &report)?;
    agent.save(out_ckpt)?;
    Ok(agent)
}

struct EnvSlot {
    env: Box<dyn Environment>,
    spec: TaskSpec,
    obs: Vec<Real>,
    plan_state: Option<PlanState<Real>>,
    plan_rng: Rng,
    ep_states: Vec<Real>,
    ep_actions: Vec<Real>,
    ep_rewards: Vec<Real>,
}

impl EnvSlot {
    fn begin_episode(&mut self) {
        self.plan_state = None;
        self.ep_states = self.obs.clone();
        self.ep_actions.clear();
        self.ep_rewards.clear();
    }
}

fn encode_obs(agent: &Agent, slot: &EnvSlot) -> Result<Vec<Real>> {
    let s = Matrix::from_vec(1, slot.obs.len(), slot.obs.clone())?;
    let g = Matrix::from_vec(1, slot.spec.lang_embedding.len(), slot.spec.lang_embedding.clone())?;
    let z = agent.model.encode(&agent.params, &s, None, &g)?;
    Ok(z.row(0).to_vec())
}

/// Options shared by `train` and `finetune`.
struct LoopOptions {
    mix: SampleMix,
    use_bias_schedule: bool,
}

/// Online RL: strict round-robin collection across one env instance per
/// task, planner actions with annealed policy bias, and floor-accounted
/// updates at the configured UTD ratio.
pub fn train(
    agent: &mut Agent,
    buffer: &mut DualBuffer,
    out_ckpt: &Path,
    metrics: &mut MetricsWriter,
) -> Result<()> {
    let opts = LoopOptions {
        mix: SampleMix::DualFiftyFifty,
        use_bias_schedule: true,
    };
    run_loop(agent, buffer, out_ckpt, metrics, &opts)
}

/// Online RL on a single (possibly unseen) task with no demonstrations
/// and no planner bias. Runs a zero-shot evaluation first.
pub fn finetune(
    agent: &mut Agent,
    task: &str,
    out_ckpt: &Path,
    metrics: &mut MetricsWriter,
) -> Result<()> {
    agent.config.tasks = vec![task.to_string()];
    // unseen tasks still need a registered spec (instruction embedding)
    let _ = crate::tasks::make_spec(task, &agent.config.suite, None)?;
    let zero_shot = evaluate(
        agent,
        &agent.config.tasks.clone(),
        agent.config.eval_episodes,
        EvalMode::Closed,
        agent.config.seed,
        None,
    )?;
    emit_eval(metrics, agent.env_steps, "zero-shot", &zero_shot)?;
    let mut buffer = DualBuffer::new(agent.config.replay_capacity);
    let opts = LoopOptions {
        mix: SampleMix::OnlineOnly,
        use_bias_schedule: false,
    };
    run_loop(agent, &mut buffer, out_ckpt, metrics, &opts)
}

fn run_loop(
    agent: &mut Agent,
    buffer: &mut DualBuffer,
    out_ckpt: &Path,
    metrics: &mut MetricsWriter,
    opts: &LoopOptions,
) -> Result<()> {
    let config = agent.config.clone();
    let specs = specs_for(&config, &config.tasks)?;
    let mut collect_rng = Rng::seed_from(config.seed ^ 0xc011_ec70);
    let mut slots: Vec<EnvSlot> = Vec::new();
    for name in &config.tasks {
        let (mut env, spec) = make_task(name, &config.suite, None)?;
        let obs = env.reset(collect_rng.next_u64());
        let plan_rng = collect_rng.split();
        let mut slot = EnvSlot {
            env,
            spec,
            obs,
            plan_state: None,
            plan_rng,
            ep_states: Vec::new(),
            ep_actions: Vec::new(),
            ep_rewards: Vec::new(),
        };
        slot.begin_episode();
        slots.push(slot);
    }

    let mut fallback_count = 0u64;
    let mut last_eval_bucket = agent.env_steps / config.eval_every.max(1);
    let mut loss_accum = (0.0f64, 0.0f64, 0u64);
    let log_every = (config.total_env_steps / 20).max(1);
    let mut next_log = agent.env_steps + log_every;

    while agent.env_steps < config.total_env_steps {
        for slot in &mut slots {
            if agent.env_steps >= config.total_env_steps {
                break;
            }
            let beta = if opts.use_bias_schedule {
                bias_coef(agent.env_steps, &config.bias)
            } else {
                0.0
            };
            let z0 = encode_obs(agent, slot)?;
            let adapter = WorldPlanModel {
                model: &agent.model,
                store: &agent.params,
                lang: slot.spec.lang_embedding.clone(),
                mask: slot.spec.action_mask_real(),
                gamma: slot.spec.gamma as Real,
            };
            let req = PlanRequest {
                z0: &z0,
                prev: slot.plan_state.as_ref(),
                beta,
                mode: PlanMode::Closed,
                deterministic: false,
            };
            let out = plan(&adapter, &req, &config.planner, &mut slot.plan_rng)?;
            if out.fallback {
                fallback_count += 1;
            }
            let action: Vec<Real> = out.actions.row(0).to_vec();
            slot.plan_state = Some(out.state);
            let step = slot.env.step(&action)?;
            slot.ep_actions.extend_from_slice(&action);
            slot.ep_rewards.push(step.reward);
            slot.ep_states.extend_from_slice(&step.obs);
            agent.env_steps += 1;
            if step.episode_done {
                buffer.add_episode(EpisodeRecord {
                    task_id: slot.spec.task_id,
                    state_dim: config.suite.state_dim,
                    action_dim: config.suite.action_dim,
                    states: std::mem::take(&mut slot.ep_states),
                    actions: std::mem::take(&mut slot.ep_actions),
                    rewards: std::mem::take(&mut slot.ep_rewards),
                    source: Source::Online,
                })?;
                slot.obs = slot.env.obs();
                slot.begin_episode();
            } else {
                slot.obs = step.obs;
            }
        }

        // Updates owed so far at the configured update-to-data ratio.
        let due = (config.utd * agent.env_steps as f64).floor() as u64;
        while agent.rl_updates < due {
            if buffer.online_episodes() == 0 {
                break; // no full episode yet; floor accounting catches up
            }
            let batch = buffer.sample_segments(
                &specs,
                config.batch,
                config.model.horizon,
                opts.mix,
                &mut agent.update_rng,
            )?;
            let stats = agent.update(&batch).map_err(|e| {
                let _ = agent.save(&out_ckpt.with_extension("diverged.ckpt"));
                e
            })?;
            agent.rl_updates += 1;
            loss_accum.0 += stats.model_loss;
            loss_accum.1 += stats.policy_loss;
            loss_accum.2 += 1;
        }

        if agent.env_steps >= next_log {
            next_log += log_every;
            let n = loss_accum.2.max(1) as f64;
            let mut rec = MetricRecord::new(agent.env_steps, "train");
            rec.model_loss = Some(loss_accum.0 / n);
            rec.policy_loss = Some(loss_accum.1 / n);
            rec.beta = Some(if opts.use_bias_schedule {
                bias_coef(agent.env_steps, &config.bias)
            } else {
                0.0
            });
            rec.fallback_count = Some(fallback_count);
            metrics.emit(rec)?;
            loss_accum = (0.0, 0.0, 0);
        }

        let bucket = agent.env_steps / config.eval_every.max(1);
        if bucket > last_eval_bucket && agent.env_steps < config.total_env_steps {
            last_eval_bucket = bucket;
            let episodes = config.eval_episodes.min(5);
            let report = evaluate(
                agent,
                &config.tasks,
                episodes,
                EvalMode::Closed,
                config.seed,
                None,
            )?;
            emit_eval(metrics, agent.env_steps, "eval", &report)?;
            agent.save(out_ckpt)?;
        }
    }
    agent.save(out_ckpt)?;
    Ok(())
}

fn emit_eval(
    metrics: &mut MetricsWriter,
    step: u64,
    kind: &str,
    report: &EvalReport,
) -> Result<()> {
    for score in &report.scores {
        let mut rec = MetricRecord::new(step, kind);
        rec.task = Some(score.task.clone());
        rec.score = Some(score.score);
        metrics.emit(rec)?;
    }
    let mut rec = MetricRecord::new(step, kind);
    rec.task = Some("mean".to_string());
    rec.score = Some(report.mean);
    rec.fallback_count = Some(report.fallbacks);
    metrics.emit(rec)?;
    Ok(())
}

/// Shifts plan-state rows up by `n-1` so the planner's internal one-step
/// shift completes an n-step receding horizon.
fn preshift_plan_state(
    state: &PlanState<Real>,
    n_minus_one: usize,
    cfg: &PlannerConfig,
) -> PlanState<Real> {
    let h = state.mu.rows();
    let m = state.mu.cols();
    let mut mu = Matrix::zeros(h, m);
    let mut sigma = Matrix::zeros(h, m);
    for t in 0..h {
        let src = t + n_minus_one;
        if src < h {
            mu.row_mut(t).copy_from_slice(state.mu.row(src));
            sigma.row_mut(t).copy_from_slice(state.sigma.row(src));
        } else {
            for i in 0..m {
                sigma.set(t, i, cfg.std_max as Real);
            }
        }
    }
    PlanState {
        mu,
        sigma,
        value_estimate: state.value_estimate,
    }
}

/// Deterministic evaluation over paired episode seeds. Closed mode
/// re-plans every step with a receding-horizon warm start; open mode
/// executes whole planned windows without feedback and re-plans from the
/// true observation at each window end; prior mode uses the policy mean.
pub fn evaluate(
    agent: &Agent,
    tasks: &[String],
    episodes: usize,
    mode: EvalMode,
    base_seed: u64,
    mut metrics: Option<&mut MetricsWriter>,
) -> Result<EvalReport> {
    let config = &agent.config;
    let mut scores = Vec::new();
    let mut fallbacks = 0u64;
    let planner_cfg = match mode {
        EvalMode::Open { horizon } => {
            if horizon == 0 {
                return Err(NewtError::invalid("open-loop horizon must be >= 1".to_string()));
            }
            // extend the planner horizon to cover the whole window
            PlannerConfig {
                horizon: config.planner.horizon.max(horizon),
                ..config.planner.clone()
            }
        }
        _ => config.planner.clone(),
    };
    for name in tasks {
        let (mut env, spec) = make_task(name, &config.suite, None)?;
        let mask = spec.action_mask_real();
        let lang = spec.lang_embedding.clone();
        let g_row = Matrix::from_vec(1, lang.len(), lang.clone())?;
        let mask_row = Matrix::from_vec(1, mask.len(), mask.clone())?;
        let mut total = 0.0;
        for ep in 0..episodes {
            let seed = episode_seed(base_seed, spec.task_id, ep);
            let mut obs = env.reset(seed);
            let mut plan_rng = Rng::seed_from(seed ^ 0x9a7e_11aa);
            let mut prev: Option<PlanState<Real>> = None;
            let mut ep_return = 0.0f64;
            let mut success = false;
            let mut t = 0usize;
            while t < spec.episode_len {
                let window = match mode {
                    EvalMode::Closed => 1,
                    EvalMode::Open { horizon } => horizon,
                    EvalMode::Prior => 1,
                };
                let actions: Matrix<Real> = match mode {
                    EvalMode::Prior => {
                        let s = Matrix::from_vec(1, obs.len(), obs.clone())?;
                        let z = agent.model.encode(&agent.params, &s, None, &g_row)?;
                        agent
                            .model
                            .policy_mean_action(&agent.params, &z, &g_row, Some(&mask_row))?
                    }
                    _ => {
                        let s = Matrix::from_vec(1, obs.len(), obs.clone())?;
                        let z = agent.model.encode(&agent.params, &s, None, &g_row)?;
                        let adapter = WorldPlanModel {
                            model: &agent.model,
                            store: &agent.params,
                            lang: lang.clone(),
                            mask: mask.clone(),
                            gamma: spec.gamma as Real,
                        };
                        let req = PlanRequest {
                            z0: z.row(0),
                            prev: prev.as_ref(),
                            beta: 0.0,
                            mode: if window > 1 {
                                PlanMode::Open
                            } else {
                                PlanMode::Closed
                            },
                            deterministic: true,
                        };
                        let out = plan(&adapter, &req, &planner_cfg, &mut plan_rng)?;
                        if out.fallback {
                            fallbacks += 1;
                        }
                        prev = Some(preshift_plan_state(
                            &out.state,
                            window.min(planner_cfg.horizon) - 1,
                            &planner_cfg,
                        ));
                        out.actions
                    }
                };
                let exec = window.min(spec.episode_len - t).min(actions.rows());
                for w in 0..exec {
                    let step = env.step(actions.row(w))?;
                    ep_return += step.reward as f64;
                    obs = step.obs;
                    if step.episode_done {
                        success = step.success;
                    }
                    t += 1;
                }
            }
            total += normalized_score(&spec, ep_return, success);
        }
        let score = total / episodes as f64;
        scores.push(TaskScore {
            task: name.clone(),
            score,
        });
    }
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / scores.len().max(1) as f64;
    let report = EvalReport {
        scores,
        mean,
        fallbacks,
    };
    if let Some(m) = metrics.as_deref_mut() {
        emit_eval(m, agent.env_steps, "eval", &report)?;
    }
    Ok(report)
}

/// Convenience wrapper used by tests: a uniform-random policy baseline.
pub fn random_policy_report(config: &TrainConfig, tasks: &[String], episodes: usize, seed: u64) -> Result<EvalReport> {
    let mut scores = Vec::new();
    for name in tasks {
        let (mut env, spec) = make_task(name, &config.suite, None)?;
        let mut total = 0.0;
        for ep in 0..episodes {
            let ep_seed = episode_seed(seed, spec.task_id, ep);
            env.reset(ep_seed);
            let mut rng = Rng::seed_from(ep_seed ^ 0x7a37);
            let mut ep_return = 0.0;
            let mut success = false;
            for _ in 0..spec.episode_len {
                let action: Vec<Real> = (0..config.suite.action_dim)
                    .map(|_| rng.range(-1.0, 1.0) as Real)
                    .collect();
                let step = env.step(&action)?;
                ep_return += step.reward as f64;
                if step.episode_done {
                    success = step.success;
                }
            }
            total += normalized_score(&spec, ep_return, success);
        }
        scores.push(TaskScore {
            task: name.clone(),
            score: total / episodes as f64,
        });
    }
    let mean = scores.iter().map(|s| s.score).sum::<f64>() / scores.len().max(1) as f64;
    Ok(EvalReport {
        scores,
        mean,
        fallbacks: 0,
    })
}
