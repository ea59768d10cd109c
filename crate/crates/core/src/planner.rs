//! Sampling-based trajectory optimization in latent space. Each call
//! iteratively refits a time-dependent diagonal Gaussian over action
//! sequences to the weighted elites of model rollouts, warm-started by
//! the shifted previous plan and optionally biased toward the policy
//! prior (constrained planning).

use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::nn::ParamStore;
use crate::rng::Rng;
use crate::scalar::{c, Scalar};
use crate::world_model::WorldModel;
use serde::{Deserialize, Serialize};

/// Everything the planner needs from a model, batched over candidate
/// rows. Implemented by the learned world model and by analytic toy
/// models in tests.
pub trait PlanModel<S: Scalar> {
    fn action_dim(&self) -> usize;
    fn latent_dim(&self) -> usize;
    fn gamma(&self) -> S;
    /// 1/0 validity per action dim.
    fn action_mask(&self) -> &[S];
    fn dynamics(&self, z: &Matrix<S>, a: &Matrix<S>) -> Result<Matrix<S>>;
    /// Decoded reward per row.
    fn reward(&self, z: &Matrix<S>, a: &Matrix<S>) -> Result<Vec<S>>;
    /// Decoded terminal value per row (min over a random Q subset at the
    /// policy action).
    fn terminal_value(&self, z: &Matrix<S>, rng: &mut Rng) -> Result<Vec<S>>;
    /// Squashed mean and std of the policy at each row.
    fn policy_stats(&self, z: &Matrix<S>) -> Result<(Matrix<S>, Matrix<S>)>;
    /// One stochastic policy sample per row.
    fn policy_sample(&self, z: &Matrix<S>, rng: &mut Rng) -> Result<Matrix<S>>;
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct PlannerConfig {
    pub horizon: usize,
    pub iterations: usize,
    pub population: usize,
    pub prior_samples: usize,
    pub elites: usize,
    pub std_min: f64,
    pub std_max: f64,
    pub temperature: f64,
    pub momentum: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        PlannerConfig {
            horizon: 3,
            iterations: 6,
            population: 512,
            prior_samples: 24,
            elites: 64,
            std_min: 0.05,
            std_max: 2.0,
            temperature: 0.5,
            momentum: false,
        }
    }
}

impl PlannerConfig {
    pub fn default_desk() -> Self {
        PlannerConfig {
            horizon: 3,
            iterations: 3,
            population: 24,
            prior_samples: 4,
            elites: 6,
            std_min: 0.05,
            std_max: 2.0,
            temperature: 0.5,
            momentum: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.elites == 0 || self.elites > self.population + self.prior_samples {
            return Err(NewtError::invalid(format!(
                "elites {} out of range 1..={}",
                self.elites,
                self.population + self.prior_samples
            )));
        }
        if !(self.std_min < self.std_max) {
            return Err(NewtError::invalid("std_min must be < std_max".to_string()));
        }
        if self.horizon == 0 || self.iterations == 0 || self.population == 0 {
            return Err(NewtError::invalid(
                "horizon, iterations, population must be >= 1".to_string(),
            ));
        }
        Ok(())
    }
}

/// Per-timestep Gaussian parameters carried across control steps for
/// receding-horizon warm starts.
#[derive(Clone, Debug)]
pub struct PlanState<S> {
    /// [horizon x action_dim]
    pub mu: Matrix<S>,
    pub sigma: Matrix<S>,
    pub value_estimate: f64,
}

/// Linear annealing window for the constrained-planning bias, in
/// environment steps.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct BiasSchedule {
    pub anneal_start: u64,
    pub anneal_end: u64,
}

impl BiasSchedule {
    pub fn validate(&self) -> Result<()> {
        if self.anneal_start >= self.anneal_end {
            return Err(NewtError::invalid("bias schedule start must be < end".to_string()));
        }
        Ok(())
    }
}

/// beta = 1 up to the window start, 0 from the window end, linear in
/// between.
pub fn bias_coef(step: u64, sched: &BiasSchedule) -> f64 {
    if step <= sched.anneal_start {
        1.0
    } else if step >= sched.anneal_end {
        0.0
    } else {
        (sched.anneal_end - step) as f64 / (sched.anneal_end - sched.anneal_start) as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlanMode {
    /// Execute the first action, keep the rest as a warm start.
    Closed,
    /// Return the full sequence for execution without feedback.
    Open,
}

pub struct PlanRequest<'a, S> {
    pub z0: &'a [S],
    pub prev: Option<&'a PlanState<S>>,
    pub beta: f64,
    pub mode: PlanMode,
    /// Deterministic mode returns the refit mean; otherwise one elite is
    /// sampled according to the final weights.
    pub deterministic: bool,
}

pub struct PlanOutput<S> {
    /// Chosen action sequence, [horizon x action_dim]. Closed-loop
    /// callers execute row 0.
    pub actions: Matrix<S>,
    pub state: PlanState<S>,
    /// Candidates discarded for non-finite scores.
    pub nonfinite_discarded: usize,
    /// True when every candidate scored non-finite and the policy prior
    /// supplied the action.
    pub fallback: bool,
}

/// One candidate action sequence per step: seqs[t] is [n x action_dim].
fn roll_scores<S: Scalar, M: PlanModel<S>>(
    model: &M,
    z0: &[S],
    seqs: &[Matrix<S>],
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let n = seqs[0].rows();
    let mut z = Matrix::repeat_row(z0, n);
    let gamma = model.gamma().to_f64();
    let mut scores = vec![0.0f64; n];
    let mut disc = 1.0f64;
    for a in seqs {
        let r = model.reward(&z, a)?;
        for (srow, rv) in scores.iter_mut().zip(&r) {
            *srow += disc * rv.to_f64();
        }
        z = model.dynamics(&z, a)?;
        disc *= gamma;
    }
    let terminal = model.terminal_value(&z, rng)?;
    for (srow, tv) in scores.iter_mut().zip(&terminal) {
        *srow += disc * tv.to_f64();
    }
    Ok(scores)
}

/// Public scoring entry point for a single action sequence; the test
/// oracle recomputes this sum by hand.
pub fn score_trajectory<S: Scalar, M: PlanModel<S>>(
    model: &M,
    z0: &[S],
    actions: &Matrix<S>,
    rng: &mut Rng,
) -> Result<f64> {
    let seqs: Vec<Matrix<S>> = (0..actions.rows())
        .map(|t| Matrix::repeat_row(actions.row(t), 1))
        .collect();
    Ok(roll_scores(model, z0, &seqs, rng)?[0])
}

/// Rolls the policy prior forward from z0 along its own mean actions,
/// returning the per-step (mean, std) used for constrained planning.
fn policy_distribution<S: Scalar, M: PlanModel<S>>(
    model: &M,
    z0: &[S],
    horizon: usize,
) -> Result<(Matrix<S>, Matrix<S>)> {
    let m = model.action_dim();
    let mut mu = Matrix::zeros(horizon, m);
    let mut sigma = Matrix::zeros(horizon, m);
    let mut z = Matrix::repeat_row(z0, 1);
    for t in 0..horizon {
        let (mean, std) = model.policy_stats(&z)?;
        mu.row_mut(t).copy_from_slice(mean.row(0));
        sigma.row_mut(t).copy_from_slice(std.row(0));
        z = model.dynamics(&z, &mean)?;
    }
    Ok((mu, sigma))
}

/// Stochastic policy rollouts that join the candidate pool.
fn prior_rollouts<S: Scalar, M: PlanModel<S>>(
    model: &M,
    z0: &[S],
    horizon: usize,
    n: usize,
    rng: &mut Rng,
) -> Result<Vec<Matrix<S>>> {
    let mut z = Matrix::repeat_row(z0, n);
    let mut seqs = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let a = model.policy_sample(&z, rng)?;
        z = model.dynamics(&z, &a)?;
        seqs.push(a);
    }
    Ok(seqs)
}

/// Warm start plus constrained-planning interpolation: the base is the
/// one-step-shifted previous plan (or a flat wide prior), blended toward
/// the policy prior's distribution by beta, then clamped and masked.
pub fn init_distribution<S: Scalar>(
    prev: Option<&PlanState<S>>,
    policy_dist: Option<(&Matrix<S>, &Matrix<S>)>,
    beta: f64,
    cfg: &PlannerConfig,
    action_dim: usize,
    mask: &[S],
) -> (Matrix<S>, Matrix<S>) {
    let h = cfg.horizon;
    let mut mu = Matrix::zeros(h, action_dim);
    let mut sigma = Matrix::zeros(h, action_dim);
    let std_max = c::<S>(cfg.std_max);
    for t in 0..h {
        for i in 0..action_dim {
            sigma.set(t, i, std_max);
        }
    }
    if let Some(p) = prev {
        for t in 0..h.saturating_sub(1) {
            if t + 1 < p.mu.rows() {
                mu.row_mut(t).copy_from_slice(p.mu.row(t + 1));
                sigma.row_mut(t).copy_from_slice(p.sigma.row(t + 1));
            }
        }
    }
    if beta > 0.0 {
        if let Some((pm, ps)) = policy_dist {
            let b = c::<S>(beta);
            let one_minus = S::ONE - b;
            for t in 0..h {
                for i in 0..action_dim {
                    mu.set(t, i, one_minus * mu.get(t, i) + b * pm.get(t, i));
                    sigma.set(t, i, one_minus * sigma.get(t, i) + b * ps.get(t, i));
                }
            }
        }
    }
    let lo = c::<S>(cfg.std_min);
    let hi = c::<S>(cfg.std_max);
    for t in 0..h {
        for i in 0..action_dim {
            if mask[i] <= S::ZERO {
                mu.set(t, i, S::ZERO);
                sigma.set(t, i, S::ZERO);
            } else {
                sigma.set(t, i, sigma.get(t, i).clamp_to(lo, hi));
                mu.set(t, i, mu.get(t, i).clamp_to(c(-1.0), c(1.0)));
            }
        }
    }
    (mu, sigma)
}

pub fn plan<S: Scalar, M: PlanModel<S>>(
    model: &M,
    req: &PlanRequest<S>,
    cfg: &PlannerConfig,
    rng: &mut Rng,
) -> Result<PlanOutput<S>> {
    cfg.validate()?;
    let h = cfg.horizon;
    let m = model.action_dim();
    let mask = model.action_mask().to_vec();

    let policy_dist = policy_distribution(model, req.z0, h)?;
    let (mut mu, mut sigma) = init_distribution(
        req.prev,
        Some((&policy_dist.0, &policy_dist.1)),
        req.beta,
        cfg,
        m,
        &mask,
    );

    // Policy-prior candidates are generated once and rejoin the pool at
    // every iteration.
    let prior_seqs = if cfg.prior_samples > 0 {
        prior_rollouts(model, req.z0, h, cfg.prior_samples, rng)?
    } else {
        Vec::new()
    };
    let prior_scores = if cfg.prior_samples > 0 {
        roll_scores(model, req.z0, &prior_seqs, rng)?
    } else {
        Vec::new()
    };

    let lo = c::<S>(cfg.std_min);
    let hi = c::<S>(cfg.std_max);
    let mut nonfinite = 0usize;
    // Retained best candidate guarantees the best elite score can never
    // regress between iterations.
    let mut incumbent: Option<(Vec<Matrix<S>>, f64)> = None;
    let mut final_elites: Vec<(Vec<S>, f64)> = Vec::new(); // flattened seq, score
    let mut value_estimate = f64::NEG_INFINITY;

    for _iter in 0..cfg.iterations {
        // Sample the population from N(mu, sigma^2), clamped to [-1, 1].
        let pop = cfg.population;
        let mut pop_seqs: Vec<Matrix<S>> = Vec::with_capacity(h);
        for t in 0..h {
            let mut a = Matrix::zeros(pop, m);
            for r in 0..pop {
                for i in 0..m {
                    if mask[i] <= S::ZERO {
                        continue;
                    }
                    let v = mu.get(t, i) + sigma.get(t, i) * c::<S>(rng.normal());
                    a.set(r, i, v.clamp_to(c(-1.0), c(1.0)));
                }
            }
            pop_seqs.push(a);
        }
        let pop_scores = roll_scores(model, req.z0, &pop_seqs, rng)?;

        // Assemble the candidate pool: population, prior rollouts, and
        // the incumbent best from earlier iterations.
        let inc = incumbent.take();
        let total =
            pop + prior_seqs.first().map_or(0, |s| s.rows()) + usize::from(inc.is_some());
        let mut cand_score = Vec::with_capacity(total);
        let fetch_action = |idx: usize, t: usize| -> &[S] {
            if idx < pop {
                pop_seqs[t].row(idx)
            } else if idx < pop + cfg.prior_samples {
                prior_seqs[t].row(idx - pop)
            } else {
                let flat = &inc.as_ref().expect("incumbent").0;
                flat[t].row(0)
            }
        };
        for s in pop_scores.iter().chain(prior_scores.iter()) {
            if s.is_finite() {
                cand_score.push(*s);
            } else {
                nonfinite += 1;
                cand_score.push(f64::NEG_INFINITY);
            }
        }
        if let Some((_, s)) = &inc {
            cand_score.push(*s);
        }

        let mut order: Vec<usize> = (0..cand_score.len()).collect();
        order.sort_by(|&a, &b| {
            cand_score[b]
                .partial_cmp(&cand_score[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let n_elites = cfg.elites.min(order.len());
        let elite_idx = &order[..n_elites];
        let best = cand_score[elite_idx[0]];
        if !best.is_finite() {
            // Every candidate diverged; fall back to the policy prior.
            let mut actions = Matrix::zeros(h, m);
            actions.row_mut(0).copy_from_slice(policy_dist.0.row(0));
            return Ok(PlanOutput {
                actions,
                state: PlanState {
                    mu,
                    sigma,
                    value_estimate: f64::NEG_INFINITY,
                },
                nonfinite_discarded: nonfinite,
                fallback: true,
            });
        }

        // Softmax weights over elite scores, stabilized by the max.
        let weights: Vec<f64> = elite_idx
            .iter()
            .map(|&i| ((cand_score[i] - best) / cfg.temperature).exp())
            .collect();
        let wsum: f64 = weights.iter().sum();

        // Refit mu/sigma to the weighted elites.
        for t in 0..h {
            for i in 0..m {
                if mask[i] <= S::ZERO {
                    continue;
                }
                let mut mean = 0.0f64;
                for (&idx, &w) in elite_idx.iter().zip(&weights) {
                    mean += w * fetch_action(idx, t)[i].to_f64();
                }
                mean /= wsum;
                let mut var = 0.0f64;
                for (&idx, &w) in elite_idx.iter().zip(&weights) {
                    let d = fetch_action(idx, t)[i].to_f64() - mean;
                    var += w * d * d;
                }
                var /= wsum;
                mu.set(t, i, c::<S>(mean).clamp_to(c(-1.0), c(1.0)));
                sigma.set(t, i, c::<S>(var.sqrt()).clamp_to(lo, hi));
            }
        }
        value_estimate = best;

        // Remember the best sequence seen so far.
        let best_idx = elite_idx[0];
        let best_seq: Vec<Matrix<S>> = (0..h)
            .map(|t| Matrix::repeat_row(fetch_action(best_idx, t), 1))
            .collect();
        incumbent = Some((best_seq, best));

        // Final-iteration elites retained for stochastic selection.
        final_elites = elite_idx
            .iter()
            .zip(&weights)
            .map(|(&idx, &w)| {
                let mut flat = Vec::with_capacity(h * m);
                for t in 0..h {
                    flat.extend_from_slice(fetch_action(idx, t));
                }
                (flat, w / wsum)
            })
            .collect();
    }

    let actions = if req.deterministic {
        mu.clone()
    } else {
        // Sample one elite according to the final weights.
        let u = rng.uniform();
        let mut acc = 0.0;
        let mut chosen = final_elites.len() - 1;
        for (i, (_, w)) in final_elites.iter().enumerate() {
            acc += w;
            if u < acc {
                chosen = i;
                break;
            }
        }
        Matrix::from_vec(h, m, final_elites[chosen].0.clone())?
    };
    Ok(PlanOutput {
        actions,
        state: PlanState {
            mu,
            sigma,
            value_estimate,
        },
        nonfinite_discarded: nonfinite,
        fallback: false,
    })
}

/// Adapter exposing a learned world model to the planner for one task:
/// a fixed instruction embedding, action mask, and discount.
pub struct WorldPlanModel<'a, S> {
    pub model: &'a WorldModel<S>,
    pub store: &'a ParamStore<S>,
    pub lang: Vec<S>,
    pub mask: Vec<S>,
    pub gamma: S,
}

impl<'a, S: Scalar> WorldPlanModel<'a, S> {
    fn lang_rows(&self, n: usize) -> Matrix<S> {
        Matrix::repeat_row(&self.lang, n)
    }
    fn mask_rows(&self, n: usize) -> Matrix<S> {
        Matrix::repeat_row(&self.mask, n)
    }
}

impl<'a, S: Scalar> PlanModel<S> for WorldPlanModel<'a, S> {
    fn action_dim(&self) -> usize {
        self.model.cfg.action_dim
    }
    fn latent_dim(&self) -> usize {
        self.model.cfg.latent_dim
    }
    fn gamma(&self) -> S {
        self.gamma
    }
    fn action_mask(&self) -> &[S] {
        &self.mask
    }
    fn dynamics(&self, z: &Matrix<S>, a: &Matrix<S>) -> Result<Matrix<S>> {
        self.model
            .dynamics_step(self.store, z, a, &self.lang_rows(z.rows()))
    }
    fn reward(&self, z: &Matrix<S>, a: &Matrix<S>) -> Result<Vec<S>> {
        let logits = self
            .model
            .reward_logits(self.store, z, a, &self.lang_rows(z.rows()))?;
        self.model.disc.decode_rows(&logits)
    }
    fn terminal_value(&self, z: &Matrix<S>, rng: &mut Rng) -> Result<Vec<S>> {
        let g = self.lang_rows(z.rows());
        let mask = self.mask_rows(z.rows());
        let a = self.model.policy_mean_action(self.store, z, &g, Some(&mask))?;
        let heads = self.model.draw_subset(rng);
        self.model.min_subset_q(self.store, &heads, z, &a, &g)
    }
    fn policy_stats(&self, z: &Matrix<S>) -> Result<(Matrix<S>, Matrix<S>)> {
        let g = self.lang_rows(z.rows());
        let mask = self.mask_rows(z.rows());
        self.model.policy_stats(self.store, z, &g, Some(&mask))
    }
    fn policy_sample(&self, z: &Matrix<S>, rng: &mut Rng) -> Result<Matrix<S>> {
        let g = self.lang_rows(z.rows());
        let mask = self.mask_rows(z.rows());
        self.model.policy_sample(self.store, z, &g, Some(&mask), rng)
    }
}
