use crate::discretizer::ce_loss_rows;
use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::nn::ParamStore;
use crate::rng::Rng;
use crate::scalar::{c, Scalar};
use crate::world_model::batch::SegmentBatch;
use crate::world_model::model::WorldModel;
use serde::{Deserialize, Serialize};

/// Quantities computed on the no-gradient target branch: embeddings of
/// the true next observations and the one-step TD targets bootstrapped
/// from them. Holding these fixed while differentiating the rest is what
/// realizes the stop-gradient.
pub struct ModelTargets<S> {
    /// e_{t+1} = h(s_{t+1}) for t = 0..H-1.
    pub next_embeddings: Vec<Matrix<S>>,
    /// td[t][row] = r_t + gamma * min-subset Q_tgt(e_{t+1}, p(e_{t+1})).
    pub td: Vec<Vec<S>>,
}

pub struct ModelLossOutput<S> {
    pub loss: S,
    pub self_pred: S,
    pub reward_ce: S,
    pub value_ce: S,
    /// Online-branch rollout latents z_0..z_H; the policy objective
    /// consumes them as constants.
    pub latents: Vec<Matrix<S>>,
}

pub struct PolicyLossOutput<S> {
    pub loss: S,
    pub bc: S,
    pub q_term: S,
    pub entropy_term: S,
    /// 5th/95th percentiles of the decoded Q values seen this update,
    /// for the caller's running normalization scale.
    pub batch_p5: f64,
    pub batch_p95: f64,
}

/// EMA of the (5%, 95%) percentile spread of decoded Q values. The policy
/// objective divides its Q and entropy terms by `scale()` so their
/// magnitudes stay comparable across tasks and training stages.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct RunningScale {
    pub p5: f64,
    pub p95: f64,
    pub initialized: bool,
    pub decay: f64,
}

impl Default for RunningScale {
    fn default() -> Self {
        RunningScale {
            p5: 0.0,
            p95: 0.0,
            initialized: false,
            decay: 0.99,
        }
    }
}

impl RunningScale {
    pub fn update(&mut self, p5: f64, p95: f64) {
        if !self.initialized {
            self.p5 = p5;
            self.p95 = p95;
            self.initialized = true;
        } else {
            self.p5 = self.decay * self.p5 + (1.0 - self.decay) * p5;
            self.p95 = self.decay * self.p95 + (1.0 - self.decay) * p95;
        }
    }

    pub fn scale(&self) -> f64 {
        if !self.initialized {
            return 1.0;
        }
        (self.p95 - self.p5).max(1e-3)
    }
}

/// Linear-interpolated percentile of an unsorted sample.
pub fn percentile(values: &mut [f64], q: f64) -> f64 {
    debug_assert!(!values.is_empty());
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite values"));
    let pos = q * (values.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    values[lo] * (1.0 - frac) + values[hi] * frac
}

impl<S: Scalar> WorldModel<S> {
    pub(crate) fn lambda_weight(&self, t: usize) -> S {
        // lambda^t, normalized by the number of summed steps so losses
        // stay comparable across horizon settings.
        c::<S>(self.cfg.lambda.powi(t as i32) / self.cfg.horizon as f64)
    }

    fn two_hot_rows(&self, values: &[S]) -> Matrix<S> {
        let mut out = Matrix::zeros(values.len(), self.cfg.num_bins);
        for (r, &v) in values.iter().enumerate() {
            self.disc.two_hot_into(v, out.row_mut(r));
        }
        out
    }

    /// Target-branch pass: encodes every next observation and bootstraps
    /// TD targets through the EMA Q ensemble. No tapes are recorded, so
    /// nothing here can receive gradient.
    pub fn compute_model_targets(
        &self,
        store: &ParamStore<S>,
        target_store: &ParamStore<S>,
        batch: &SegmentBatch<S>,
        rng: &mut Rng,
    ) -> Result<ModelTargets<S>> {
        batch.validate()?;
        let h = batch.horizon();
        let mut next_embeddings = Vec::with_capacity(h);
        let mut td = Vec::with_capacity(h);
        for t in 0..h {
            let e_next = self.encode(store, &batch.states[t + 1], batch.img_at(t + 1), &batch.lang)?;
            let targets = self.td_target(
                store,
                target_store,
                &batch.rewards[t],
                &batch.gammas,
                &e_next,
                &batch.lang,
                Some(&batch.action_mask),
                rng,
            )?;
            next_embeddings.push(e_next);
            td.push(targets);
        }
        Ok(ModelTargets {
            next_embeddings,
            td,
        })
    }

    /// Differentiable part of the model objective, with the target branch
    /// supplied as constants. Accumulates gradients for encoder,
    /// dynamics, reward head, and the online Q ensemble.
    pub fn model_loss_given_targets(
        &self,
        store: &mut ParamStore<S>,
        batch: &SegmentBatch<S>,
        targets: &ModelTargets<S>,
    ) -> Result<ModelLossOutput<S>> {
        batch.validate()?;
        let h = batch.horizon();
        let b = batch.batch_size();
        let latent = self.cfg.latent_dim;
        if targets.next_embeddings.len() != h || targets.td.len() != h {
            return Err(NewtError::dim("model targets horizon mismatch".to_string()));
        }

        // Forward rollout with tapes.
        let (z0, enc_tape) = self.encode_tape(store, &batch.states[0], batch.img_at(0), &batch.lang)?;
        let mut zs = vec![z0];
        let mut dyn_tapes = Vec::with_capacity(h);
        for t in 0..h {
            let (z_next, tape) =
                self.dynamics_step_tape(store, &zs[t], &batch.actions[t], &batch.lang)?;
            zs.push(z_next);
            dyn_tapes.push(tape);
        }

        let mut dz: Vec<Matrix<S>> = (0..=h).map(|_| Matrix::zeros(b, latent)).collect();
        let mut self_pred = S::ZERO;
        let mut reward_ce = S::ZERO;
        let mut value_ce = S::ZERO;

        let widths = [latent, self.cfg.action_dim, self.cfg.lang_dim];
        for t in 0..h {
            let w_t = self.lambda_weight(t);

            // Self-prediction toward the frozen next-state embedding.
            let e = &targets.next_embeddings[t];
            let mut mse = S::ZERO;
            let scale = c::<S>(2.0) * self.coef_self_pred() * w_t / c::<S>((b * latent) as f64);
            {
                let dzn = &mut dz[t + 1];
                for r in 0..b {
                    let zr = zs[t + 1].row(r);
                    let er = e.row(r);
                    let dr = dzn.row_mut(r);
                    for i in 0..latent {
                        let diff = zr[i] - er[i];
                        mse += diff * diff;
                        dr[i] += scale * diff;
                    }
                }
            }
            mse /= c::<S>((b * latent) as f64);
            self_pred += self.coef_self_pred() * w_t * mse;

            // Reward cross-entropy on the rollout latent. The reward head
            // and the Q ensemble share the same (z, a, g) input.
            let head_in = Matrix::concat_cols(&[&zs[t], &batch.actions[t], &batch.lang])?;
            let (rlogits, rtape) = self.reward.forward_tape(store, &head_in)?;
            let rtargets = self.two_hot_rows(&batch.rewards[t]);
            let (rce, mut dr_logits) = ce_loss_rows(&rlogits, &rtargets)?;
            reward_ce += self.coef_reward() * w_t * rce;
            dr_logits.scale(self.coef_reward() * w_t);
            let din = self.reward.backward(store, &rtape, &dr_logits)?;
            dz[t].add_assign(&din.split_cols(&widths)?[0])?;

            // Value cross-entropy: every online head regresses the shared
            // TD target; averaged over the ensemble.
            let vtargets = self.two_hot_rows(&targets.td[t]);
            let head_scale = c::<S>(1.0 / self.cfg.q_ensemble as f64);
            for q in &self.qs {
                let (qlogits, qtape) = q.forward_tape(store, &head_in)?;
                let (qce, mut dq_logits) = ce_loss_rows(&qlogits, &vtargets)?;
                value_ce += self.coef_value() * w_t * qce * head_scale;
                dq_logits.scale(self.coef_value() * w_t * head_scale);
                let din = q.backward(store, &qtape, &dq_logits)?;
                dz[t].add_assign(&din.split_cols(&widths)?[0])?;
            }
        }

        // Backward through the rollout.
        for t in (0..h).rev() {
            let upstream = dz[t + 1].clone();
            let din = self.dynamics.backward(store, &dyn_tapes[t], &upstream)?;
            dz[t].add_assign(&din.split_cols(&widths)?[0])?;
        }
        self.encoder.backward(store, &enc_tape, &dz[0])?;

        let loss = self_pred + reward_ce + value_ce;
        if !loss.is_finite() {
            let term = if !self_pred.is_finite() {
                "self-prediction"
            } else if !reward_ce.is_finite() {
                "reward cross-entropy"
            } else {
                "value cross-entropy"
            };
            return Err(NewtError::NonFinite(format!("model loss ({term} term)")));
        }
        Ok(ModelLossOutput {
            loss,
            self_pred,
            reward_ce,
            value_ce,
            latents: zs,
        })
    }

    /// Full model objective: target branch plus differentiable branch.
    pub fn model_loss(
        &self,
        store: &mut ParamStore<S>,
        target_store: &ParamStore<S>,
        batch: &SegmentBatch<S>,
        rng: &mut Rng,
    ) -> Result<ModelLossOutput<S>> {
        let targets = self.compute_model_targets(store, target_store, batch, rng)?;
        self.model_loss_given_targets(store, batch, &targets)
    }

    /// Policy objective along fixed rollout latents. Gradients flow into
    /// the policy head only: the Q ensemble and dynamics participate as
    /// constant functions, back-propagated through their inputs alone.
    ///
    /// `scale` is the caller's running percentile spread; `q_weight`
    /// multiplies the Q-value term (0 during pretraining).
    #[allow(clippy::too_many_arguments)]
    pub fn policy_loss(
        &self,
        store: &mut ParamStore<S>,
        latents: &[Matrix<S>],
        batch: &SegmentBatch<S>,
        scale: f64,
        q_weight: S,
        rng: &mut Rng,
    ) -> Result<PolicyLossOutput<S>> {
        batch.validate()?;
        let h = batch.horizon();
        let b = batch.batch_size();
        let m = self.cfg.action_dim;
        if latents.len() < h {
            return Err(NewtError::dim("policy loss: missing latents".to_string()));
        }
        let inv_scale = c::<S>(1.0 / scale);
        let inv_b = c::<S>(1.0 / b as f64);
        let mask = &batch.action_mask;

        let mut bc_total = S::ZERO;
        let mut q_total = S::ZERO;
        let mut ent_total = S::ZERO;
        let mut q_values_seen: Vec<f64> = Vec::with_capacity(b * h);

        for t in 0..h {
            let w_t = self.lambda_weight(t);
            let z = &latents[t];
            let noise_data: Vec<S> = (0..b * m).map(|_| c(rng.normal())).collect();
            let noise = Matrix::from_vec(b, m, noise_data)?;
            let pol = self.policy_forward(store, z, &batch.lang, &noise, Some(mask))?;

            let mut dmean = Matrix::zeros(b, m);
            let mut dlog_std = Matrix::zeros(b, m);

            // Behavior cloning on the squashed mean, averaged over valid
            // dims so every row contributes equally regardless of its
            // native action width.
            let coef_bc = self.coef_bc();
            for r in 0..b {
                let n_valid: f64 = (0..m).map(|i| mask.get(r, i).to_f64()).sum();
                if n_valid == 0.0 {
                    continue;
                }
                let inv_valid = c::<S>(1.0 / n_valid);
                for i in 0..m {
                    if mask.get(r, i) <= S::ZERO {
                        continue;
                    }
                    let tm = pol.mean.get(r, i).tanh();
                    let diff = tm - batch.actions[t].get(r, i);
                    bc_total += coef_bc * w_t * inv_b * inv_valid * diff * diff;
                    let g = coef_bc * w_t * inv_b * inv_valid * c::<S>(2.0) * diff
                        * (S::ONE - tm * tm);
                    dmean.set(r, i, dmean.get(r, i) + g);
                }
            }

            // Q-value term on one sampled action, min over a random head
            // subset, divided by the running scale.
            if q_weight != S::ZERO {
                let heads = self.draw_subset(rng);
                let qin = Matrix::concat_cols(&[z, &pol.action, &batch.lang])?;
                let mut head_logits = Vec::with_capacity(heads.len());
                let mut head_tapes = Vec::with_capacity(heads.len());
                let mut head_vals = Vec::with_capacity(heads.len());
                for &hd in &heads {
                    let (logits, tape) = self.qs[hd].forward_tape(store, &qin)?;
                    let vals = self.disc.decode_rows(&logits)?;
                    head_logits.push(logits);
                    head_tapes.push(tape);
                    head_vals.push(vals);
                }
                let mut winner = vec![0usize; b];
                let mut qmin = vec![S::ZERO; b];
                for r in 0..b {
                    let mut best = head_vals[0][r];
                    let mut best_i = 0;
                    for (i, vals) in head_vals.iter().enumerate().skip(1) {
                        if vals[r] < best {
                            best = vals[r];
                            best_i = i;
                        }
                    }
                    winner[r] = best_i;
                    qmin[r] = best;
                    q_values_seen.push(best.to_f64());
                }
                let dval = -q_weight * w_t * inv_b * inv_scale;
                for r in 0..b {
                    q_total += -q_weight * w_t * inv_b * inv_scale * qmin[r];
                }
                let mut da = Matrix::zeros(b, m);
                let widths = [self.cfg.latent_dim, m, self.cfg.lang_dim];
                for (i, &hd) in heads.iter().enumerate() {
                    let mut dlogits = Matrix::zeros(b, self.cfg.num_bins);
                    let mut any = false;
                    for r in 0..b {
                        if winner[r] == i {
                            let g = self.disc.decode_backward_row(head_logits[i].row(r), dval);
                            dlogits.row_mut(r).copy_from_slice(&g);
                            any = true;
                        }
                    }
                    if any {
                        let din = self.qs[hd].backward_input_only(store, &head_tapes[i], &dlogits)?;
                        da.add_assign(&din.split_cols(&widths)?[1])?;
                    }
                }
                // Through the reparameterized sample a = tanh(mean + std*eps).
                for r in 0..b {
                    for i in 0..m {
                        if mask.get(r, i) <= S::ZERO {
                            continue;
                        }
                        let u = pol.pre_tanh.get(r, i);
                        let th = u.tanh();
                        let du = da.get(r, i) * (S::ONE - th * th);
                        dmean.set(r, i, dmean.get(r, i) + du);
                        let std_eps = pol.log_std.get(r, i).exp() * pol.noise.get(r, i);
                        dlog_std.set(r, i, dlog_std.get(r, i) + du * std_eps);
                    }
                }
            }

            // Entropy bonus via the single-sample estimate -log p(a).
            let k = self.coef_entropy() * w_t * inv_b * inv_scale;
            for r in 0..b {
                ent_total += k * pol.log_prob[r];
                for i in 0..m {
                    if mask.get(r, i) <= S::ZERO {
                        continue;
                    }
                    let th = pol.pre_tanh.get(r, i).tanh();
                    dmean.set(r, i, dmean.get(r, i) + k * c::<S>(2.0) * th);
                    let std_eps = pol.log_std.get(r, i).exp() * pol.noise.get(r, i);
                    dlog_std.set(
                        r,
                        i,
                        dlog_std.get(r, i) + k * (c::<S>(2.0) * th * std_eps - S::ONE),
                    );
                }
            }

            // Clamped log-std passes gradient only inside the bounds.
            for idx in 0..dlog_std.data().len() {
                let pass = pol.log_std_pass.data()[idx];
                dlog_std.data_mut()[idx] *= pass;
            }
            let dout = Matrix::concat_cols(&[&dmean, &dlog_std])?;
            self.policy.backward(store, &pol.tape, &dout)?;
        }

        let loss = bc_total + q_total + ent_total;
        if !loss.is_finite() {
            let term = if !bc_total.is_finite() {
                "behavior cloning"
            } else if !q_total.is_finite() {
                "Q value"
            } else {
                "entropy"
            };
            return Err(NewtError::NonFinite(format!("policy loss ({term} term)")));
        }
        let (batch_p5, batch_p95) = if q_values_seen.is_empty() {
            (0.0, 0.0)
        } else {
            let p5 = percentile(&mut q_values_seen, 0.05);
            let p95 = percentile(&mut q_values_seen, 0.95);
            (p5, p95)
        };
        Ok(PolicyLossOutput {
            loss,
            bc: bc_total,
            q_term: q_total,
            entropy_term: ent_total,
            batch_p5,
            batch_p95,
        })
    }

    /// Pretraining objective: the model objective plus the policy
    /// objective with its Q-value term disabled, on demo-only batches.
    /// Every component still receives gradient (the Q heads train through
    /// the value term of the model objective).
    pub fn pretrain_loss(
        &self,
        store: &mut ParamStore<S>,
        target_store: &ParamStore<S>,
        batch: &SegmentBatch<S>,
        scale: f64,
        rng: &mut Rng,
    ) -> Result<(ModelLossOutput<S>, PolicyLossOutput<S>)> {
        let model_out = self.model_loss(store, target_store, batch, rng)?;
        let policy_out =
            self.policy_loss(store, &model_out.latents, batch, scale, S::ZERO, rng)?;
        Ok((model_out, policy_out))
    }

    /// Behavior-cloning objective through encoder and policy only: each
    /// (s_t, a_t) pair is an independent regression sample; padding dims
    /// contribute nothing.
    pub fn bc_loss(&self, store: &mut ParamStore<S>, batch: &SegmentBatch<S>) -> Result<S> {
        batch.validate()?;
        let h = batch.horizon();
        let b = batch.batch_size();
        let m = self.cfg.action_dim;
        let mask = &batch.action_mask;
        let inv_n = c::<S>(1.0 / (b * h) as f64);
        let mut total = S::ZERO;
        for t in 0..h {
            let (z, enc_tape) =
                self.encode_tape(store, &batch.states[t], batch.img_at(t), &batch.lang)?;
            let pin = Matrix::concat_cols(&[&z, &batch.lang])?;
            let (pout, ptape) = self.policy.forward_tape(store, &pin)?;
            let mut dout = Matrix::zeros(b, 2 * m);
            for r in 0..b {
                let n_valid: f64 = (0..m).map(|i| mask.get(r, i).to_f64()).sum();
                if n_valid == 0.0 {
                    continue;
                }
                let inv_valid = c::<S>(1.0 / n_valid);
                for i in 0..m {
                    if mask.get(r, i) <= S::ZERO {
                        continue;
                    }
                    let tm = pout.get(r, i).tanh();
                    let diff = tm - batch.actions[t].get(r, i);
                    total += inv_n * inv_valid * diff * diff;
                    let g = inv_n * inv_valid * c::<S>(2.0) * diff * (S::ONE - tm * tm);
                    dout.set(r, i, g);
                }
            }
            let din = self.policy.backward(store, &ptape, &dout)?;
            let widths = [self.cfg.latent_dim, self.cfg.lang_dim];
            let dz = din.split_cols(&widths)?[0].clone();
            self.encoder.backward(store, &enc_tape, &dz)?;
        }
        if !total.is_finite() {
            return Err(NewtError::NonFinite("behavior cloning loss".to_string()));
        }
        Ok(total)
    }

    fn coef_self_pred(&self) -> S {
        c(self.cfg.coef_self_pred)
    }
    fn coef_reward(&self) -> S {
        c(self.cfg.coef_reward)
    }
    fn coef_value(&self) -> S {
        c(self.cfg.coef_value)
    }
    fn coef_bc(&self) -> S {
        c(self.cfg.coef_bc)
    }
    fn coef_entropy(&self) -> S {
        c(self.cfg.coef_entropy)
    }
}
