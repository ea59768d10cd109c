use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::nn::MlpTape;
use crate::nn::ParamStore;
use crate::rng::Rng;
use crate::scalar::{c, Scalar};
use crate::world_model::model::WorldModel;

/// Everything produced by one stochastic policy evaluation. Kept around
/// so the policy objective can push gradients back through the
/// reparameterized sample without re-running the network.
pub struct PolicyOutput<S> {
    /// Raw (pre-tanh) mean, [batch x action_dim].
    pub mean: Matrix<S>,
    /// Clamped log standard deviation.
    pub log_std: Matrix<S>,
    /// 1 where the raw log-std was inside the clamp bounds (gradient
    /// passes), 0 where it was clamped.
    pub log_std_pass: Matrix<S>,
    /// Pre-tanh sample u = mean + std * noise.
    pub pre_tanh: Matrix<S>,
    /// tanh(u) with masked dims zeroed.
    pub action: Matrix<S>,
    /// The noise that generated the sample.
    pub noise: Matrix<S>,
    /// Per-row log-density of the sampled action (tanh-corrected, over
    /// valid dims only).
    pub log_prob: Vec<S>,
    pub tape: MlpTape<S>,
}

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[inline]
fn softplus<S: Scalar>(x: S) -> S {
    if x > c(30.0) {
        x
    } else if x < c(-30.0) {
        x.exp()
    } else {
        x.exp().ln_1p()
    }
}

/// log(1 - tanh(u)^2) in a form stable for large |u|.
#[inline]
fn log_one_minus_tanh_sq<S: Scalar>(u: S) -> S {
    c::<S>(2.0) * (c::<S>(std::f64::consts::LN_2) - u - softplus(c::<S>(-2.0) * u))
}

impl<S: Scalar> WorldModel<S> {
    fn policy_raw(
        &self,
        store: &ParamStore<S>,
        z: &Matrix<S>,
        g: &Matrix<S>,
    ) -> Result<(Matrix<S>, Matrix<S>, Matrix<S>, MlpTape<S>)> {
        let input = Matrix::concat_cols(&[z, g])?;
        let (out, tape) = self.policy.forward_tape(store, &input)?;
        let m = self.cfg.action_dim;
        let parts = out.split_cols(&[m, m])?;
        let mean = parts[0].clone();
        let log_std_raw = parts[1].clone();
        Ok((mean, log_std_raw, out, tape))
    }

    fn clamp_log_std(&self, raw: &Matrix<S>) -> (Matrix<S>, Matrix<S>) {
        let lo = c::<S>(self.cfg.log_std_min);
        let hi = c::<S>(self.cfg.log_std_max);
        let mut clamped = raw.clone();
        let mut pass = Matrix::zeros(raw.rows(), raw.cols());
        for i in 0..raw.data().len() {
            let v = raw.data()[i];
            if v < lo {
                clamped.data_mut()[i] = lo;
            } else if v > hi {
                clamped.data_mut()[i] = hi;
            } else {
                pass.data_mut()[i] = S::ONE;
            }
        }
        (clamped, pass)
    }

    /// Stochastic policy evaluation with explicit noise. Masked action
    /// dimensions produce exactly zero and are excluded from the
    /// log-density.
    pub fn policy_forward(
        &self,
        store: &ParamStore<S>,
        z: &Matrix<S>,
        g: &Matrix<S>,
        noise: &Matrix<S>,
        mask: Option<&Matrix<S>>,
    ) -> Result<PolicyOutput<S>> {
        let (mean, log_std_raw, _, tape) = self.policy_raw(store, z, g)?;
        if !noise.same_shape(&mean) {
            return Err(NewtError::dim("policy noise shape".to_string()));
        }
        let (log_std, log_std_pass) = self.clamp_log_std(&log_std_raw);
        let rows = mean.rows();
        let m = self.cfg.action_dim;
        let mut pre_tanh = Matrix::zeros(rows, m);
        let mut action = Matrix::zeros(rows, m);
        let mut log_prob = vec![S::ZERO; rows];
        for r in 0..rows {
            let mut lp = S::ZERO;
            for i in 0..m {
                let valid = mask.map_or(S::ONE, |mk| mk.get(r, i));
                let mu = mean.get(r, i);
                let ls = log_std.get(r, i);
                let eps = noise.get(r, i);
                let u = mu + ls.exp() * eps;
                pre_tanh.set(r, i, u);
                let a = u.tanh();
                if valid > S::ZERO {
                    action.set(r, i, a);
                    lp += -c::<S>(0.5) * eps * eps - ls - c::<S>(HALF_LN_2PI)
                        - log_one_minus_tanh_sq(u);
                }
            }
            log_prob[r] = lp;
        }
        Ok(PolicyOutput {
            mean,
            log_std,
            log_std_pass,
            pre_tanh,
            action,
            noise: noise.clone(),
            log_prob,
            tape,
        })
    }

    /// Deterministic action: tanh(mean), masked dims zeroed.
    pub fn policy_mean_action(
        &self,
        store: &ParamStore<S>,
        z: &Matrix<S>,
        g: &Matrix<S>,
        mask: Option<&Matrix<S>>,
    ) -> Result<Matrix<S>> {
        let input = Matrix::concat_cols(&[z, g])?;
        let out = self.policy.forward(store, &input)?;
        let m = self.cfg.action_dim;
        let mut action = Matrix::zeros(out.rows(), m);
        for r in 0..out.rows() {
            for i in 0..m {
                let valid = mask.map_or(S::ONE, |mk| mk.get(r, i));
                if valid > S::ZERO {
                    action.set(r, i, out.get(r, i).tanh());
                }
            }
        }
        Ok(action)
    }

    /// Squashed mean and std of the policy's action distribution, used by
    /// the planner for warm starts and constrained initialization.
    pub fn policy_stats(
        &self,
        store: &ParamStore<S>,
        z: &Matrix<S>,
        g: &Matrix<S>,
        mask: Option<&Matrix<S>>,
    ) -> Result<(Matrix<S>, Matrix<S>)> {
        let input = Matrix::concat_cols(&[z, g])?;
        let out = self.policy.forward(store, &input)?;
        let m = self.cfg.action_dim;
        let parts = out.split_cols(&[m, m])?;
        let (log_std, _) = self.clamp_log_std(&parts[1]);
        let mut mean_a = Matrix::zeros(out.rows(), m);
        let mut std = Matrix::zeros(out.rows(), m);
        for r in 0..out.rows() {
            for i in 0..m {
                let valid = mask.map_or(S::ONE, |mk| mk.get(r, i));
                if valid > S::ZERO {
                    mean_a.set(r, i, parts[0].get(r, i).tanh());
                    std.set(r, i, log_std.get(r, i).exp());
                }
            }
        }
        Ok((mean_a, std))
    }

    /// One stochastic sample per row, masked dims zeroed.
    pub fn policy_sample(
        &self,
        store: &ParamStore<S>,
        z: &Matrix<S>,
        g: &Matrix<S>,
        mask: Option<&Matrix<S>>,
        rng: &mut Rng,
    ) -> Result<Matrix<S>> {
        let m = self.cfg.action_dim;
        let noise_data: Vec<S> = (0..z.rows() * m).map(|_| c(rng.normal())).collect();
        let noise = Matrix::from_vec(z.rows(), m, noise_data)?;
        let out = self.policy_forward(store, z, g, &noise, mask)?;
        Ok(out.action)
    }

    /// Independent recomputation of the tanh-corrected log-density of an
    /// already-squashed action under (mean, log_std). Test oracle for
    /// `policy_forward`'s log_prob.
    pub fn log_prob_of_action(
        mean: &[S],
        log_std: &[S],
        action: &[S],
        mask: Option<&[S]>,
    ) -> S {
        let mut lp = S::ZERO;
        for i in 0..mean.len() {
            let valid = mask.map_or(S::ONE, |mk| mk[i]);
            if valid <= S::ZERO {
                continue;
            }
            // atanh with clamping away from +-1
            let a = action[i].clamp_to(c(-0.999_999), c(0.999_999));
            let u = c::<S>(0.5) * ((S::ONE + a) / (S::ONE - a)).ln();
            let std = log_std[i].exp();
            let zscore = (u - mean[i]) / std;
            lp += -c::<S>(0.5) * zscore * zscore - log_std[i] - c::<S>(HALF_LN_2PI)
                - (S::ONE - a * a).ln();
        }
        lp
    }
}
