use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::nn::{FinalActivation, Mlp, MlpTape, ParamStore};
use crate::rng::Rng;
use crate::scalar::{c, Scalar};
use crate::world_model::config::WorldModelConfig;
use crate::discretizer::DiscretizerSpec;

/// The learnable components and their wiring. Parameters live in a
/// `ParamStore`; the target Q ensemble is a separate store holding EMA
/// copies of the `q{i}.*` entries so its gradients can never mix with
/// the online network's.
pub struct WorldModel<S> {
    pub cfg: WorldModelConfig,
    pub encoder: Mlp,
    pub dynamics: Mlp,
    pub reward: Mlp,
    pub qs: Vec<Mlp>,
    pub policy: Mlp,
    pub disc: DiscretizerSpec<S>,
}

impl<S: Scalar> WorldModel<S> {
    pub fn new(cfg: WorldModelConfig) -> Result<Self> {
        cfg.validate()?;
        let mut enc_widths = vec![cfg.encoder_input_dim()];
        for _ in 0..cfg.encoder_layers.saturating_sub(1) {
            enc_widths.push(cfg.mlp_dim);
        }
        enc_widths.push(cfg.latent_dim);
        let encoder = Mlp::new("h", &enc_widths, FinalActivation::Simplicial(cfg.simplicial_v))?;

        let head_widths = |input: usize, output: usize| -> Vec<usize> {
            let mut w = vec![input];
            for _ in 0..cfg.head_layers - 1 {
                w.push(cfg.mlp_dim);
            }
            w.push(output);
            w
        };
        let dyn_in = cfg.latent_dim + cfg.action_dim + cfg.lang_dim;
        let dynamics = Mlp::new(
            "d",
            &head_widths(dyn_in, cfg.latent_dim),
            FinalActivation::Simplicial(cfg.simplicial_v),
        )?;

        let head_in = cfg.latent_dim + cfg.action_dim + cfg.lang_dim;
        let reward = Mlp::new(
            "r",
            &head_widths(head_in, cfg.num_bins),
            FinalActivation::Linear,
        )?;

        let qs = (0..cfg.q_ensemble)
            .map(|i| {
                Mlp::new(
                    format!("q{i}"),
                    &head_widths(head_in, cfg.num_bins),
                    FinalActivation::Linear,
                )
            })
            .collect::<Result<Vec<_>>>()?;

        let pol_in = cfg.latent_dim + cfg.lang_dim;
        let policy = Mlp::new(
            "p",
            &head_widths(pol_in, 2 * cfg.action_dim),
            FinalActivation::GaussianHead,
        )?;

        let disc = DiscretizerSpec::new(cfg.num_bins, c(cfg.bin_vmin), c(cfg.bin_vmax))?;
        Ok(WorldModel {
            cfg,
            encoder,
            dynamics,
            reward,
            qs,
            policy,
            disc,
        })
    }

    /// Initializes the online parameter store. Encoder entries carry the
    /// slower per-entry learning rate once `tag_encoder_lr` is applied.
    pub fn init_params(&self, rng: &mut Rng) -> ParamStore<S> {
        let mut store = ParamStore::new();
        self.encoder.init_params(&mut store, rng);
        self.dynamics.init_params(&mut store, rng);
        self.reward.init_params(&mut store, rng);
        for q in &self.qs {
            q.init_params(&mut store, rng);
        }
        self.policy.init_params(&mut store, rng);
        store
    }

    /// Marks every encoder entry with its own learning rate.
    pub fn tag_encoder_lr(&self, store: &mut ParamStore<S>, lr: S) {
        let names = self.encoder.param_names();
        for name in names {
            if let Ok(e) = store.get_mut(&name) {
                e.lr_override = Some(lr);
            }
        }
    }

    /// Fresh target store holding copies of the Q ensemble parameters.
    pub fn init_target(&self, store: &ParamStore<S>) -> Result<ParamStore<S>> {
        let mut tgt = ParamStore::new();
        for q in &self.qs {
            for name in q.param_names() {
                tgt.insert(name.clone(), store.values(&name)?.clone());
            }
        }
        Ok(tgt)
    }

    fn check_cols(&self, m: &Matrix<S>, want: usize, what: &str) -> Result<()> {
        if m.cols() != want {
            return Err(NewtError::dim(format!(
                "{what}: got {} columns, expected {want}",
                m.cols()
            )));
        }
        Ok(())
    }

    fn encoder_input(
        &self,
        s_state: &Matrix<S>,
        img: Option<&Matrix<S>>,
        g: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        self.check_cols(s_state, self.cfg.state_dim, "encode state")?;
        self.check_cols(g, self.cfg.lang_dim, "encode language")?;
        match (self.cfg.img_dim, img) {
            (Some(d), Some(x)) => {
                self.check_cols(x, d, "encode image")?;
                Matrix::concat_cols(&[s_state, x, g])
            }
            (None, None) => Matrix::concat_cols(&[s_state, g]),
            (Some(_), None) => Err(NewtError::dim(
                "model configured with an image pathway but none provided".to_string(),
            )),
            (None, Some(_)) => Err(NewtError::dim(
                "image provided but the model has no image pathway".to_string(),
            )),
        }
    }

    /// z = h([s_state, img?, g]); rows are batch elements.
    pub fn encode(
        &self,
        store: &ParamStore<S>,
        s_state: &Matrix<S>,
        img: Option<&Matrix<S>>,
        g: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        let input = self.encoder_input(s_state, img, g)?;
        self.encoder.forward(store, &input)
    }

    pub fn encode_tape(
        &self,
        store: &ParamStore<S>,
        s_state: &Matrix<S>,
        img: Option<&Matrix<S>>,
        g: &Matrix<S>,
    ) -> Result<(Matrix<S>, MlpTape<S>)> {
        let input = self.encoder_input(s_state, img, g)?;
        self.encoder.forward_tape(store, &input)
    }

    /// z' = d([z, a, g]).
    pub fn dynamics_step(
        &self,
        store: &ParamStore<S>,
        z: &Matrix<S>,
        a: &Matrix<S>,
        g: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        self.check_cols(z, self.cfg.latent_dim, "dynamics latent")?;
        self.check_cols(a, self.cfg.action_dim, "dynamics action")?;
        let input = Matrix::concat_cols(&[z, a, g])?;
        self.dynamics.forward(store, &input)
    }

    pub fn dynamics_step_tape(
        &self,
        store: &ParamStore<S>,
        z: &Matrix<S>,
        a: &Matrix<S>,
        g: &Matrix<S>,
    ) -> Result<(Matrix<S>, MlpTape<S>)> {
        let input = Matrix::concat_cols(&[z, a, g])?;
        self.dynamics.forward_tape(store, &input)
    }

    /// Reward logits for (z, a, g).
    pub fn reward_logits(
        &self,
        store: &ParamStore<S>,
        z: &Matrix<S>,
        a: &Matrix<S>,
        g: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        let input = Matrix::concat_cols(&[z, a, g])?;
        self.reward.forward(store, &input)
    }

    /// Q-head logits for (z, a, g) from one ensemble member.
    pub fn q_logits(
        &self,
        store: &ParamStore<S>,
        head: usize,
        z: &Matrix<S>,
        a: &Matrix<S>,
        g: &Matrix<S>,
    ) -> Result<Matrix<S>> {
        let input = Matrix::concat_cols(&[z, a, g])?;
        self.qs[head].forward(store, &input)
    }

    /// Draws `q_subset` distinct head indices.
    pub fn draw_subset(&self, rng: &mut Rng) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..self.cfg.q_ensemble).collect();
        let mut picked = Vec::with_capacity(self.cfg.q_subset);
        for _ in 0..self.cfg.q_subset {
            let i = rng.below(pool.len());
            picked.push(pool.swap_remove(i));
        }
        picked
    }

    /// Decoded min-of-subset Q value per batch row, evaluated with the
    /// given store (online or target).
    pub fn min_subset_q(
        &self,
        store: &ParamStore<S>,
        heads: &[usize],
        z: &Matrix<S>,
        a: &Matrix<S>,
        g: &Matrix<S>,
    ) -> Result<Vec<S>> {
        let input = Matrix::concat_cols(&[z, a, g])?;
        let mut best: Option<Vec<S>> = None;
        for &h in heads {
            let logits = self.qs[h].forward(store, &input)?;
            let vals = self.disc.decode_rows(&logits)?;
            best = Some(match best {
                None => vals,
                Some(prev) => prev
                    .into_iter()
                    .zip(vals)
                    .map(|(p, v)| p.minv(v))
                    .collect(),
            });
        }
        Ok(best.expect("at least one head"))
    }

    /// One-step TD targets: r + gamma * min-subset Q_tgt(z', p(z'), g),
    /// computed entirely without tapes so no gradient can flow anywhere.
    #[allow(clippy::too_many_arguments)]
    pub fn td_target(
        &self,
        store: &ParamStore<S>,
        target_store: &ParamStore<S>,
        rewards: &[S],
        gammas: &[S],
        z_next: &Matrix<S>,
        g: &Matrix<S>,
        action_mask: Option<&Matrix<S>>,
        rng: &mut Rng,
    ) -> Result<Vec<S>> {
        if rewards.len() != z_next.rows() || gammas.len() != z_next.rows() {
            return Err(NewtError::dim("td_target batch mismatch".to_string()));
        }
        let pol = self.policy_mean_action(store, z_next, g, action_mask)?;
        let heads = self.draw_subset(rng);
        let q = self.min_subset_q(target_store, &heads, z_next, &pol, g)?;
        Ok(rewards
            .iter()
            .zip(gammas)
            .zip(q)
            .map(|((&r, &gamma), qv)| r + gamma * qv)
            .collect())
    }

    /// Number of learnable scalars in a fresh store.
    pub fn num_params(&self) -> usize {
        let mut rng = Rng::seed_from(0);
        self.init_params(&mut rng).num_scalars()
    }
}
