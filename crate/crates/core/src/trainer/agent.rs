use crate::checkpoint::Checkpoint;
use crate::config::TrainConfig;
use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::nn::{adam_step, ema_update, AdamConfig, ParamStore};
use crate::rng::Rng;
use crate::scalar::{c, Real};
use crate::world_model::{RunningScale, SegmentBatch, WorldModel};

/// World model plus optimizer and normalization state; everything a
/// checkpoint must capture to resume bit-exactly.
pub struct Agent {
    pub config: TrainConfig,
    pub model: WorldModel<Real>,
    pub params: ParamStore<Real>,
    pub target: ParamStore<Real>,
    pub scale: RunningScale,
    pub update_rng: Rng,
    pub env_steps: u64,
    /// Total optimizer steps (pretraining included).
    pub updates: u64,
    /// Optimizer steps performed by the online RL loop; the UTD ratio
    /// is accounted against this counter alone.
    pub rl_updates: u64,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct UpdateStats {
    pub model_loss: f64,
    pub policy_loss: f64,
    pub bc_term: f64,
    pub self_pred: f64,
    pub reward_ce: f64,
    pub value_ce: f64,
}

impl Agent {
    /// Fresh agent. RNG streams derive from the master seed in a fixed
    /// order: parameter init first, then the update stream.
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model: WorldModel<Real> = WorldModel::new(config.model.clone())?;
        let mut master = Rng::seed_from(config.seed);
        let mut init_rng = master.split();
        let update_rng = master.split();
        let mut params = model.init_params(&mut init_rng);
        model.tag_encoder_lr(&mut params, c(config.encoder_lr));
        let target = model.init_target(&params)?;
        Ok(Agent {
            config,
            model,
            params,
            target,
            scale: RunningScale::default(),
            update_rng,
            env_steps: 0,
            updates: 0,
            rl_updates: 0,
        })
    }

    fn adam_config(&self) -> AdamConfig<Real> {
        AdamConfig {
            lr: c(self.config.lr),
            clip_norm: c(self.config.clip_norm),
            ..AdamConfig::default()
        }
    }

    /// One RL update: model objective, policy objective, Adam, EMA.
    pub fn update(&mut self, batch: &SegmentBatch<Real>) -> Result<UpdateStats> {
        self.update_inner(batch, 1.0)
    }

    /// One pretraining update: identical except the policy objective's
    /// Q-value term is disabled.
    pub fn pretrain_update(&mut self, batch: &SegmentBatch<Real>) -> Result<UpdateStats> {
        self.update_inner(batch, 0.0)
    }

    fn update_inner(&mut self, batch: &SegmentBatch<Real>, q_weight: f64) -> Result<UpdateStats> {
        let model_out = self
            .model
            .model_loss(&mut self.params, &self.target, batch, &mut self.update_rng)?;
        let policy_out = self.model.policy_loss(
            &mut self.params,
            &model_out.latents,
            batch,
            self.scale.scale(),
            c(q_weight),
            &mut self.update_rng,
        )?;
        if q_weight != 0.0 {
            self.scale.update(policy_out.batch_p5, policy_out.batch_p95);
        }
        let adam = self.adam_config();
        adam_step(&mut self.params, &adam)?;
        ema_update(&mut self.target, &self.params, c(self.config.q_momentum))?;
        self.updates += 1;
        Ok(UpdateStats {
            model_loss: model_out.loss as f64,
            policy_loss: policy_out.loss as f64,
            bc_term: policy_out.bc as f64,
            self_pred: model_out.self_pred as f64,
            reward_ce: model_out.reward_ce as f64,
            value_ce: model_out.value_ce as f64,
        })
    }

    /// One behavior-cloning update (encoder and policy only).
    pub fn bc_update(&mut self, batch: &SegmentBatch<Real>) -> Result<f64> {
        let loss = self.model.bc_loss(&mut self.params, batch)?;
        let adam = self.adam_config();
        adam_step(&mut self.params, &adam)?;
        self.updates += 1;
        Ok(loss as f64)
    }

    fn rng_to_string(rng: &Rng) -> String {
        let s = rng.state();
        format!("{:016x}:{:016x}:{:016x}:{:016x}", s[0], s[1], s[2], s[3])
    }

    fn rng_from_string(text: &str) -> Result<Rng> {
        let parts: Vec<&str> = text.split(':').collect();
        if parts.len() != 4 {
            return Err(NewtError::Format("bad rng state".to_string()));
        }
        let mut state = [0u64; 4];
        for (dst, p) in state.iter_mut().zip(parts) {
            *dst = u64::from_str_radix(p, 16)
                .map_err(|_| NewtError::Format("bad rng state".to_string()))?;
        }
        Ok(Rng::from_state(state))
    }

    /// Full state snapshot: parameters, Adam moments, target ensemble,
    /// normalization scale, RNG state, and counters.
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        ck.set_meta("config_json", self.config.to_json());
        ck.set_meta("env_steps", self.env_steps);
        ck.set_meta("updates", self.updates);
        ck.set_meta("rl_updates", self.rl_updates);
        ck.set_meta("adam_step_count", self.params.step_count);
        ck.set_meta("scale_p5", self.scale.p5);
        ck.set_meta("scale_p95", self.scale.p95);
        ck.set_meta("scale_init", self.scale.initialized);
        ck.set_meta("update_rng", Self::rng_to_string(&self.update_rng));
        for (name, e) in self.params.iter() {
            let (r, cl) = (e.values.rows(), e.values.cols());
            ck.insert_array(&format!("param.{name}"), r, cl, e.values.data().to_vec());
            ck.insert_array(&format!("adam_m.{name}"), r, cl, e.adam_m.data().to_vec());
            ck.insert_array(&format!("adam_v.{name}"), r, cl, e.adam_v.data().to_vec());
        }
        for (name, e) in self.target.iter() {
            let (r, cl) = (e.values.rows(), e.values.cols());
            ck.insert_array(&format!("target.{name}"), r, cl, e.values.data().to_vec());
        }
        ck
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config = TrainConfig::from_json(ck.meta_str("config_json")?)?;
        let mut agent = Agent::new(config)?;
        for (name, e) in agent.params.iter_mut() {
            let load = |arr_name: String, into: &mut Matrix<Real>| -> Result<()> {
                let (r, cl, data) = ck.array(&arr_name)?;
                if r != into.rows() || cl != into.cols() {
                    return Err(NewtError::dim(format!(
                        "checkpoint array '{arr_name}': {r}x{cl} vs {}x{}",
                        into.rows(),
                        into.cols()
                    )));
                }
                into.data_mut().copy_from_slice(data);
                Ok(())
            };
            load(format!("param.{name}"), &mut e.values)?;
            load(format!("adam_m.{name}"), &mut e.adam_m)?;
            load(format!("adam_v.{name}"), &mut e.adam_v)?;
        }
        for (name, e) in agent.target.iter_mut() {
            let (r, cl, data) = ck.array(&format!("target.{name}"))?;
            if r != e.values.rows() || cl != e.values.cols() {
                return Err(NewtError::dim(format!("checkpoint target '{name}' shape")));
            }
            e.values.data_mut().copy_from_slice(data);
        }
        agent.env_steps = ck.meta_u64("env_steps")?;
        agent.updates = ck.meta_u64("updates")?;
        agent.rl_updates = ck.meta_u64("rl_updates")?;
        agent.params.step_count = ck.meta_u64("adam_step_count")?;
        agent.scale.p5 = ck.meta_f64("scale_p5")?;
        agent.scale.p95 = ck.meta_f64("scale_p95")?;
        agent.scale.initialized = ck.meta_str("scale_init")? == "true";
        agent.update_rng = Self::rng_from_string(ck.meta_str("update_rng")?)?;
        Ok(agent)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        self.to_checkpoint().save(path)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Agent::from_checkpoint(&Checkpoint::load(path)?)
    }
}
