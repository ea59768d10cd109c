//! Dual replay storage: demonstrations are kept forever, online episodes
//! live in a FIFO ring bounded by a transition budget, and every sampled
//! batch draws a fixed share of its segments from the demo store.

use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tasks::TaskSpec;
use crate::world_model::SegmentBatch;
use std::collections::VecDeque;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Source {
    Demo,
    Online,
}

/// One complete episode: T+1 states, T actions, T rewards, padded and
/// mask-zeroed at ingestion.
#[derive(Clone, Debug, PartialEq)]
pub struct EpisodeRecord {
    pub task_id: u32,
    pub state_dim: usize,
    pub action_dim: usize,
    /// (T+1) x state_dim, row-major.
    pub states: Vec<Real>,
    /// T x action_dim, row-major.
    pub actions: Vec<Real>,
    pub rewards: Vec<Real>,
    pub source: Source,
}

impl EpisodeRecord {
    pub fn transitions(&self) -> usize {
        self.rewards.len()
    }

    pub fn state_row(&self, t: usize) -> &[Real] {
        &self.states[t * self.state_dim..(t + 1) * self.state_dim]
    }

    pub fn action_row(&self, t: usize) -> &[Real] {
        &self.actions[t * self.action_dim..(t + 1) * self.action_dim]
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.transitions();
        if t == 0 {
            return Err(NewtError::invalid("episode with no transitions".to_string()));
        }
        if self.states.len() != (t + 1) * self.state_dim {
            return Err(NewtError::dim(format!(
                "episode states: {} values for T={t}, dim {}",
                self.states.len(),
                self.state_dim
            )));
        }
        if self.actions.len() != t * self.action_dim {
            return Err(NewtError::dim("episode actions length".to_string()));
        }
        if self.rewards.iter().any(|r| !r.is_finite()) {
            return Err(NewtError::NonFinite("episode rewards".to_string()));
        }
        Ok(())
    }
}

/// Which store(s) a batch draws from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SampleMix {
    /// ceil(batch/2) demo segments, the rest online.
    DualFiftyFifty,
    DemoOnly,
    OnlineOnly,
}

#[derive(Debug)]
pub struct DualBuffer {
    demo: Vec<EpisodeRecord>,
    online: VecDeque<EpisodeRecord>,
    online_transitions: usize,
    capacity_transitions: usize,
}

impl DualBuffer {
    pub fn new(capacity_transitions: usize) -> Self {
        DualBuffer {
            demo: Vec::new(),
            online: VecDeque::new(),
            online_transitions: 0,
            capacity_transitions,
        }
    }

    pub fn demo_episodes(&self) -> usize {
        self.demo.len()
    }
    pub fn online_episodes(&self) -> usize {
        self.online.len()
    }
    pub fn online_transitions(&self) -> usize {
        self.online_transitions
    }

    /// Demo episodes are never evicted; online episodes evict oldest
    /// whole episodes once the transition budget is exceeded.
    pub fn add_episode(&mut self, ep: EpisodeRecord) -> Result<()> {
        ep.validate()?;
        match ep.source {
            Source::Demo => self.demo.push(ep),
            Source::Online => {
                self.online_transitions += ep.transitions();
                self.online.push_back(ep);
                while self.online_transitions > self.capacity_transitions {
                    match self.online.pop_front() {
                        Some(old) => self.online_transitions -= old.transitions(),
                        None => break,
                    }
                }
            }
        }
        Ok(())
    }

    fn store(&self, source: Source) -> StoreView<'_> {
        match source {
            Source::Demo => StoreView::Demo(&self.demo),
            Source::Online => StoreView::Online(&self.online),
        }
    }

    /// Draws `count` segments of `h` transitions from one store, every
    /// valid (episode, offset) pair equiprobable.
    fn draw_from(
        &self,
        source: Source,
        count: usize,
        h: usize,
        rng: &mut Rng,
    ) -> Result<Vec<(usize, usize)>> {
        let view = self.store(source);
        let weights: Vec<usize> = view
            .iter()
            .map(|ep| ep.transitions().saturating_sub(h - 1))
            .collect();
        let total: usize = weights.iter().sum();
        if total == 0 {
            let which = match source {
                Source::Demo => "demonstration",
                Source::Online => "online",
            };
            return Err(NewtError::State(format!(
                "{which} store has no episode of length >= {h}; collect data or pretrain first"
            )));
        }
        let mut out = Vec::with_capacity(count);
        for _ in 0..count {
            let mut pick = rng.below(total);
            let mut ep_idx = 0;
            for (i, &w) in weights.iter().enumerate() {
                if pick < w {
                    ep_idx = i;
                    break;
                }
                pick -= w;
            }
            out.push((ep_idx, pick));
        }
        Ok(out)
    }

    /// Assembles a segment batch. Language embeddings, discounts, and
    /// action masks come from the task table, indexed by each episode's
    /// task id.
    pub fn sample_segments(
        &self,
        tasks: &[TaskSpec],
        batch: usize,
        h: usize,
        mix: SampleMix,
        rng: &mut Rng,
    ) -> Result<SegmentBatch<Real>> {
        if batch == 0 || h == 0 {
            return Err(NewtError::invalid("batch and h must be >= 1".to_string()));
        }
        let demo_count = match mix {
            SampleMix::DualFiftyFifty => batch.div_ceil(2),
            SampleMix::DemoOnly => batch,
            SampleMix::OnlineOnly => 0,
        };
        let online_count = batch - demo_count;
        let mut picks: Vec<(Source, usize, usize)> = Vec::with_capacity(batch);
        if demo_count > 0 {
            for (ep, off) in self.draw_from(Source::Demo, demo_count, h, rng)? {
                picks.push((Source::Demo, ep, off));
            }
        }
        if online_count > 0 {
            for (ep, off) in self.draw_from(Source::Online, online_count, h, rng)? {
                picks.push((Source::Online, ep, off));
            }
        }

        let lookup = |id: u32| -> Result<&TaskSpec> {
            tasks
                .iter()
                .find(|t| t.task_id == id)
                .ok_or_else(|| NewtError::State(format!("no task spec for id {id}")))
        };
        let first = match picks.first() {
            Some(&(src, ep, _)) => self.episode(src, ep),
            None => return Err(NewtError::invalid("empty batch".to_string())),
        };
        let state_dim = first.state_dim;
        let action_dim = first.action_dim;
        let lang_dim = lookup(first.task_id)?.lang_embedding.len();

        let mut states: Vec<Matrix<Real>> = (0..=h).map(|_| Matrix::zeros(batch, state_dim)).collect();
        let mut actions: Vec<Matrix<Real>> = (0..h).map(|_| Matrix::zeros(batch, action_dim)).collect();
        let mut rewards: Vec<Vec<Real>> = vec![vec![0.0; batch]; h];
        let mut lang = Matrix::zeros(batch, lang_dim);
        let mut gammas = Vec::with_capacity(batch);
        let mut task_ids = Vec::with_capacity(batch);
        let mut is_demo = Vec::with_capacity(batch);
        let mut action_mask = Matrix::zeros(batch, action_dim);

        for (row, &(src, ep_idx, offset)) in picks.iter().enumerate() {
            let ep = self.episode(src, ep_idx);
            let spec = lookup(ep.task_id)?;
            for t in 0..=h {
                states[t].row_mut(row).copy_from_slice(ep.state_row(offset + t));
            }
            for t in 0..h {
                actions[t].row_mut(row).copy_from_slice(ep.action_row(offset + t));
                rewards[t][row] = ep.rewards[offset + t];
            }
            lang.row_mut(row).copy_from_slice(&spec.lang_embedding);
            action_mask
                .row_mut(row)
                .copy_from_slice(&spec.action_mask_real());
            gammas.push(spec.gamma as Real);
            task_ids.push(ep.task_id);
            is_demo.push(src == Source::Demo);
        }
        Ok(SegmentBatch {
            states,
            img: None,
            lang,
            actions,
            rewards,
            gammas,
            task_ids,
            is_demo,
            action_mask,
        })
    }

    fn episode(&self, source: Source, idx: usize) -> &EpisodeRecord {
        match source {
            Source::Demo => &self.demo[idx],
            Source::Online => &self.online[idx],
        }
    }

    pub fn demo_iter(&self) -> impl Iterator<Item = &EpisodeRecord> {
        self.demo.iter()
    }
}

enum StoreView<'a> {
    Demo(&'a Vec<EpisodeRecord>),
    Online(&'a VecDeque<EpisodeRecord>),
}

impl<'a> StoreView<'a> {
    fn iter(&self) -> Box<dyn Iterator<Item = &EpisodeRecord> + '_> {
        match self {
            StoreView::Demo(v) => Box::new(v.iter()),
            StoreView::Online(v) => Box::new(v.iter()),
        }
    }
}
