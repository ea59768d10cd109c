//! Demonstration dataset container.
//!
//! Layout (all integers little-endian):
//!   magic    8 bytes  "NEWTDEMO"
//!   version  u32      currently 1
//!   tasks    u32 count, then per task: u32 name length, UTF-8 name
//!   episodes u32 count, then per episode:
//!     u32 task index (into the task table)
//!     u32 T (transitions)
//!     u32 state_dim, u32 action_dim (padded dims)
//!     (T+1)*state_dim f32 states, T*action_dim f32 actions, T f32 rewards
//!
//! Floats are raw IEEE-754 little-endian, so a written file re-reads to
//! bit-identical arrays.

use crate::error::{NewtError, Result};
use crate::replay::{EpisodeRecord, Source};
use std::io::{Read, Write};
use std::path::Path;

pub const DEMO_MAGIC: &[u8; 8] = b"NEWTDEMO";
pub const DEMO_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct DemoFile {
    /// Task names; episode records index into this table.
    pub tasks: Vec<String>,
    pub episodes: Vec<EpisodeRecord>,
}

impl DemoFile {
    pub fn new(tasks: Vec<String>) -> Self {
        DemoFile {
            tasks,
            episodes: Vec::new(),
        }
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out: Vec<u8> = Vec::new();
        out.extend_from_slice(DEMO_MAGIC);
        out.extend_from_slice(&DEMO_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tasks.len() as u32).to_le_bytes());
        for name in &self.tasks {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        out.extend_from_slice(&(self.episodes.len() as u32).to_le_bytes());
        for ep in &self.episodes {
            ep.validate()?;
            if ep.task_id as usize >= self.tasks.len() {
                return Err(NewtError::Format(format!(
                    "episode references task index {} outside the table",
                    ep.task_id
                )));
            }
            out.extend_from_slice(&ep.task_id.to_le_bytes());
            out.extend_from_slice(&(ep.transitions() as u32).to_le_bytes());
            out.extend_from_slice(&(ep.state_dim as u32).to_le_bytes());
            out.extend_from_slice(&(ep.action_dim as u32).to_le_bytes());
            for &v in ep.states.iter().chain(&ep.actions).chain(&ep.rewards) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&out)?;
        Ok(())
    }

    pub fn read_from(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        let mut cur = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cur + n > bytes.len() {
                return Err(NewtError::Format("demo file truncated".to_string()));
            }
            let s = &bytes[cur..cur + n];
            cur += n;
            Ok(s)
        };
        let magic = take(8)?;
        if magic != DEMO_MAGIC {
            return Err(NewtError::Format("not a NEWTDEMO file".to_string()));
        }
        let version = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
        if version != DEMO_VERSION {
            return Err(NewtError::Format(format!(
                "unsupported demo file version {version}"
            )));
        }
        let n_tasks = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mut tasks = Vec::with_capacity(n_tasks);
        for _ in 0..n_tasks {
            let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let name = String::from_utf8(take(len)?.to_vec())
                .map_err(|_| NewtError::Format("demo file: bad UTF-8 task name".to_string()))?;
            tasks.push(name);
        }
        let n_eps = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mut episodes = Vec::with_capacity(n_eps);
        for _ in 0..n_eps {
            let task_id = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes"));
            let t = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let state_dim = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let action_dim = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let mut read_f32s = |n: usize| -> Result<Vec<f32>> {
                let raw = take(n * 4)?;
                Ok(raw
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect())
            };
            let states = read_f32s((t + 1) * state_dim)?;
            let actions = read_f32s(t * action_dim)?;
            let rewards = read_f32s(t)?;
            let ep = EpisodeRecord {
                task_id,
                state_dim,
                action_dim,
                states,
                actions,
                rewards,
                source: Source::Demo,
            };
            ep.validate()?;
            episodes.push(ep);
        }
        Ok(DemoFile { tasks, episodes })
    }
}
