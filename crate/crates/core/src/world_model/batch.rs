use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;

/// A batch of length-(H+1) subsequences: states s_0..s_H, actions
/// a_0..a_{H-1}, rewards r_0..r_{H-1}, one instruction embedding and one
/// discount per row. Masked state/action entries are exactly zero at
/// ingestion; `action_mask` records which action dims are valid per row.
#[derive(Clone, Debug)]
pub struct SegmentBatch<S> {
    pub states: Vec<Matrix<S>>,
    pub img: Option<Vec<Matrix<S>>>,
    pub lang: Matrix<S>,
    pub actions: Vec<Matrix<S>>,
    pub rewards: Vec<Vec<S>>,
    pub gammas: Vec<S>,
    pub task_ids: Vec<u32>,
    pub is_demo: Vec<bool>,
    pub action_mask: Matrix<S>,
}

impl<S: Scalar> SegmentBatch<S> {
    pub fn batch_size(&self) -> usize {
        self.lang.rows()
    }

    /// Number of transitions H.
    pub fn horizon(&self) -> usize {
        self.actions.len()
    }

    pub fn validate(&self) -> Result<()> {
        let b = self.batch_size();
        let h = self.horizon();
        if self.states.len() != h + 1 {
            return Err(NewtError::dim(format!(
                "segment batch: {} state steps for horizon {h}",
                self.states.len()
            )));
        }
        if self.rewards.len() != h {
            return Err(NewtError::dim("segment batch: reward steps".to_string()));
        }
        if let Some(img) = &self.img {
            if img.len() != h + 1 {
                return Err(NewtError::dim("segment batch: image steps".to_string()));
            }
        }
        for m in self.states.iter().chain(self.actions.iter()) {
            if m.rows() != b {
                return Err(NewtError::dim("segment batch: row count".to_string()));
            }
        }
        for r in &self.rewards {
            if r.len() != b {
                return Err(NewtError::dim("segment batch: reward rows".to_string()));
            }
            if r.iter().any(|v| !v.is_finite()) {
                return Err(NewtError::NonFinite("segment rewards".to_string()));
            }
        }
        if self.gammas.len() != b || self.task_ids.len() != b || self.is_demo.len() != b {
            return Err(NewtError::dim("segment batch: per-row metadata".to_string()));
        }
        if self.action_mask.rows() != b {
            return Err(NewtError::dim("segment batch: action mask rows".to_string()));
        }
        Ok(())
    }

    pub fn img_at(&self, t: usize) -> Option<&Matrix<S>> {
        self.img.as_ref().map(|v| &v[t])
    }
}
