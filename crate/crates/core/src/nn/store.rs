use crate::error::{NewtError, Result};
use crate::matrix::Matrix;
use crate::scalar::Scalar;
use std::collections::BTreeMap;

/// One named parameter tensor with its gradient buffer and Adam moments.
#[derive(Clone, Debug)]
pub struct ParamEntry<S> {
    pub values: Matrix<S>,
    pub grad: Matrix<S>,
    pub adam_m: Matrix<S>,
    pub adam_v: Matrix<S>,
    /// Optional per-entry learning rate; entries without one use the
    /// step-wide rate (the encoder trains slower than everything else).
    pub lr_override: Option<S>,
}

impl<S: Scalar> ParamEntry<S> {
    pub fn new(values: Matrix<S>) -> Self {
        let grad = Matrix::zeros(values.rows(), values.cols());
        ParamEntry {
            adam_m: grad.clone(),
            adam_v: grad.clone(),
            grad,
            values,
            lr_override: None,
        }
    }
}

/// Named parameter map. BTreeMap keeps iteration order deterministic,
/// which the optimizer, EMA, and checkpoint writer all rely on.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<S> {
    entries: BTreeMap<String, ParamEntry<S>>,
    pub step_count: u64,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            entries: BTreeMap::new(),
            step_count: 0,
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, values: Matrix<S>) {
        self.entries.insert(name.into(), ParamEntry::new(values));
    }

    pub fn get(&self, name: &str) -> Result<&ParamEntry<S>> {
        self.entries
            .get(name)
            .ok_or_else(|| NewtError::State(format!("unknown parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut ParamEntry<S>> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| NewtError::State(format!("unknown parameter '{name}'")))
    }

    pub fn values(&self, name: &str) -> Result<&Matrix<S>> {
        Ok(&self.get(name)?.values)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ParamEntry<S>)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ParamEntry<S>)> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.entries.keys()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.values().map(|e| e.values.data().len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for e in self.entries.values_mut() {
            e.grad.fill(S::ZERO);
        }
    }

    /// Accumulates `g` into the gradient buffer of `name`.
    pub fn add_grad(&mut self, name: &str, g: &Matrix<S>) -> Result<()> {
        let e = self.get_mut(name)?;
        e.grad
            .add_assign(g)
            .map_err(|_| NewtError::dim(format!("gradient shape mismatch for '{name}'")))
    }

    /// Copies parameter values from another store (matching names/shapes).
    pub fn copy_values_from(&mut self, other: &ParamStore<S>) -> Result<()> {
        if self.entries.len() != other.entries.len() {
            return Err(NewtError::dim("store entry count mismatch".to_string()));
        }
        for (name, e) in self.entries.iter_mut() {
            let o = other.get(name)?;
            if !e.values.same_shape(&o.values) {
                return Err(NewtError::dim(format!("shape mismatch for '{name}'")));
            }
            e.values = o.values.clone();
        }
        Ok(())
    }

    /// Extracts a sub-store of entries whose names start with `prefix`.
    pub fn subset_by_prefix(&self, prefix: &str) -> ParamStore<S> {
        let mut out = ParamStore::new();
        for (name, e) in &self.entries {
            if name.starts_with(prefix) {
                out.entries.insert(name.clone(), e.clone());
            }
        }
        out
    }

    /// Global L2 norm of all gradient buffers.
    pub fn grad_norm(&self) -> S {
        let mut acc = S::ZERO;
        for e in self.entries.values() {
            for &g in e.grad.data() {
                acc += g * g;
            }
        }
        acc.sqrt()
    }
}
