//! Deterministic instruction embeddings: a seeded hash of the normalized
//! text expands into a unit-norm pseudo-random vector. An override table
//! loaded from a binary file substitutes precomputed embeddings when
//! available.

use crate::error::{NewtError, Result};
use crate::rng::Rng;
use crate::scalar::Real;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = 0xcbf29ce484222325u64;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

fn normalize_text(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Unit-norm embedding of an instruction. Identical across runs for the
/// same (text, dim, salt).
pub fn embed_instruction(text: &str, lang_dim: usize, salt: u64) -> Vec<Real> {
    assert!(!text.trim().is_empty(), "instruction text must be nonempty");
    let seed = fnv1a(normalize_text(text).as_bytes()) ^ salt;
    let mut rng = Rng::seed_from(seed);
    let raw: Vec<f64> = (0..lang_dim).map(|_| rng.normal()).collect();
    let norm = raw.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
    raw.iter().map(|v| (v / norm) as Real).collect()
}

/// Precomputed embeddings keyed by instruction text.
///
/// File layout (little-endian): u32 dim, u32 count, then per entry
/// u32 text byte length, the UTF-8 text, and dim f32 values.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    entries: BTreeMap<String, Vec<Real>>,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            dim,
            entries: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, text: impl Into<String>, embedding: Vec<Real>) -> Result<()> {
        if embedding.len() != self.dim {
            return Err(NewtError::dim(format!(
                "embedding has {} dims, table expects {}",
                embedding.len(),
                self.dim
            )));
        }
        self.entries.insert(text.into(), embedding);
        Ok(())
    }

    pub fn get(&self, text: &str) -> Option<&[Real]> {
        self.entries.get(text).map(|v| v.as_slice())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for (text, emb) in &self.entries {
            out.extend_from_slice(&(text.len() as u32).to_le_bytes());
            out.extend_from_slice(text.as_bytes());
            for &v in emb {
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
        let mut cursor = 0usize;
        let mut take = |n: usize| -> Result<&[u8]> {
            if cursor + n > bytes.len() {
                return Err(NewtError::Format("embedding file truncated".to_string()));
            }
            let s = &bytes[cursor..cursor + n];
            cursor += n;
            Ok(s)
        };
        let dim = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let count = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
        let mut table = EmbeddingTable::new(dim);
        for _ in 0..count {
            let len = u32::from_le_bytes(take(4)?.try_into().expect("4 bytes")) as usize;
            let text = String::from_utf8(take(len)?.to_vec())
                .map_err(|_| NewtError::Format("embedding file: bad UTF-8".to_string()))?;
            let mut emb = Vec::with_capacity(dim);
            for _ in 0..dim {
                emb.push(Real::from_le_bytes(take(4)?.try_into().expect("4 bytes")));
            }
            table.entries.insert(text, emb);
        }
        Ok(table)
    }
}
