//! Checkpoint container.
//!
//! Layout: a u64 little-endian header length, a UTF-8 structured-text
//! header, then a contiguous little-endian f32 payload. Header lines:
//!
//!   newt-checkpoint v1
//!   meta.<key>=<value>
//!   array.<name>=f32;<rows>x<cols>;<byte offset into payload>
//!
//! Array bytes are raw IEEE-754, so save -> load -> save reproduces the
//! file byte for byte.

use crate::error::{NewtError, Result};
use crate::scalar::Real;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

const HEADER_TAG: &str = "newt-checkpoint v1";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    arrays: BTreeMap<String, (usize, usize, Vec<Real>)>,
}

impl Checkpoint {
    pub fn new() -> Self {
        Checkpoint::default()
    }

    pub fn set_meta(&mut self, key: &str, value: impl ToString) {
        self.meta.insert(key.to_string(), value.to_string());
    }

    pub fn meta_str(&self, key: &str) -> Result<&str> {
        self.meta
            .get(key)
            .map(|s| s.as_str())
            .ok_or_else(|| NewtError::Format(format!("checkpoint missing meta '{key}'")))
    }

    pub fn meta_u64(&self, key: &str) -> Result<u64> {
        self.meta_str(key)?
            .parse()
            .map_err(|_| NewtError::Format(format!("checkpoint meta '{key}' is not an integer")))
    }

    pub fn meta_f64(&self, key: &str) -> Result<f64> {
        self.meta_str(key)?
            .parse()
            .map_err(|_| NewtError::Format(format!("checkpoint meta '{key}' is not a number")))
    }

    pub fn insert_array(&mut self, name: &str, rows: usize, cols: usize, data: Vec<Real>) {
        debug_assert_eq!(rows * cols, data.len());
        self.arrays.insert(name.to_string(), (rows, cols, data));
    }

    pub fn array(&self, name: &str) -> Result<(usize, usize, &[Real])> {
        self.arrays
            .get(name)
            .map(|(r, c, d)| (*r, *c, d.as_slice()))
            .ok_or_else(|| NewtError::Format(format!("checkpoint missing array '{name}'")))
    }

    pub fn array_names(&self) -> impl Iterator<Item = &String> {
        self.arrays.keys()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut header = String::new();
        header.push_str(HEADER_TAG);
        header.push('\n');
        for (k, v) in &self.meta {
            if v.contains('\n') {
                return Err(NewtError::Format(format!("meta '{k}' contains a newline")));
            }
            header.push_str(&format!("meta.{k}={v}\n"));
        }
        let mut offset = 0usize;
        for (name, (rows, cols, data)) in &self.arrays {
            header.push_str(&format!("array.{name}=f32;{rows}x{cols};{offset}\n"));
            offset += data.len() * 4;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        f.write_all(&(header.len() as u64).to_le_bytes())?;
        f.write_all(header.as_bytes())?;
        for (_, (_, _, data)) in &self.arrays {
            let mut raw = Vec::with_capacity(data.len() * 4);
            for &v in data {
                raw.extend_from_slice(&v.to_le_bytes());
            }
            f.write_all(&raw)?;
        }
        f.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        if bytes.len() < 8 {
            return Err(NewtError::Format("checkpoint truncated".to_string()));
        }
        let header_len = u64::from_le_bytes(bytes[..8].try_into().expect("8 bytes")) as usize;
        if 8 + header_len > bytes.len() {
            return Err(NewtError::Format("checkpoint header overruns file".to_string()));
        }
        let header = std::str::from_utf8(&bytes[8..8 + header_len])
            .map_err(|_| NewtError::Format("checkpoint header is not UTF-8".to_string()))?;
        let payload = &bytes[8 + header_len..];
        let mut lines = header.lines();
        if lines.next() != Some(HEADER_TAG) {
            return Err(NewtError::Format("not a newt checkpoint".to_string()));
        }
        let mut ckpt = Checkpoint::new();
        for line in lines {
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| NewtError::Format(format!("bad header line '{line}'")))?;
            if let Some(name) = key.strip_prefix("meta.") {
                ckpt.meta.insert(name.to_string(), value.to_string());
            } else if let Some(name) = key.strip_prefix("array.") {
                let mut parts = value.split(';');
                let dtype = parts.next().unwrap_or_default();
                if dtype != "f32" {
                    return Err(NewtError::Format(format!("array '{name}': dtype {dtype}")));
                }
                let shape = parts
                    .next()
                    .ok_or_else(|| NewtError::Format("array missing shape".to_string()))?;
                let offset: usize = parts
                    .next()
                    .ok_or_else(|| NewtError::Format("array missing offset".to_string()))?
                    .parse()
                    .map_err(|_| NewtError::Format("array offset not an integer".to_string()))?;
                let (r, c) = shape
                    .split_once('x')
                    .ok_or_else(|| NewtError::Format("array shape not RxC".to_string()))?;
                let rows: usize = r
                    .parse()
                    .map_err(|_| NewtError::Format("array rows".to_string()))?;
                let cols: usize = c
                    .parse()
                    .map_err(|_| NewtError::Format("array cols".to_string()))?;
                let nbytes = rows * cols * 4;
                if offset + nbytes > payload.len() {
                    return Err(NewtError::Format(format!(
                        "array '{name}' overruns payload"
                    )));
                }
                let data: Vec<Real> = payload[offset..offset + nbytes]
                    .chunks_exact(4)
                    .map(|chunk| Real::from_le_bytes(chunk.try_into().expect("4 bytes")))
                    .collect();
                ckpt.arrays.insert(name.to_string(), (rows, cols, data));
            } else {
                return Err(NewtError::Format(format!("unknown header key '{key}'")));
            }
        }
        Ok(ckpt)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_bitwise() {
        let dir = std::env::temp_dir().join("newt_ckpt_test");
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("a.ckpt");
        let mut ck = Checkpoint::new();
        ck.set_meta("env_steps", 12345u64);
        ck.set_meta("rng", "1:2:3:4");
        ck.insert_array("p.l0.w", 2, 3, vec![0.1, -0.5, 3.25, f32::MIN_POSITIVE, 1e9, -0.0]);
        ck.insert_array("p.l0.b", 1, 3, vec![0.0, 1.5, -2.5]);
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded, ck);
        // resave produces identical bytes
        let path2 = dir.join("b.ckpt");
        loaded.save(&path2).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&path2).unwrap());
        std::fs::remove_file(&path).ok();
        std::fs::remove_file(&path2).ok();
    }

    #[test]
    fn missing_pieces_are_errors() {
        let ck = Checkpoint::new();
        assert!(ck.array("nope").is_err());
        assert!(ck.meta_u64("nope").is_err());
    }
}
