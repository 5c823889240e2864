//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic       8 bytes   "GOGCKPT1"
//! n_meta      u32
//! n_meta ×    key_len u32, key utf-8, val_len u32, val utf-8
//! n_params    u32
//! n_params ×  name_len u32, name utf-8, trainable u8,
//!             rows u32, cols u32, rows*cols × f64 (IEEE-754 LE bits)
//! ```
//!
//! Metadata always carries `seed` and `config_digest`; the trainer adds
//! its own keys (epoch, optimizer step). Values are written as raw bits so
//! a save/load round trip is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::matrix::Matrix;
use super::params::ParamStore;
use crate::error::{GogError, Result};

const MAGIC: &[u8; 8] = b"GOGCKPT1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub params: ParamStore,
}

impl Checkpoint {
    pub fn new(params: ParamStore, config_digest: &str) -> Self {
        let mut meta = BTreeMap::new();
        meta.insert("seed".to_string(), params.seed().to_string());
        meta.insert("config_digest".to_string(), config_digest.to_string());
        Checkpoint { meta, params }
    }

    pub fn config_digest(&self) -> &str {
        self.meta.get("config_digest").map_or("", String::as_str)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        put_u32(&mut out, self.meta.len());
        for (k, v) in &self.meta {
            put_str(&mut out, k);
            put_str(&mut out, v);
        }
        put_u32(&mut out, self.params.len());
        for (name, p) in self.params.iter() {
            put_str(&mut out, name);
            out.push(u8::from(p.trainable));
            put_u32(&mut out, p.value.rows());
            put_u32(&mut out, p.value.cols());
            for v in p.value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(GogError::Checkpoint("bad magic".into()));
        }
        let mut meta = BTreeMap::new();
        for _ in 0..r.u32()? {
            let k = r.string()?;
            let v = r.string()?;
            meta.insert(k, v);
        }
        let seed = meta
            .get("seed")
            .ok_or_else(|| GogError::Checkpoint("missing seed".into()))?
            .parse::<u64>()
            .map_err(|e| GogError::Checkpoint(format!("bad seed: {e}")))?;
        let mut params = ParamStore::new(seed);
        for _ in 0..r.u32()? {
            let name = r.string()?;
            let trainable = r.take(1)?[0] != 0;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
                .collect();
            params.insert(&name, Matrix::from_vec(rows, cols, data)?, trainable);
        }
        if r.pos != bytes.len() {
            return Err(GogError::Checkpoint("trailing bytes".into()));
        }
        Ok(Checkpoint { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| GogError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| GogError::io(path, e))?;
        Checkpoint::from_bytes(&bytes)
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(GogError::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|e| GogError::Checkpoint(format!("bad utf-8: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::params::Init;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bit_exact(values in proptest::collection::vec(any::<f64>(), 1..40), seed in any::<u64>()) {
            let mut store = ParamStore::new(seed);
            let n = values.len();
            store.insert("raw", Matrix::from_vec(1, n, values).unwrap(), false);
            store.register("w", 3, 2, Init::Uniform { fan_in: 3 }).unwrap();
            let ck = Checkpoint::new(store, "abc");
            let back = Checkpoint::from_bytes(&ck.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), ck.to_bytes());
            prop_assert_eq!(back.params.seed(), seed);
        }
    }

    #[test]
    fn truncated_input_is_rejected() {
        let ck = Checkpoint::new(ParamStore::new(1), "d");
        let bytes = ck.to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }
}
