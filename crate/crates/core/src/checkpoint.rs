//! Versioned binary checkpoints: an embedded model configuration followed by
//! named `f64` tensors.
//!
//! Layout (little-endian): magic `GCN3CKPT`, `u32` version, `u64` length and
//! UTF-8 TOML of the [`ModelConfig`], `u64` tensor count, then per tensor a
//! `u32` name length, the name, `u64` rows, `u64` cols and `rows·cols` raw
//! 64-bit values in row-major order.

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dense::DenseMatrix;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{ModelConfig, ModelState};
use crate::output::write_atomic;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"GCN3CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub tensors: Vec<(String, DenseMatrix)>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end =
            end.ok_or_else(|| Error::Checkpoint(format!("truncated while reading {what}")))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    fn len(&mut self, what: &str) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("{what} too large")))
    }

    fn text(&mut self, n: usize, what: &str) -> Result<String> {
        String::from_utf8(self.take(n, what)?.to_vec())
            .map_err(|_| Error::Checkpoint(format!("{what} is not UTF-8")))
    }
}

impl Checkpoint {
    pub fn from_state(config: &ModelConfig, state: &ModelState) -> Self {
        Self {
            config: config.clone(),
            tensors: state.named_tensors(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let config = toml::to_string(&self.config).expect("model configs always serialise");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(config.len() as u64).to_le_bytes());
        out.extend_from_slice(config.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u64).to_le_bytes());
        for (name, m) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(8, "magic")? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint (bad magic)".into()));
        }
        let version = r.u32("version")?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported version {version} (expected {CHECKPOINT_VERSION})"
            )));
        }
        let n = r.len("config length")?;
        let text = r.text(n, "config")?;
        let config: ModelConfig = toml::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("embedded config: {}", e.message())))?;
        let count = r.len("tensor count")?;
        let mut tensors = Vec::new();
        for _ in 0..count {
            let n = r.u32("name length")? as usize;
            let name = r.text(n, "tensor name")?;
            let rows = r.len("rows")?;
            let cols = r.len("cols")?;
            let bytes = rows
                .checked_mul(cols)
                .and_then(|k| k.checked_mul(8))
                .ok_or_else(|| Error::Checkpoint(format!("tensor '{name}' too large")))?;
            let raw = r.take(bytes, &format!("tensor '{name}'"))?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push((name, DenseMatrix::from_vec(rows, cols, data)?));
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!(
                "{} trailing bytes",
                buf.len() - r.pos
            )));
        }
        Ok(Self { config, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    /// A model state for `graph` holding exactly this checkpoint's tensors.
    pub fn into_state(&self, graph: &Graph) -> Result<ModelState> {
        let mut state = ModelState::init(graph, &self.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let expected = state.named_tensors().len();
        if expected != self.tensors.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model needs {expected}",
                self.tensors.len()
            )));
        }
        state.load_named_tensors(&self.tensors)?;
        Ok(state)
    }
}
