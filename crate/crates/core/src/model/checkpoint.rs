//! Self-describing binary checkpoint.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "NILMCKPT"
//! 8       4     u32 format version (1)
//! 12      1     u8 dtype tag: 0 = f32, 1 = f64
//! 13      3     reserved, zero
//! 16      8     u64 master seed of the run that produced the file
//! 24      4     u32 L, length of the model config
//! 28      L     model config as UTF-8 TOML
//! ..      4     u32 N, number of tensors
//! then N times:
//!         4     u32 name length, followed by the UTF-8 name
//!         4     u32 rank R, followed by R x u64 extents
//!         n*s   raw values, n = product of extents, s = dtype size
//! ```

use std::io::{Read, Write};
use std::path::Path;

use thiserror::Error;

use super::ModelConfig;
use crate::layers::Parameters;
use crate::tensor::{Dtype, Scalar, Tensor};

pub const MAGIC: &[u8; 8] = b"NILMCKPT";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("malformed checkpoint: {0}")]
    Format(String),
}

type Result<T> = std::result::Result<T, CheckpointError>;

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    /// Values widened to f64; narrowing back to the stored dtype is exact.
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub dtype: Dtype,
    pub seed: u64,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model<S: Scalar>(model: &impl Parameters<S>, config: &ModelConfig, seed: u64) -> Self {
        let tensors = model
            .parameters()
            .into_iter()
            .map(|(name, t)| NamedTensor {
                name,
                shape: t.shape().to_vec(),
                values: t.data().iter().map(|v| v.as_f64()).collect(),
            })
            .collect();
        Self {
            config: config.clone(),
            dtype: S::DTYPE,
            seed,
            tensors,
        }
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors.iter().map(|t| t.values.len()).sum()
    }

    /// Copies stored values into `model`, which must have exactly the same
    /// parameter names and shapes.
    pub fn load_into<S: Scalar>(&self, model: &mut impl Parameters<S>) -> Result<()> {
        let mut slots = model.parameters_mut();
        if slots.len() != self.tensors.len() {
            return Err(CheckpointError::Format(format!(
                "model has {} parameter tensors, checkpoint has {}",
                slots.len(),
                self.tensors.len()
            )));
        }
        for ((name, slot), stored) in slots.iter_mut().zip(&self.tensors) {
            if *name != stored.name || slot.shape() != stored.shape.as_slice() {
                return Err(CheckpointError::Format(format!(
                    "parameter mismatch: model {name} {:?} vs checkpoint {} {:?}",
                    slot.shape(),
                    stored.name,
                    stored.shape
                )));
            }
            let data = stored.values.iter().map(|&v| S::from_f64_lossy(v)).collect();
            **slot = Tensor::variable(&stored.shape, data).map_err(|e| CheckpointError::Format(e.to_string()))?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype.tag());
        out.extend_from_slice(&[0u8; 3]);
        out.extend_from_slice(&self.seed.to_le_bytes());
        let cfg = self.config.to_toml();
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&(t.name.len() as u32).to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            out.extend_from_slice(&(t.shape.len() as u32).to_le_bytes());
            for &d in &t.shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for &v in &t.values {
                match self.dtype {
                    Dtype::F32 => (v as f32).write_le(&mut out),
                    Dtype::F64 => v.write_le(&mut out),
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::Format("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(CheckpointError::Format(format!("unsupported version {version}")));
        }
        let dtype = Dtype::from_tag(r.take(1)?[0]).ok_or_else(|| CheckpointError::Format("unknown dtype".into()))?;
        r.take(3)?;
        let seed = r.u64()?;
        let cfg_len = r.u32()? as usize;
        let cfg_text = std::str::from_utf8(r.take(cfg_len)?).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let config = ModelConfig::from_toml(cfg_text).map_err(|e| CheckpointError::Format(e.to_string()))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| CheckpointError::Format(e.to_string()))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let size = dtype.size_of();
            let raw = r.take(n.checked_mul(size).ok_or_else(|| CheckpointError::Format("tensor too large".into()))?)?;
            let values = raw
                .chunks_exact(size)
                .map(|c| match dtype {
                    Dtype::F32 => f32::read_le(c) as f64,
                    Dtype::F64 => f64::read_le(c),
                })
                .collect();
            tensors.push(NamedTensor { name, shape, values });
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { config, dtype, seed, tensors })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Format(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
