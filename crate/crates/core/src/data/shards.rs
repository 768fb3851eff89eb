//! Binary sample shards.
//!
//! Layout (all integers and floats little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic "NILMSHRD"
//! 8       4     u32 format version (1)
//! 12      4     u32 window length W
//! 16      8     u64 master seed
//! 24      4     u32 L, followed by L bytes of UTF-8 appliance name
//! ..      8     u64 record count
//! then per record:
//!         1     u8 split: 0 = train, 1 = test
//!         1     u8 kind: 0 = positive, 1 = negative
//!         1     u8 filtered: 1 if the training filter was applied
//!         1     reserved, zero
//!         4     u32 activation length in points
//!         8     u64 window start index in the source series
//!         8     f64 scale (watts)
//!         4     u32 n, followed by n x f32 normalized aggregate
//!         4     u32 n, followed by n x f32 normalized appliance
//! ```

use std::path::Path;

use super::sampling::{PairKind, Provenance, SamplePair, Split};
use super::{DataError, Result};

pub const MAGIC: &[u8; 8] = b"NILMSHRD";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Shard {
    pub appliance: String,
    pub window_length: u32,
    pub seed: u64,
    pub pairs: Vec<SamplePair>,
}

impl Shard {
    pub fn to_bytes(&self) -> Vec<u8> {
        let w = self.window_length as usize;
        let mut out = Vec::with_capacity(40 + self.pairs.len() * (36 + 8 * w));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.window_length.to_le_bytes());
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.appliance.len() as u32).to_le_bytes());
        out.extend_from_slice(self.appliance.as_bytes());
        out.extend_from_slice(&(self.pairs.len() as u64).to_le_bytes());
        for p in &self.pairs {
            let pv = &p.provenance;
            out.push(match pv.split {
                Split::Train => 0,
                Split::Test => 1,
            });
            out.push(match pv.kind {
                PairKind::Positive => 0,
                PairKind::Negative => 1,
            });
            out.push(pv.filtered as u8);
            out.push(0);
            out.extend_from_slice(&pv.activation_len.to_le_bytes());
            out.extend_from_slice(&pv.start.to_le_bytes());
            out.extend_from_slice(&p.scale.to_le_bytes());
            for seq in [&p.aggregate, &p.appliance] {
                out.extend_from_slice(&(seq.len() as u32).to_le_bytes());
                for v in seq.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(DataError::Shard("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(DataError::Shard(format!("unsupported version {version}")));
        }
        let window_length = r.u32()?;
        let seed = r.u64()?;
        let name_len = r.u32()? as usize;
        let appliance = String::from_utf8(r.take(name_len)?.to_vec()).map_err(|e| DataError::Shard(e.to_string()))?;
        let count = r.u64()?;
        let mut pairs = Vec::new();
        for i in 0..count {
            let head = r.take(4)?;
            let split = match head[0] {
                0 => Split::Train,
                1 => Split::Test,
                b => return Err(DataError::Shard(format!("record {i}: bad split byte {b}"))),
            };
            let kind = match head[1] {
                0 => PairKind::Positive,
                1 => PairKind::Negative,
                b => return Err(DataError::Shard(format!("record {i}: bad kind byte {b}"))),
            };
            let filtered = head[2] != 0;
            let activation_len = r.u32()?;
            let start = r.u64()?;
            let scale = f64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
            let aggregate = r.f32_seq()?;
            let appliance = r.f32_seq()?;
            if aggregate.len() != window_length as usize || appliance.len() != window_length as usize {
                return Err(DataError::Shard(format!("record {i}: sequence length differs from window length")));
            }
            pairs.push(SamplePair {
                aggregate,
                appliance,
                scale,
                provenance: Provenance { split, kind, activation_len, start, filtered },
            });
        }
        if r.pos != bytes.len() {
            return Err(DataError::Shard(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { appliance, window_length, seed, pairs })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| DataError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            DataError::Shard(m) => DataError::Shard(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn count(&self, split: Split, kind: PairKind) -> usize {
        self.pairs
            .iter()
            .filter(|p| p.provenance.split == split && p.provenance.kind == kind)
            .count()
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
            .ok_or_else(|| DataError::Shard(format!("truncated at byte {}", self.pos)))?;
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

    fn f32_seq(&mut self) -> Result<Vec<f32>> {
        let n = self.u32()? as usize;
        let raw = self.take(n.checked_mul(4).ok_or_else(|| DataError::Shard("sequence too long".into()))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect())
    }
}
