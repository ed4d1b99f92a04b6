//! Versioned binary checkpoints of named parameter tensors.
//!
//! Layout (little endian): magic, format version, fingerprint, episode
//! counter, sampler seed and position, parameter seed, then each tensor as
//! name, rows, cols and `f64` values.

use std::io::{Read, Write};
use std::path::Path;

use autodiff::Tensor;
use thiserror::Error;

use crate::model::ModelParams;

const MAGIC: &[u8; 8] = b"HETRELCK";
const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    Version(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("checkpoint was trained with configuration {found}, expected {expected}")]
    FingerprintMismatch { expected: String, found: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    /// Digest of the configuration that produced the parameters.
    pub fingerprint: String,
    /// Training episodes consumed when the parameters were captured.
    pub episode: u64,
    /// Episode sampler state: seed and number of episodes drawn.
    pub sampler_seed: u64,
    pub sampler_position: u64,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn check_fingerprint(&self, expected: &str) -> Result<(), CheckpointError> {
        if self.fingerprint != expected {
            return Err(CheckpointError::FingerprintMismatch {
                expected: expected.to_string(),
                found: self.fingerprint.clone(),
            });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        put_str(&mut out, &self.fingerprint);
        for x in [self.episode, self.sampler_seed, self.sampler_position, self.params.seed()] {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, t) in self.params.iter() {
            put_str(&mut out, name);
            out.extend_from_slice(&(t.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u64).to_le_bytes());
            for x in t.data() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
        if version != VERSION {
            return Err(CheckpointError::Version(version));
        }
        let fingerprint = r.string()?;
        let episode = r.u64()?;
        let sampler_seed = r.u64()?;
        let sampler_position = r.u64()?;
        let mut params = ModelParams::empty(r.u64()?);
        let count = r.u64()?;
        for _ in 0..count {
            let name = r.string()?;
            let rows = r.u64()? as usize;
            let cols = r.u64()? as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&n| n <= bytes.len() / 8)
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name} has absurd shape")))?;
            let data = r
                .take(len * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let t = Tensor::new(rows, cols, data).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            params.insert(name, t);
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::Corrupt("trailing bytes".into()));
        }
        Ok(Self {
            fingerprint,
            episode,
            sampler_seed,
            sampler_position,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let mut f = std::fs::File::create(path)?;
        f.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u64).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| CheckpointError::Corrupt("truncated".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn string(&mut self) -> Result<String, CheckpointError> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| CheckpointError::Corrupt("name is not utf-8".into()))
    }
}
