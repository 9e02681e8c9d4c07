//! `OTCK1` checkpoint files.
//!
//! Layout, all integers little-endian:
//! magic `OTCK1`, `u32` version, `u32` config length + config text,
//! `u32` block count, then per block `u32` name length + name,
//! `u32` rows, `u32` cols and `rows·cols` f64 values.

use std::path::Path;

use super::config::ModelConfig;
use super::model::ModelParams;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 5] = b"OTCK1";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "model.otck";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&(v as u32).to_le_bytes());
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        let text = self.config.to_text();
        put_u32(&mut out, text.len());
        out.extend_from_slice(text.as_bytes());
        let names = self.params.names();
        let tensors = self.params.tensors();
        put_u32(&mut out, names.len());
        for (name, t) in names.iter().zip(&tensors) {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rows());
            put_u32(&mut out, t.cols());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(5)? != CHECKPOINT_MAGIC {
            return Err(Error::Format {
                offset: 0,
                msg: "missing OTCK1 magic".into(),
            });
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(r.fail(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u32()? as usize;
        let text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| r.fail("config text is not UTF-8".into()))?;
        let config = ModelConfig::parse(text)?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        let mut names = Vec::with_capacity(count);
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| r.fail("block name is not UTF-8".into()))?;
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let raw = r.take(rows * cols * 8)?;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            tensors.push(Tensor::new(rows, cols, data)?);
            names.push(name);
        }
        if r.pos != bytes.len() {
            return Err(r.fail("trailing bytes after last block".into()));
        }
        let params = ModelParams::from_tensors(tensors)?;
        if params.names() != names {
            return Err(Error::Format {
                offset: bytes.len(),
                msg: format!("unexpected block manifest {names:?}"),
            });
        }
        if params.layers.biases.len() != config.layers {
            return Err(Error::Format {
                offset: bytes.len(),
                msg: "layer count disagrees with config".into(),
            });
        }
        Ok(Self { config, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Reads a checkpoint file, or `model.otck` inside a directory.
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(CHECKPOINT_FILE)
        } else {
            path.to_path_buf()
        };
        Self::from_bytes(&std::fs::read(file)?)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn fail(&self, msg: String) -> Error {
        Error::Format {
            offset: self.pos,
            msg,
        }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format {
                offset: self.bytes.len(),
                msg: "checkpoint is truncated".into(),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }
}
