//! Binary checkpoint container.
//!
//! ```text
//! magic    8 bytes  "FOVPCKPT"
//! version  u32 LE
//! header   u64 LE length + UTF-8 TOML (kind, expansion, epoch, loss
//!          history, layer schedule, training config)
//! params   u32 LE count, then per array:
//!          u32 name length, name, u32 rank, u32 dims..., f32 LE values
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::dataset::Expansion;
use crate::models::{Model, ModelError, ModelSpec};
use crate::nn::Module;

pub const MAGIC: &[u8; 8] = b"FOVPCKPT";
pub const VERSION: u32 = 1;

/// A trained network with the context needed to use and reproduce it.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model,
    pub config: TrainConfig,
    pub expansion: Expansion,
    pub epoch: usize,
    /// Mean training loss of every completed epoch.
    pub loss_history: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    expansion: Expansion,
    epoch: usize,
    loss_history: Vec<f64>,
    spec: ModelSpec,
    config: TrainConfig,
}

fn corrupt(reason: impl Into<String>) -> TrainError {
    TrainError::Checkpoint(reason.into())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], TrainError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt("truncated file"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, TrainError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, TrainError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

impl Checkpoint {
    pub fn spec(&self) -> &ModelSpec {
        self.model.spec()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, TrainError> {
        let header = Header {
            expansion: self.expansion,
            epoch: self.epoch,
            loss_history: self.loss_history.clone(),
            spec: self.spec().clone(),
            config: self.config.clone(),
        };
        let text = toml::to_string(&header).map_err(|e| corrupt(e.to_string()))?;
        let params = self.model.params();
        let mut out = Vec::with_capacity(self.model.param_count() * 4 + text.len() + 64);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(text.as_bytes());
        out.extend_from_slice(&(params.len() as u32).to_le_bytes());
        for p in params {
            out.extend_from_slice(&(p.name.len() as u32).to_le_bytes());
            out.extend_from_slice(p.name.as_bytes());
            out.extend_from_slice(&(p.shape.len() as u32).to_le_bytes());
            for &d in &p.shape {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &p.value {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != MAGIC {
            return Err(corrupt("not a checkpoint file"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(format!("unsupported checkpoint version {version}")));
        }
        let len = r.u64()? as usize;
        let text = std::str::from_utf8(r.take(len)?).map_err(|_| corrupt("header is not UTF-8"))?;
        let header: Header = toml::from_str(text).map_err(|e| corrupt(e.to_string()))?;
        let mut model = Model::build(&header.spec, 0)?;
        let count = r.u32()? as usize;
        let mut params = model.params_mut();
        if count != params.len() {
            return Err(corrupt(format!(
                "{count} parameter arrays, schedule needs {}",
                params.len()
            )));
        }
        for p in params.iter_mut() {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| corrupt("bad parameter name"))?;
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            if name != p.name || shape != p.shape {
                return Err(ModelError::ParamMismatch {
                    name: p.name.clone(),
                    reason: format!("file has {name} {shape:?}, schedule expects {:?}", p.shape),
                }
                .into());
            }
            let raw = r.take(p.len() * 4)?;
            for (v, b) in p.value.iter_mut().zip(raw.chunks_exact(4)) {
                *v = f32::from_le_bytes(b.try_into().unwrap());
            }
        }
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self {
            model,
            config: header.config,
            expansion: header.expansion,
            epoch: header.epoch,
            loss_history: header.loss_history,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        fs::write(path, self.to_bytes()?)
            .map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes =
            fs::read(path).map_err(|e| TrainError::Io(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes).map_err(|e| match e {
            TrainError::Checkpoint(m) => TrainError::Checkpoint(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}
