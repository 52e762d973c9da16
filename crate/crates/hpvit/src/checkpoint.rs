//! Binary checkpoint: model configuration, parameters and optimizer state.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "HPVITCK1"
//! header_len   u64
//! header       JSON (CheckpointHeader)
//! n_arrays     u64
//! per array:
//!   name_len   u32, name (UTF-8)
//!   ndim       u32, dims (u64 each)
//!   count      u64, values (f64 each)
//! sha256       32 bytes over everything above
//! ```
//!
//! Parameters are stored under their canonical names; Adam moments under
//! `adam.m.<name>` and `adam.v.<name>`.

use std::fs;
use std::path::Path;

use hpvit_core::optim::{OptimizerKind, OptimizerState};
use hpvit_core::vit::ViTError;
use hpvit_core::{Real, Tensor, TrainConfig, ViTConfig, ViTParams};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub const MAGIC: &[u8; 8] = b"HPVITCK1";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    Magic,
    #[error("checksum mismatch: file is truncated or corrupt")]
    Checksum,
    #[error("malformed checkpoint: {0}")]
    Malformed(String),
    #[error("unsupported checkpoint format version {0}")]
    Version(u32),
    #[error(transparent)]
    Model(#[from] ViTError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub format: u32,
    pub run_id: String,
    pub model: ViTConfig,
    pub train: TrainConfig,
    pub classes: Vec<String>,
    /// Content hash of the curriculum the model was trained on.
    pub train_data_hash: String,
    /// Hash of the source dataset manifest behind that curriculum.
    pub source_data_hash: String,
    pub epochs_done: usize,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ViTParams<f64>,
    /// Adam first and second moments.
    pub moments: Option<(ViTParams<f64>, ViTParams<f64>)>,
}

impl Checkpoint {
    pub fn from_state<T: Real>(
        header: CheckpointHeader,
        params: &ViTParams<T>,
        optimizer: &OptimizerState<T>,
    ) -> Self {
        let widen = |p: &ViTParams<T>| p.map(|_, t| t.cast::<f64>());
        Self {
            header,
            params: widen(params),
            moments: optimizer
                .moments
                .as_ref()
                .map(|(m, v)| (widen(m), widen(v))),
        }
    }

    /// Parameters and optimizer state at precision `T`.
    pub fn to_state<T: Real>(&self) -> (ViTParams<T>, OptimizerState<T>) {
        let narrow = |p: &ViTParams<f64>| p.map(|_, t| t.cast::<T>());
        let params = narrow(&self.params);
        let state = OptimizerState {
            kind: self.header.train.optimizer,
            step: self.header.step,
            moments: self.moments.as_ref().map(|(m, v)| (narrow(m), narrow(v))),
        };
        (params, state)
    }

    pub fn encode(&self) -> Result<Vec<u8>, CheckpointError> {
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| CheckpointError::Malformed(e.to_string()))?;
        let mut arrays: Vec<(String, &Tensor<f64>)> = self.params.named();
        if let Some((m, v)) = &self.moments {
            arrays.extend(
                m.named()
                    .into_iter()
                    .map(|(n, t)| (format!("adam.m.{n}"), t)),
            );
            arrays.extend(
                v.named()
                    .into_iter()
                    .map(|(n, t)| (format!("adam.v.{n}"), t)),
            );
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(arrays.len() as u64).to_le_bytes());
        for (name, t) in arrays {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&(t.len() as u64).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CheckpointError> {
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::Magic);
        }
        if bytes.len() < MAGIC.len() + DIGEST_LEN {
            return Err(CheckpointError::Checksum);
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(CheckpointError::Checksum);
        }
        let mut r = Reader {
            buf: body,
            pos: MAGIC.len(),
        };
        let header_len = r.u64()? as usize;
        let header: CheckpointHeader = serde_json::from_slice(r.take(header_len)?)
            .map_err(|e| CheckpointError::Malformed(format!("header: {e}")))?;
        if header.format != FORMAT_VERSION {
            return Err(CheckpointError::Version(header.format));
        }
        let n = r.u64()? as usize;
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for _ in 0..n {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| CheckpointError::Malformed("array name is not UTF-8".into()))?;
            let ndim = r.u32()? as usize;
            let shape = (0..ndim)
                .map(|_| r.u64().map(|d| d as usize))
                .collect::<Result<Vec<_>, _>>()?;
            let count = r.u64()? as usize;
            if count != shape.iter().product::<usize>() {
                return Err(CheckpointError::Malformed(format!(
                    "{name}: {count} values for shape {shape:?}"
                )));
            }
            let data = r
                .take(
                    count
                        .checked_mul(8)
                        .ok_or_else(|| CheckpointError::Malformed("array too large".into()))?,
                )?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            let t = Tensor::new(shape, data)
                .map_err(|e| CheckpointError::Malformed(format!("{name}: {e}")))?;
            if let Some(rest) = name.strip_prefix("adam.m.") {
                m.push((rest.to_string(), t));
            } else if let Some(rest) = name.strip_prefix("adam.v.") {
                v.push((rest.to_string(), t));
            } else {
                params.push((name, t));
            }
        }
        if r.pos != body.len() {
            return Err(CheckpointError::Malformed("trailing bytes".into()));
        }
        let config = &header.model;
        let params = ViTParams::from_named(config, params)?;
        let moments = match (m.is_empty(), v.is_empty()) {
            (true, true) => None,
            (false, false) => Some((
                ViTParams::from_named(config, m)?,
                ViTParams::from_named(config, v)?,
            )),
            _ => return Err(CheckpointError::Malformed("incomplete Adam moments".into())),
        };
        let adam = matches!(header.train.optimizer, OptimizerKind::Adam { .. });
        if adam != moments.is_some() {
            return Err(CheckpointError::Malformed(
                "optimizer moments do not match the optimizer kind".into(),
            ));
        }
        Ok(Self {
            header,
            params,
            moments,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.encode()?;
        fs::write(path, bytes).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::decode(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| CheckpointError::Malformed("unexpected end of data".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
