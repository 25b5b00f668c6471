//! Binary checkpoint persistence.
//!
//! Layout: magic `DNET`, format version as little-endian u32, a
//! length-prefixed UTF-8 JSON block (config + normalization statistics),
//! the parameter count, then one record per parameter of
//! {name length, name bytes, rank, dims as little-endian u64, payload as
//! little-endian f64}. A SHA-256 digest of everything before it closes the
//! file so single-byte corruption is always detected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{DetectorNet, ModelConfig};

const MAGIC: &[u8; 4] = b"DNET";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    mean: f64,
    std: f64,
}

/// A fully materialized checkpoint: config, normalization statistics, and
/// every named parameter with its shape and data.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub mean: f64,
    pub std: f64,
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

impl Checkpoint {
    pub fn from_model(model: &DetectorNet, mean: f64, std: f64) -> Checkpoint {
        let params = model
            .params()
            .iter()
            .map(|(name, t)| (name.to_string(), t.shape(), t.to_vec()))
            .collect();
        Checkpoint {
            config: model.config().clone(),
            mean,
            std,
            params,
        }
    }

    /// Construct a fresh model from the stored config and overwrite its
    /// parameters with the stored values.
    pub fn build_model(&self) -> Result<DetectorNet> {
        let mut model = DetectorNet::new(self.config.clone())?;
        self.load_into(&mut model)?;
        Ok(model)
    }

    /// Overwrite a model's parameters. The model's config must match the
    /// checkpoint's exactly; an ablated checkpoint cannot load into a full
    /// model or vice versa.
    pub fn load_into(&self, model: &mut DetectorNet) -> Result<()> {
        if *model.config() != self.config {
            return Err(Error::Config(
                "checkpoint config does not match the target model config".into(),
            ));
        }
        if self.params.len() != model.params().len() {
            return Err(Error::Format(format!(
                "checkpoint has {} parameters, model has {}",
                self.params.len(),
                model.params().len()
            )));
        }
        for (name, shape, data) in &self.params {
            let tensor = model.params().get(name).ok_or_else(|| {
                Error::Format(format!("checkpoint parameter '{name}' not in model"))
            })?;
            if tensor.shape() != *shape {
                return Err(Error::Format(format!(
                    "parameter '{name}' shape mismatch: checkpoint {:?}, model {:?}",
                    shape,
                    tensor.shape()
                )));
            }
            tensor.set_data(data)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        let header = Header {
            config: self.config.clone(),
            mean: self.mean,
            std: self.std,
        };
        let json = serde_json::to_vec(&header).unwrap();
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(self.params.len() as u64).to_le_bytes());
        for (name, shape, data) in &self.params {
            let name_bytes = name.as_bytes();
            out.extend_from_slice(&(name_bytes.len() as u64).to_le_bytes());
            out.extend_from_slice(name_bytes);
            out.extend_from_slice(&(shape.len() as u64).to_le_bytes());
            for d in shape {
                out.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
        let mut r = Reader { bytes, pos: 0 };
        if bytes.len() < 32 {
            return Err(Error::Format("checkpoint file truncated".into()));
        }
        let (body, stored_digest) = bytes.split_at(bytes.len() - 32);
        let digest = Sha256::digest(body);
        if digest.as_slice() != stored_digest {
            return Err(Error::Format(
                "checkpoint integrity check failed (corrupted file)".into(),
            ));
        }
        r.bytes = body;
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(Error::Format("bad checkpoint magic".into()));
        }
        let version = u32::from_le_bytes(r.take(4)?.try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!(
                "unknown checkpoint format version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let json_len = r.read_u64()? as usize;
        let json = r.take(json_len)?;
        let header: Header = serde_json::from_slice(json)
            .map_err(|e| Error::Format(format!("bad checkpoint header: {e}")))?;
        let n_params = r.read_u64()? as usize;
        let mut params = Vec::with_capacity(n_params);
        for _ in 0..n_params {
            let name_len = r.read_u64()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Format("parameter name is not UTF-8".into()))?;
            let rank = r.read_u64()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.read_u64()? as usize);
            }
            let numel: usize = shape.iter().product();
            let mut data = Vec::with_capacity(numel);
            for _ in 0..numel {
                data.push(f64::from_le_bytes(r.take(8)?.try_into().unwrap()));
            }
            params.push((name, shape, data));
        }
        if r.pos != r.bytes.len() {
            return Err(Error::Format("trailing bytes after checkpoint body".into()));
        }
        Ok(Checkpoint {
            config: header.config,
            mean: header.mean,
            std: header.std,
            params,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format("checkpoint file truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn read_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint(path: &Path, checkpoint: &Checkpoint) -> Result<()> {
    std::fs::write(path, checkpoint.to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let bytes = std::fs::read(path)?;
    Checkpoint::from_bytes(&bytes)
}
