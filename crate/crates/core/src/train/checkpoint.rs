use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EpochRecord, TrainError};
use crate::models::{Model, ModelConfig};
use crate::tensor::{ParamStore, Tensor};
use crate::textprep::Vocabularies;

pub const CHECKPOINT_MAGIC: &str = "QGEN-CHECKPOINT";
pub const CHECKPOINT_VERSION: u32 = 1;

/// A trained model with its configuration, vocabularies and history.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub vocabs: Vocabularies,
    pub fingerprint: String,
    pub params: ParamStore,
    pub history: Vec<EpochRecord>,
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    config: ModelConfig,
    vocabs: Vocabularies,
    fingerprint: String,
    tensors: Vec<TensorEntry>,
    payload_sha256: String,
    history: Vec<EpochRecord>,
}

impl Checkpoint {
    pub fn from_model(model: &Model, history: Vec<EpochRecord>) -> Self {
        let mut params = model.params.clone();
        params.zero_grads();
        Self {
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            vocabs: model.vocabs.clone(),
            fingerprint: model.vocabs.fingerprint(),
            params,
            history,
        }
    }

    pub fn to_model(&self) -> Result<Model, TrainError> {
        Ok(Model::from_params(self.config.clone(), self.vocabs.clone(), self.params.clone())?)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut payload = Vec::new();
        for p in self.params.iter() {
            let data = p.value.data();
            payload.extend_from_slice(&((data.len() * 8) as u64).to_le_bytes());
            for x in data {
                payload.extend_from_slice(&x.to_le_bytes());
            }
        }
        let header = Header {
            version: self.version,
            config: self.config.clone(),
            vocabs: self.vocabs.clone(),
            fingerprint: self.fingerprint.clone(),
            tensors: self
                .params
                .iter()
                .map(|p| TensorEntry {
                    name: p.name.clone(),
                    shape: p.value.shape().to_vec(),
                })
                .collect(),
            payload_sha256: hex::encode(Sha256::digest(&payload)),
            history: self.history.clone(),
        };
        let mut out = Vec::with_capacity(payload.len() + 4096);
        out.extend_from_slice(CHECKPOINT_MAGIC.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&header).expect("header serializes").as_bytes());
        out.push(b'\n');
        out.extend_from_slice(&payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TrainError> {
        let corrupt = |m: &str| TrainError::Corrupt(m.to_string());
        let magic_end = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("missing magic line"))?;
        if &bytes[..magic_end] != CHECKPOINT_MAGIC.as_bytes() {
            return Err(corrupt("not a checkpoint file"));
        }
        let rest = &bytes[magic_end + 1..];
        let header_end = rest.iter().position(|&b| b == b'\n').ok_or_else(|| corrupt("truncated header"))?;
        let header_value: serde_json::Value =
            serde_json::from_slice(&rest[..header_end]).map_err(|e| TrainError::Corrupt(format!("header: {e}")))?;
        let version = header_value.get("version").and_then(|v| v.as_u64()).ok_or_else(|| corrupt("header has no version"))?;
        if version != u64::from(CHECKPOINT_VERSION) {
            return Err(TrainError::Version {
                found: version,
                supported: CHECKPOINT_VERSION,
            });
        }
        let header: Header = serde_json::from_value(header_value).map_err(|e| TrainError::Corrupt(format!("header: {e}")))?;
        let actual = header.vocabs.fingerprint();
        if actual != header.fingerprint {
            return Err(TrainError::Fingerprint {
                expected: header.fingerprint,
                found: actual,
            });
        }
        let payload = &rest[header_end + 1..];
        let mut params = ParamStore::new();
        let mut pos = 0usize;
        for t in &header.tensors {
            let len_bytes = payload.get(pos..pos + 8).ok_or_else(|| corrupt("truncated payload"))?;
            let len = u64::from_le_bytes(len_bytes.try_into().expect("8 bytes")) as usize;
            pos += 8;
            let expected = t.shape.iter().product::<usize>() * 8;
            if len != expected {
                return Err(TrainError::Corrupt(format!(
                    "tensor {} holds {len} bytes, shape needs {expected}",
                    t.name
                )));
            }
            let raw = payload.get(pos..pos + len).ok_or_else(|| corrupt("truncated payload"))?;
            pos += len;
            let data = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            let tensor = Tensor::new(t.shape.clone(), data).map_err(|e| TrainError::Corrupt(e.to_string()))?;
            if params.id(&t.name).is_some() {
                return Err(TrainError::Corrupt(format!("duplicate tensor {}", t.name)));
            }
            params.add(t.name.clone(), tensor);
        }
        if pos != payload.len() {
            return Err(corrupt("trailing bytes after payload"));
        }
        if hex::encode(Sha256::digest(payload)) != header.payload_sha256 {
            return Err(corrupt("payload digest mismatch"));
        }
        let ckpt = Self {
            version: header.version,
            config: header.config,
            vocabs: header.vocabs,
            fingerprint: header.fingerprint,
            params,
            history: header.history,
        };
        ckpt.to_model()?;
        Ok(ckpt)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), TrainError> {
    let io = |e: std::io::Error| TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    let mut f = std::fs::File::create(path).map_err(io)?;
    f.write_all(&ckpt.to_bytes()).map_err(io)?;
    f.flush().map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, TrainError> {
    let bytes = std::fs::read(path).map_err(|e| TrainError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    Checkpoint::from_bytes(&bytes)
}

/// Loads a checkpoint and refuses it unless its vocabulary fingerprint
/// equals `expected`.
pub fn load_checkpoint_for(path: &Path, expected: &str) -> Result<Checkpoint, TrainError> {
    let ckpt = load_checkpoint(path)?;
    if ckpt.fingerprint != expected {
        return Err(TrainError::Fingerprint {
            expected: expected.to_string(),
            found: ckpt.fingerprint,
        });
    }
    Ok(ckpt)
}
