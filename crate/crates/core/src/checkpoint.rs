//! Single-file training checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "SDCKPT\0\0" | version u32 | header length u64 | header JSON
//! | parameters f64... | first moments f64... | second moments f64...
//! | CRC-32 of everything before it
//! ```
//!
//! The header records the iteration, the optimizer step count, the full
//! configuration as TOML and the name and shape of every parameter.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use siamdefect_grad::{ParamId, Tensor};

use crate::config::Config;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::optim::AdamW;

pub const MAGIC: &[u8; 8] = b"SDCKPT\0\0";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    iteration: usize,
    optimizer_steps: u64,
    config: String,
    params: Vec<(String, Vec<usize>)>,
}

/// Everything needed to resume a run.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: Config,
    pub model: Model,
    pub optimizer: AdamW,
    /// Number of completed training steps.
    pub iteration: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            iteration: self.iteration,
            optimizer_steps: self.optimizer.steps,
            config: self.config.to_toml_string(),
            params: self
                .model
                .store
                .iter()
                .map(|(_, n, t)| (n.to_string(), t.shape().to_vec()))
                .collect(),
        };
        let header = serde_json::to_vec(&header).expect("header serialises");
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        let tensors = self
            .model
            .store
            .iter()
            .map(|(_, _, t)| t)
            .chain(&self.optimizer.m)
            .chain(&self.optimizer.v);
        for t in tensors {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        if bytes.len() < 20 + 4 || &bytes[..8] != MAGIC {
            return Err(corrupt("missing header"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != FORMAT_VERSION {
            return Err(Error::CheckpointVersion {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
            return Err(corrupt("checksum mismatch (truncated or modified file)"));
        }
        let hlen = u64::from_le_bytes(body[12..20].try_into().unwrap()) as usize;
        let header: Header = body
            .get(20..20 + hlen)
            .and_then(|h| serde_json::from_slice(h).ok())
            .ok_or_else(|| corrupt("unreadable header"))?;
        let config = Config::from_toml_str(&header.config)?.validate()?;
        let mut model = Model::new(&config.model, 0);
        if model.store.len() != header.params.len() {
            return Err(corrupt("parameter count does not match the configuration"));
        }
        for (i, (name, shape)) in header.params.iter().enumerate() {
            let t = model.store.get(ParamId(i));
            if model.store.name(ParamId(i)) != name || t.shape() != shape.as_slice() {
                return Err(corrupt(&format!(
                    "parameter {name} does not match the configuration"
                )));
            }
        }
        let mut floats = body[20 + hlen..]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
        let expected: usize = 3 * model.store.num_scalars();
        if body.len() - 20 - hlen != expected * 8 {
            return Err(corrupt("payload size does not match the header"));
        }
        let mut read = |shape: &[usize]| {
            let n = shape.iter().product();
            Tensor::new(shape.to_vec(), floats.by_ref().take(n).collect())
        };
        for (i, (_, shape)) in header.params.iter().enumerate() {
            *model.store.get_mut(ParamId(i)) = read(shape);
        }
        let m = header.params.iter().map(|(_, s)| read(s)).collect();
        let v = header.params.iter().map(|(_, s)| read(s)).collect();
        let optimizer = AdamW {
            weight_decay: config.train.weight_decay,
            m,
            v,
            steps: header.optimizer_steps,
        };
        Ok(Self {
            config,
            model,
            optimizer,
            iteration: header.iteration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
