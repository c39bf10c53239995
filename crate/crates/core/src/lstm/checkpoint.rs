//! Model checkpoints: one line of JSON header, a newline, then every parameter
//! as a little-endian `f64` in [`ModelParams`] flat order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::params::ModelParams;
use super::ModelConfig;
use crate::error::{Error, Result};

const FORMAT: &str = "broomscan-lstm-checkpoint";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    format: String,
    config: ModelConfig,
    seed: u64,
    epoch: usize,
    n_params: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    pub seed: u64,
    pub epoch: usize,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            format: FORMAT.to_owned(),
            config: self.params.config().clone(),
            seed: self.seed,
            epoch: self.epoch,
            n_params: self.params.len(),
        };
        let mut out = serde_json::to_vec(&header)?;
        out.push(b'\n');
        for w in self.params.as_slice() {
            out.extend_from_slice(&w.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let split = bytes
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Format("checkpoint has no header line".into()))?;
        let header: Header = serde_json::from_slice(&bytes[..split])?;
        if header.format != FORMAT {
            return Err(Error::Format(format!(
                "not a checkpoint: format `{}`",
                header.format
            )));
        }
        let payload = &bytes[split + 1..];
        if payload.len() != header.n_params * 8 {
            return Err(Error::Format(format!(
                "checkpoint declares {} parameters but holds {} bytes",
                header.n_params,
                payload.len()
            )));
        }
        let data = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Checkpoint {
            params: ModelParams::from_vec(&header.config, data)?,
            seed: header.seed,
            epoch: header.epoch,
        })
    }
}

pub fn save_checkpoint(checkpoint: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, checkpoint.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}
