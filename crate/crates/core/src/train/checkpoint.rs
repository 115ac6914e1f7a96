//! Binary checkpoint: magic, length-prefixed JSON header, raw f32 tensors.
//!
//! ```text
//! "SEMF0001" | u64 LE header length | header JSON | f32 LE data
//! ```
//!
//! Data order: coarse params, fine params, coarse m, coarse v, fine m,
//! fine v. Within a network, trunk layers in depth order, then density,
//! semantic hidden, semantic head; weight before bias, row-major out×in.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::adam::AdamState;
use super::TrainConfig;
use crate::error::{Error, Result};
use crate::field::{FieldConfig, FieldParams};

pub const MAGIC: &[u8; 8] = b"SEMF0001";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the data section.
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub version: u32,
    pub iteration: u64,
    pub coarse_adam_step: u64,
    pub fine_adam_step: u64,
    pub coarse_config: FieldConfig,
    pub fine_config: FieldConfig,
    pub train_config: TrainConfig,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
    pub tensors: Vec<TensorEntry>,
}

/// Everything needed to resume or render.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub iteration: u64,
    pub coarse: FieldParams<f32>,
    pub fine: FieldParams<f32>,
    pub coarse_adam: AdamState<f32>,
    pub fine_adam: AdamState<f32>,
    pub train_config: TrainConfig,
    pub metadata: BTreeMap<String, String>,
}

fn sections(ckpt: &Checkpoint) -> [(&'static str, &FieldParams<f32>); 6] {
    [
        ("coarse", &ckpt.coarse),
        ("fine", &ckpt.fine),
        ("coarse.adam_m", &ckpt.coarse_adam.m),
        ("coarse.adam_v", &ckpt.coarse_adam.v),
        ("fine.adam_m", &ckpt.fine_adam.m),
        ("fine.adam_v", &ckpt.fine_adam.v),
    ]
}

impl Checkpoint {
    pub fn header(&self) -> CheckpointHeader {
        let mut tensors = Vec::new();
        let mut offset = 0u64;
        for (prefix, params) in sections(self) {
            for (name, shape, data) in params.tensors() {
                tensors.push(TensorEntry {
                    name: format!("{prefix}.{name}"),
                    shape,
                    offset,
                });
                offset += 4 * data.len() as u64;
            }
        }
        CheckpointHeader {
            version: CHECKPOINT_VERSION,
            iteration: self.iteration,
            coarse_adam_step: self.coarse_adam.step,
            fine_adam_step: self.fine_adam.step,
            coarse_config: self.coarse.config.clone(),
            fine_config: self.fine.config.clone(),
            train_config: self.train_config.clone(),
            metadata: self.metadata.clone(),
            tensors,
        }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&self.header())?;
        let mut out = Vec::with_capacity(16 + header.len() + 4 * 6 * self.coarse.num_parameters());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, params) in sections(self) {
            for (_, _, data) in params.tensors() {
                for v in data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let fmt = |msg: String| Error::Format(msg);
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(fmt("not a checkpoint (bad magic)".into()));
        }
        let header_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize
            .checked_add(header_len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| fmt("truncated header".into()))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| fmt(format!("header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(fmt(format!(
                "checkpoint version {} (expected {CHECKPOINT_VERSION})",
                header.version
            )));
        }
        let data = &bytes[data_start..];

        let coarse = FieldParams::<f32>::zeros(&header.coarse_config)?;
        let fine = FieldParams::<f32>::zeros(&header.fine_config)?;
        let mut ckpt = Checkpoint {
            iteration: header.iteration,
            coarse_adam: AdamState::new(&coarse),
            fine_adam: AdamState::new(&fine),
            coarse,
            fine,
            train_config: header.train_config.clone(),
            metadata: header.metadata.clone(),
        };
        ckpt.coarse_adam.step = header.coarse_adam_step;
        ckpt.fine_adam.step = header.fine_adam_step;

        let expected = ckpt.header().tensors;
        if expected.len() != header.tensors.len() {
            return Err(fmt(format!(
                "tensor table has {} entries, configs imply {}",
                header.tensors.len(),
                expected.len()
            )));
        }
        for (want, got) in expected.iter().zip(&header.tensors) {
            if want != got {
                return Err(fmt(format!("tensor table mismatch at {}", got.name)));
            }
        }
        let total: usize = sections(&ckpt)
            .iter()
            .map(|(_, p)| 4 * p.num_parameters())
            .sum();
        if data.len() != total {
            return Err(fmt(format!(
                "data section is {} bytes, expected {total}",
                data.len()
            )));
        }
        let mut chunks = data.chunks_exact(4);
        for params in [
            &mut ckpt.coarse,
            &mut ckpt.fine,
            &mut ckpt.coarse_adam.m,
            &mut ckpt.coarse_adam.v,
            &mut ckpt.fine_adam.m,
            &mut ckpt.fine_adam.v,
        ] {
            for tensor in params.tensors_mut() {
                for (v, c) in tensor.iter_mut().zip(chunks.by_ref()) {
                    *v = f32::from_le_bytes(c.try_into().expect("4 bytes"));
                }
            }
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::Load {
            path: path.to_path_buf(),
            detail: e.to_string(),
        })?;
        Self::from_bytes(&bytes)
    }
}
