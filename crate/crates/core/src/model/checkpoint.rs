//! Named-tensor checkpoint files.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! "HYDR"            4 bytes magic
//! version           1 byte
//! header_len        u32
//! header            header_len bytes of UTF-8 JSON: kind, config, task, entries[{name, shape}]
//! payload           f32 values of every entry, in manifest order
//! ```
//!
//! Values are held as `f32` once a checkpoint exists, so loading and saving
//! again reproduces the original bytes.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::body::TransformerBody;
use super::config::ModelConfig;
use super::encoder::{Encoder, TaskInfo};
use super::heads::HydraHeads;
use crate::error::{CheckpointError, HydraError, Result};
use crate::param::{ParamSet, Parameter};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 4] = *b"HYDR";
pub const FORMAT_VERSION: u8 = 1;
/// Magic, version byte and header-length prefix.
pub const PREAMBLE_BYTES: usize = 4 + 1 + 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckpointKind {
    Body,
    Heads,
    Model,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryMeta {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    kind: CheckpointKind,
    config: ModelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    task: Option<TaskInfo>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    hydra: bool,
    entries: Vec<EntryMeta>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: CheckpointKind,
    pub config: ModelConfig,
    pub task: Option<TaskInfo>,
    pub hydra: bool,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    pub fn from_params(kind: CheckpointKind, config: ModelConfig, params: &ParamSet) -> Self {
        let entries = params
            .iter()
            .map(|p| Entry {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                data: p.value.data().iter().map(|&x| x as f32).collect(),
            })
            .collect();
        Checkpoint {
            kind,
            config,
            task: None,
            hydra: false,
            entries,
        }
    }

    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.data.len()).sum()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }

    fn header(&self) -> Header {
        Header {
            kind: self.kind,
            config: self.config.clone(),
            task: self.task.clone(),
            hydra: self.hydra,
            entries: self
                .entries
                .iter()
                .map(|e| EntryMeta {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut out = Vec::with_capacity(PREAMBLE_BYTES + header.len() + 4 * self.scalar_count());
        out.extend_from_slice(&MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for e in &self.entries {
            for v in &e.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let take = |from: usize, len: usize| -> Result<&[u8], CheckpointError> {
            bytes.get(from..from + len).ok_or(CheckpointError::Truncated {
                needed: from + len,
                available: bytes.len(),
            })
        };
        let magic: [u8; 4] = take(0, 4)?.try_into().unwrap();
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        let version = take(4, 1)?[0];
        if version != FORMAT_VERSION {
            return Err(CheckpointError::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let header_len = u32::from_le_bytes(take(5, 4)?.try_into().unwrap()) as usize;
        let header: Header = serde_json::from_slice(take(PREAMBLE_BYTES, header_len)?)
            .map_err(|e| CheckpointError::MalformedHeader(e.to_string()))?;

        let mut offset = PREAMBLE_BYTES + header_len;
        let mut entries = Vec::with_capacity(header.entries.len());
        let mut seen = std::collections::HashSet::new();
        for meta in header.entries {
            if !seen.insert(meta.name.clone()) {
                return Err(CheckpointError::HeaderMismatch(format!(
                    "duplicate entry {}",
                    meta.name
                )));
            }
            if meta.shape.is_empty() || meta.shape.len() > 3 || meta.shape.contains(&0) {
                return Err(CheckpointError::HeaderMismatch(format!(
                    "entry {} has invalid shape {:?}",
                    meta.name, meta.shape
                )));
            }
            let n: usize = meta.shape.iter().product();
            let raw = take(offset, 4 * n)?;
            offset += 4 * n;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            entries.push(Entry {
                name: meta.name,
                shape: meta.shape,
                data,
            });
        }
        if offset != bytes.len() {
            return Err(CheckpointError::HeaderMismatch(format!(
                "{} trailing bytes after the last entry",
                bytes.len() - offset
            )));
        }
        Ok(Checkpoint {
            kind: header.kind,
            config: header.config,
            task: header.task,
            hydra: header.hydra,
            entries,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| HydraError::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| HydraError::io(path, e))?;
        Ok(Self::from_bytes(&bytes)?)
    }

    pub fn to_param_set(&self) -> Result<ParamSet> {
        let mut set = ParamSet::new();
        for e in &self.entries {
            let value = Tensor::new(e.shape.clone(), e.data.iter().map(|&x| x as f64).collect())?;
            set.insert(Parameter::new(e.name.clone(), value))?;
        }
        Ok(set)
    }

    fn expect_kind(&self, kind: CheckpointKind) -> Result<()> {
        if self.kind != kind {
            return Err(HydraError::Compatibility(format!(
                "expected a {kind:?} checkpoint, found {:?}",
                self.kind
            )));
        }
        Ok(())
    }
}

/// Saves a named parameter set as a checkpoint of the given kind.
pub fn save_checkpoint(
    kind: CheckpointKind,
    config: &ModelConfig,
    params: &ParamSet,
    path: impl AsRef<Path>,
) -> Result<()> {
    Checkpoint::from_params(kind, config.clone(), params).save(path)
}

/// Loads the named tensors of any checkpoint.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::load(path)
}

impl TransformerBody {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(CheckpointKind::Body, self.config.clone(), &self.params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Body)?;
        TransformerBody::from_params(ckpt.config.clone(), ckpt.to_param_set()?)
    }
}

impl HydraHeads {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::from_params(CheckpointKind::Heads, self.config.clone(), &self.params)
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Heads)?;
        HydraHeads::from_params(ckpt.config.clone(), ckpt.to_param_set()?)
    }

    /// Loads heads and checks that they were built for `config`.
    pub fn from_checkpoint_for(ckpt: &Checkpoint, config: &ModelConfig) -> Result<Self> {
        if &ckpt.config != config {
            return Err(HydraError::Compatibility(format!(
                "heads checkpoint was built for {:?}, body is {config:?}",
                ckpt.config
            )));
        }
        Self::from_checkpoint(ckpt)
    }
}

impl Encoder {
    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::from_params(CheckpointKind::Model, self.config.clone(), &self.params);
        c.task = Some(self.task.clone());
        c.hydra = self.has_hydra();
        c
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.expect_kind(CheckpointKind::Model)?;
        let task = ckpt
            .task
            .clone()
            .ok_or_else(|| HydraError::Compatibility("model checkpoint lacks task info".into()))?;
        Encoder::from_params(ckpt.config.clone(), task, ckpt.to_param_set()?, ckpt.hydra)
    }
}

/// Payload bytes implied by a scalar count.
pub fn payload_bytes(scalars: usize) -> usize {
    4 * scalars
}
