//! Single-file binary checkpoints.
//!
//! Layout (little endian): magic `MSTC`, format version `u32`, header length
//! `u32`, JSON header, tensor count `u32`, then per tensor: name length `u16`,
//! UTF-8 name, rank `u8`, dims `u32` each, and `f32` values.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::ModelConfig;
use crate::error::NnError;
use crate::model::Transformer;
use crate::optim::{Adam, AdamConfig};
use crate::params::{ParamStore, Tensor};

pub const MAGIC: &[u8; 4] = b"MSTC";
pub const FORMAT_VERSION: u32 = 1;
const MOMENT1: &str = "adam.m.";
const MOMENT2: &str = "adam.v.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerHeader {
    pub config: AdamConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    vocab_hash: String,
    rng_seed: u64,
    step: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    optimizer: Option<OptimizerHeader>,
    #[serde(default)]
    extras: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub vocab_hash: String,
    pub optimizer: Option<Adam>,
    pub rng_seed: u64,
    /// Optimizer steps taken so far.
    pub step: u64,
    /// Model-specific metadata such as decision thresholds.
    pub extras: serde_json::Value,
}

impl ModelCheckpoint {
    pub fn new(model: &Transformer, vocab_hash: impl Into<String>, rng_seed: u64) -> Self {
        ModelCheckpoint {
            config: model.config().clone(),
            params: model.params().clone(),
            vocab_hash: vocab_hash.into(),
            optimizer: None,
            rng_seed,
            step: 0,
            extras: serde_json::Value::Null,
        }
    }

    pub fn with_optimizer(mut self, adam: &Adam) -> Self {
        self.step = adam.step;
        self.optimizer = Some(adam.clone());
        self
    }

    pub fn model(&self) -> Result<Transformer, NnError> {
        Transformer::from_params(self.config.clone(), self.params.clone())
    }

    pub fn check_vocab(&self, expected: &str) -> Result<(), NnError> {
        if self.vocab_hash != expected {
            return Err(NnError::VocabMismatch { expected: expected.to_string(), found: self.vocab_hash.clone() });
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            config: self.config.clone(),
            vocab_hash: self.vocab_hash.clone(),
            rng_seed: self.rng_seed,
            step: self.step,
            optimizer: self.optimizer.as_ref().map(|a| OptimizerHeader { config: a.config.clone(), step: a.step }),
            extras: self.extras.clone(),
        };
        let json = serde_json::to_vec(&header).expect("header serializes");
        let mut tensors: Vec<(String, &[usize], &[f64])> =
            self.params.tensors.iter().map(|t| (t.name.clone(), &t.shape[..], &t.data[..])).collect();
        if let Some(adam) = &self.optimizer {
            for (prefix, moments) in [(MOMENT1, &adam.m), (MOMENT2, &adam.v)] {
                for (t, m) in self.params.tensors.iter().zip(moments) {
                    tensors.push((format!("{prefix}{}", t.name), &t.shape[..], &m[..]));
                }
            }
        }
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
        for (name, shape, data) in tensors {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(shape.len() as u8);
            for &dim in shape {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for &x in data {
                out.extend_from_slice(&(x as f32).to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, NnError> {
        let mut r = ByteReader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(NnError::MalformedCheckpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(NnError::MalformedCheckpoint(format!("unsupported format version {version}")));
        }
        let len = r.u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| NnError::MalformedCheckpoint(format!("header: {e}")))?;
        let count = r.u32()?;
        let mut all = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = u16::from_le_bytes(r.take(2)?.try_into().expect("2 bytes")) as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| NnError::MalformedCheckpoint("tensor name is not UTF-8".into()))?;
            let rank = r.take(1)?[0] as usize;
            let shape = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(4).ok_or_else(|| NnError::MalformedCheckpoint("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64).collect();
            all.push(Tensor { name, shape, data });
        }
        if r.pos != bytes.len() {
            return Err(NnError::MalformedCheckpoint("trailing bytes".into()));
        }
        let (moments, weights): (Vec<Tensor>, Vec<Tensor>) =
            all.into_iter().partition(|t| t.name.starts_with(MOMENT1) || t.name.starts_with(MOMENT2));
        let params = ParamStore { tensors: weights };
        let optimizer = match header.optimizer {
            None => None,
            Some(h) => {
                let mut adam = Adam::new(h.config, &params);
                adam.step = h.step;
                for (prefix, slots) in [(MOMENT1, &mut adam.m), (MOMENT2, &mut adam.v)] {
                    for (t, slot) in params.tensors.iter().zip(slots.iter_mut()) {
                        let name = format!("{prefix}{}", t.name);
                        let m = moments
                            .iter()
                            .find(|m| m.name == name)
                            .ok_or_else(|| NnError::MalformedCheckpoint(format!("missing tensor {name}")))?;
                        if m.shape != t.shape {
                            return Err(NnError::MalformedCheckpoint(format!("tensor {name} has the wrong shape")));
                        }
                        slot.clone_from(&m.data);
                    }
                }
                Some(adam)
            }
        };
        Ok(ModelCheckpoint {
            config: header.config,
            params,
            vocab_hash: header.vocab_hash,
            optimizer,
            rng_seed: header.rng_seed,
            step: header.step,
            extras: header.extras,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], NnError> {
        if self.bytes.len() - self.pos < n {
            return Err(NnError::MalformedCheckpoint(format!("truncated at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, NnError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
}
