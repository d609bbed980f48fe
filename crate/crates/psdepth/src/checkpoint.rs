//! Versioned checkpoint files.
//!
//! Layout: the 8-byte magic `PSDCKPT\0`, a little-endian `u32` manifest
//! length, the JSON manifest, the parameter blocks as little-endian `f32`
//! (then the Adam first and second moments when present), and a SHA-256 of
//! everything before it. The manifest indexes every block by name, shape
//! and offset.

use std::fs;
use std::path::Path;

use psdepth_core::model::{ArchConfig, NetworkKind, NetworkParameters, Tensor};
use psdepth_core::optim::{Adam, AdamConfig};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::LossSection;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"PSDCKPT\0";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchManifest {
    pub widths: [usize; 3],
    pub classes: usize,
    pub d_max: f64,
    pub init_disparity: f64,
    pub cost_shifts: usize,
}

impl From<&ArchConfig> for ArchManifest {
    fn from(a: &ArchConfig) -> Self {
        Self {
            widths: a.widths,
            classes: a.classes,
            d_max: a.d_max,
            init_disparity: a.init_disparity,
            cost_shifts: a.cost_shifts,
        }
    }
}

impl From<&ArchManifest> for ArchConfig {
    fn from(a: &ArchManifest) -> Self {
        Self {
            widths: a.widths,
            classes: a.classes,
            d_max: a.d_max,
            init_disparity: a.init_disparity,
            cost_shifts: a.cost_shifts,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset of the block in `f32` words from the start of the payload.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
}

/// Everything about a checkpoint except the weights.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub kind: String,
    pub arch: ArchManifest,
    /// Epochs completed.
    pub epoch: usize,
    pub seed: u64,
    pub phase: String,
    pub loss_weights: LossSection,
    /// Digest of the dataset the network was trained on.
    pub dataset_digest: String,
    /// Mean total loss per task of the last completed epoch.
    pub final_losses: Vec<(String, f64)>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    metadata: Metadata,
    optimizer: Option<OptimizerState>,
    tensors: Vec<TensorEntry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub metadata: Metadata,
    pub params: NetworkParameters<f32>,
    pub adam: Option<Adam>,
}

fn parse_kind(name: &str) -> Option<NetworkKind> {
    match name {
        "teacher" => Some(NetworkKind::Teacher),
        "student" => Some(NetworkKind::Student),
        _ => None,
    }
}

impl Checkpoint {
    pub fn kind(&self) -> NetworkKind {
        self.params.kind()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut entries = Vec::new();
        let mut offset = 0;
        for t in self.params.tensors() {
            entries.push(TensorEntry {
                name: t.name.clone(),
                shape: t.shape.clone(),
                offset,
            });
            offset += t.data.len();
        }
        let manifest = Manifest {
            format_version: FORMAT_VERSION,
            metadata: self.metadata.clone(),
            optimizer: self.adam.as_ref().map(|a| OptimizerState {
                lr: a.config.lr,
                beta1: a.config.beta1,
                beta2: a.config.beta2,
                eps: a.config.eps,
                step: a.step,
            }),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(12 + json.len() + offset * 12 + DIGEST_LEN);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        let mut blocks = vec![&self.params];
        if let Some(a) = &self.adam {
            blocks.push(&a.m);
            blocks.push(&a.v);
        }
        for b in blocks {
            for t in b.tensors() {
                for v in &t.data {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let reject = |msg: String| Error::Checkpoint {
            path: path.to_path_buf(),
            msg,
        };
        if bytes.len() < MAGIC.len() + 4 + DIGEST_LEN || &bytes[..MAGIC.len()] != MAGIC {
            return Err(reject(String::from("not a checkpoint file (bad magic or too short)")));
        }
        let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
        if Sha256::digest(body).as_slice() != digest {
            return Err(reject(String::from("checksum mismatch (truncated or corrupted)")));
        }
        let len = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes")) as usize;
        let json = body
            .get(12..12 + len)
            .ok_or_else(|| reject(String::from("manifest length exceeds file size")))?;
        let manifest: Manifest =
            serde_json::from_slice(json).map_err(|e| reject(format!("malformed manifest: {e}")))?;
        if manifest.format_version != FORMAT_VERSION {
            return Err(reject(format!(
                "format version {} is not supported (expected {FORMAT_VERSION})",
                manifest.format_version
            )));
        }
        let kind = parse_kind(&manifest.metadata.kind)
            .ok_or_else(|| reject(format!("unknown network kind {:?}", manifest.metadata.kind)))?;
        let arch = ArchConfig::from(&manifest.metadata.arch);
        let payload = &body[12 + len..];
        if payload.len() % 4 != 0 {
            return Err(reject(String::from("payload is not a whole number of f32 words")));
        }
        let words: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let count: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
        let blocks = if manifest.optimizer.is_some() { 3 } else { 1 };
        if words.len() != count * blocks {
            return Err(reject(format!(
                "payload holds {} values, manifest describes {}",
                words.len(),
                count * blocks
            )));
        }
        let block = |b: usize| -> Result<NetworkParameters<f32>> {
            let mut tensors = Vec::with_capacity(manifest.tensors.len());
            for e in &manifest.tensors {
                let n: usize = e.shape.iter().product();
                let start = b * count + e.offset;
                let data = words
                    .get(start..start + n)
                    .ok_or_else(|| reject(format!("tensor {} lies outside the payload", e.name)))?
                    .to_vec();
                tensors.push(Tensor {
                    name: e.name.clone(),
                    shape: e.shape.clone(),
                    data,
                });
            }
            NetworkParameters::from_tensors(kind, arch, tensors).map_err(|e| reject(e.to_string()))
        };
        let params = block(0)?;
        let adam = match &manifest.optimizer {
            None => None,
            Some(o) => Some(Adam {
                config: AdamConfig {
                    lr: o.lr,
                    beta1: o.beta1,
                    beta2: o.beta2,
                    eps: o.eps,
                },
                step: o.step,
                m: block(1)?,
                v: block(2)?,
            }),
        };
        Ok(Self {
            metadata: manifest.metadata,
            params,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let tmp = path.with_extension("tmp");
        fs::write(&tmp, self.encode()).map_err(|e| Error::io(&tmp, e))?;
        fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, path)
    }

    /// SHA-256 of the encoded file.
    pub fn digest(&self) -> String {
        format!("{:x}", Sha256::digest(self.encode()))
    }
}
