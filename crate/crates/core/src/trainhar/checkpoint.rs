//! Checkpoint container.
//!
//! ```text
//! bytes 0..8    magic "OCCLCKPT"
//! bytes 8..12   format version, u32 little endian
//! bytes 12..20  header length n, u64 little endian
//! next n bytes  JSON header (architecture, classes, taxonomy, config hash, layer shapes)
//! rest          every layer's weights then biases, in header order, f32 little endian
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::layers::Conv;
use super::model::{ToyPanopticModel, ARCHITECTURE, LAYER_NAMES};
use crate::error::{Error, Result};
use crate::pandata::Taxonomy;

pub const MAGIC: &[u8; 8] = b"OCCLCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerShape {
    pub name: String,
    pub inp: usize,
    pub out: usize,
    pub k: usize,
    pub stride: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointHeader {
    pub architecture: String,
    pub num_classes: usize,
    pub taxonomy: Taxonomy,
    pub config_hash: String,
    pub layers: Vec<LayerShape>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: ToyPanopticModel,
    pub taxonomy: Taxonomy,
    pub config_hash: String,
}

impl Checkpoint {
    fn header(&self) -> CheckpointHeader {
        CheckpointHeader {
            architecture: ARCHITECTURE.to_string(),
            num_classes: self.model.num_classes,
            taxonomy: self.taxonomy.clone(),
            config_hash: self.config_hash.clone(),
            layers: self
                .model
                .layers
                .iter()
                .zip(LAYER_NAMES)
                .map(|(l, name)| LayerShape {
                    name: name.to_string(),
                    inp: l.inp,
                    out: l.out,
                    k: l.k,
                    stride: l.stride,
                })
                .collect(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header()).expect("header serializes");
        let mut out = Vec::with_capacity(20 + header.len() + 4 * self.model.num_parameters());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for l in &self.model.layers {
            for v in l.weight.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: String| Error::Checkpoint(msg);
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a checkpoint file (bad magic)".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!("format version {version}, expected {FORMAT_VERSION}")));
        }
        let len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let body = bytes.get(20..20usize.saturating_add(len)).ok_or_else(|| bad("truncated header".into()))?;
        let header: CheckpointHeader =
            serde_json::from_slice(body).map_err(|e| bad(format!("unreadable header: {e}")))?;
        if header.architecture != ARCHITECTURE {
            return Err(bad(format!(
                "architecture {:?} does not match {ARCHITECTURE:?}",
                header.architecture
            )));
        }
        header.taxonomy.validate()?;
        if header.num_classes != header.taxonomy.len() {
            return Err(bad(format!(
                "{} output classes for a taxonomy of {} categories",
                header.num_classes,
                header.taxonomy.len()
            )));
        }
        let mut model = ToyPanopticModel::new(header.num_classes, 0);
        let expected: Vec<LayerShape> = Checkpoint {
            model: model.clone(),
            taxonomy: header.taxonomy.clone(),
            config_hash: String::new(),
        }
        .header()
        .layers;
        if header.layers != expected {
            return Err(bad("layer shapes do not match the architecture".into()));
        }
        let payload = &bytes[20 + len..];
        if payload.len() != 4 * model.num_parameters() {
            return Err(bad(format!(
                "payload has {} bytes, expected {}",
                payload.len(),
                4 * model.num_parameters()
            )));
        }
        let mut values = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")));
        for l in &mut model.layers {
            let Conv { weight, bias, .. } = l;
            for v in weight.iter_mut().chain(bias.iter_mut()) {
                *v = values.next().expect("length checked");
            }
        }
        Ok(Checkpoint {
            model,
            taxonomy: header.taxonomy,
            config_hash: header.config_hash,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}
