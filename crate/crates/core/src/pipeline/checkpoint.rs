//! Binary checkpoint format.
//!
//! ```text
//! "VSCK" | version u16 | schema hash u64 | json len u32 | canonical JSON config
//! block count u32 | { name len u16 | name | rows u32 | cols u32 | rows*cols f64 }*
//! ```
//!
//! Integers and floats are little-endian.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::train::TrainConfig;
use super::transfer::TransferConfig;
use crate::dataset::{FeatureSchema, StandardizationStats};
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::tensor::Tensor2;

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"VSCK";
pub const CHECKPOINT_VERSION: u16 = 1;

/// How the stored model was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "role", rename_all = "snake_case")]
pub enum Provenance {
    Trained { train: TrainConfig },
    Transferred { transfer: TransferConfig },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    /// Statistics the model's inputs were standardized with.
    pub stats: StandardizationStats,
    pub provenance: Provenance,
    /// Source-city model before fine-tuning, kept for transferred checkpoints.
    pub pretrained: Option<Model>,
    /// Neighbours per sensor in the k-NN graph the model was trained on.
    pub graph_k: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelSpec,
    n_features: usize,
    provenance: Provenance,
    has_pretrained: bool,
    graph_k: usize,
}

fn row(v: &[f64]) -> Tensor2 {
    Tensor2::from_rows(&[v.to_vec()]).expect("single row")
}

impl Checkpoint {
    fn blocks(&self) -> Vec<(String, Tensor2)> {
        let mut out: Vec<(String, Tensor2)> = self
            .model
            .named_tensors()
            .into_iter()
            .map(|(n, t)| (format!("model.{n}"), t))
            .collect();
        if let Some(p) = &self.pretrained {
            out.extend(p.named_tensors().into_iter().map(|(n, t)| (format!("init.{n}"), t)));
        }
        out.push(("stats.mean".into(), row(&self.stats.mean)));
        out.push(("stats.std".into(), row(&self.stats.std)));
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        if !self.model.is_finite() || self.pretrained.as_ref().is_some_and(|p| !p.is_finite()) {
            return Err(Error::Checkpoint("refusing to save non-finite parameters".into()));
        }
        let n_features = self.model.n_features();
        if self.stats.mean.len() != n_features || self.stats.std.len() != n_features {
            return Err(Error::Checkpoint("statistics width differs from model input width".into()));
        }
        let header = Header {
            model: self.model.spec(),
            n_features,
            provenance: self.provenance.clone(),
            has_pretrained: self.pretrained.is_some(),
            graph_k: self.graph_k,
        };
        let json = serde_json::to_string(&serde_json::to_value(&header)?)?;
        let blocks = self.blocks();
        let mut out = Vec::new();
        out.extend_from_slice(&CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&FeatureSchema::standard().hash().to_le_bytes());
        out.extend_from_slice(&u32::try_from(json.len()).map_err(|_| Error::Checkpoint("config too large".into()))?.to_le_bytes());
        out.extend_from_slice(json.as_bytes());
        out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
        for (name, t) in &blocks {
            out.extend_from_slice(&(name.len() as u16).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.rows() as u32).to_le_bytes());
            out.extend_from_slice(&(t.cols() as u32).to_le_bytes());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        read_exact(&mut r, &mut magic)?;
        if magic != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file".into()));
        }
        let version = u16::from_le_bytes(take(&mut r)?);
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let hash = u64::from_le_bytes(take(&mut r)?);
        let expected = FeatureSchema::standard().hash();
        if hash != expected {
            return Err(Error::SchemaMismatch(format!(
                "checkpoint schema {hash:016x}, this build uses {expected:016x}"
            )));
        }
        let json_len = u32::from_le_bytes(take(&mut r)?) as usize;
        let json = take_vec(&mut r, json_len)?;
        let header: Header = serde_json::from_slice(&json)?;
        let n_blocks = u32::from_le_bytes(take(&mut r)?);
        let mut blocks = BTreeMap::new();
        for _ in 0..n_blocks {
            let name_len = u16::from_le_bytes(take(&mut r)?) as usize;
            let name = String::from_utf8(take_vec(&mut r, name_len)?)
                .map_err(|_| Error::Checkpoint("block name is not UTF-8".into()))?;
            let rows = u32::from_le_bytes(take(&mut r)?) as usize;
            let cols = u32::from_le_bytes(take(&mut r)?) as usize;
            let len = rows
                .checked_mul(cols)
                .filter(|&n| n.saturating_mul(8) <= r.len())
                .ok_or_else(|| Error::Checkpoint(format!("block `{name}` is truncated")))?;
            let data = (0..len)
                .map(|_| take(&mut r).map(f64::from_le_bytes))
                .collect::<Result<Vec<_>>>()?;
            if blocks.insert(name.clone(), Tensor2::from_vec(rows, cols, data)?).is_some() {
                return Err(Error::Checkpoint(format!("duplicate block `{name}`")));
            }
        }
        if !r.is_empty() {
            return Err(Error::Checkpoint("trailing bytes after the last block".into()));
        }
        let stat = |key: &str| -> Result<Vec<f64>> {
            let t = blocks
                .get(key)
                .ok_or_else(|| Error::Checkpoint(format!("missing block `{key}`")))?;
            if t.shape() != (1, header.n_features) {
                return Err(Error::Checkpoint(format!("block `{key}` has the wrong width")));
            }
            Ok(t.data().to_vec())
        };
        let stats = StandardizationStats {
            mean: stat("stats.mean")?,
            std: stat("stats.std")?,
        };
        let model = Model::from_blocks(&header.model, header.n_features, &blocks, "model.")?;
        let pretrained = header
            .has_pretrained
            .then(|| Model::from_blocks(&header.model, header.n_features, &blocks, "init."))
            .transpose()?;
        Ok(Self {
            model,
            stats,
            provenance: header.provenance,
            pretrained,
            graph_k: header.graph_k,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        std::fs::File::create(path)?.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }
}

fn read_exact(r: &mut &[u8], buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Checkpoint("unexpected end of checkpoint".into()))
}

fn take<const N: usize>(r: &mut &[u8]) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

fn take_vec(r: &mut &[u8], n: usize) -> Result<Vec<u8>> {
    if n > r.len() {
        return Err(Error::Checkpoint("unexpected end of checkpoint".into()));
    }
    let mut buf = vec![0u8; n];
    read_exact(r, &mut buf)?;
    Ok(buf)
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path)
}
