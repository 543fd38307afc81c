//! Binary checkpoint files.
//!
//! Layout: the magic bytes `VLCD`, a little-endian `u32` format version, a
//! little-endian `u64` metadata length, that many bytes of UTF-8 JSON
//! metadata, then every tensor as little-endian `f64` values in the order the
//! metadata lists them.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{Stage, TrainConfig};
use crate::encoders::{EncoderParams, EncoderSpec};
use crate::numerics::Tensor;

pub const MAGIC: [u8; 4] = *b"VLCD";
pub const FORMAT_VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint: bad magic bytes {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (expected {FORMAT_VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated: needed {needed} bytes, found {found}")]
    Truncated { needed: u64, found: u64 },
    #[error("checkpoint metadata invalid: {0}")]
    Metadata(String),
    #[error("checkpoint tensor shapes invalid: {0}")]
    Shape(String),
    #[error("checkpoint has {0} unexpected trailing bytes")]
    TrailingBytes(u64),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorDescriptor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointMeta {
    pub encoder: EncoderSpec,
    pub stage: Stage,
    pub config: Option<TrainConfig>,
    pub seed: u64,
    pub epoch: usize,
    /// sha256 prefix of the run's JSONL loss log; empty when there was no run.
    pub loss_digest: String,
    /// Where the initial parameters came from: `fresh`, or `<stage>:<digest>`.
    pub init: String,
    pub data_hash: String,
    pub config_hash: String,
    pub tensors: Vec<TensorDescriptor>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: EncoderParams,
}

fn descriptors(params: &EncoderParams) -> Vec<TensorDescriptor> {
    params
        .layers
        .iter()
        .enumerate()
        .flat_map(|(i, l)| {
            [
                TensorDescriptor {
                    name: format!("layer{i}.weight"),
                    rows: l.weight.rows(),
                    cols: l.weight.cols(),
                },
                TensorDescriptor {
                    name: format!("layer{i}.bias"),
                    rows: l.bias.rows(),
                    cols: l.bias.cols(),
                },
            ]
        })
        .collect()
}

impl Checkpoint {
    /// Wraps parameters that did not come from a training run.
    pub fn untrained(params: EncoderParams, stage: Stage, seed: u64) -> Self {
        let meta = CheckpointMeta {
            encoder: params.spec.clone(),
            stage,
            config: None,
            seed,
            epoch: 0,
            loss_digest: String::new(),
            init: "fresh".into(),
            data_hash: String::new(),
            config_hash: String::new(),
            tensors: descriptors(&params),
        };
        Self { meta, params }
    }

    pub(crate) fn refresh_descriptors(&mut self) {
        self.meta.encoder = self.params.spec.clone();
        self.meta.tensors = descriptors(&self.params);
    }

    /// Short identifier derived from the serialized bytes.
    pub fn digest(&self) -> Result<String, CheckpointError> {
        use sha2::{Digest, Sha256};
        let bytes = self.to_bytes()?;
        Ok(hex::encode(&Sha256::digest(&bytes)[..8]))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        if self.meta.tensors != descriptors(&self.params) || self.meta.encoder != self.params.spec {
            return Err(CheckpointError::Shape(
                "metadata does not describe the parameters it accompanies".into(),
            ));
        }
        let meta = serde_json::to_vec(&self.meta).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
        let floats: usize = self.params.scalar_count();
        let mut out = Vec::with_capacity(HEADER_LEN + meta.len() + 8 * floats);
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for t in self.params.tensors() {
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let found = bytes.len() as u64;
        let need = |needed: u64| {
            if found < needed {
                Err(CheckpointError::Truncated { needed, found })
            } else {
                Ok(())
            }
        };
        need(4)?;
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic(magic));
        }
        need(HEADER_LEN as u64)?;
        let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let meta_end = (HEADER_LEN as u64)
            .checked_add(meta_len)
            .ok_or_else(|| CheckpointError::Metadata("metadata length overflows".into()))?;
        need(meta_end)?;
        let meta_end = meta_end as usize;
        let meta: CheckpointMeta = serde_json::from_slice(&bytes[HEADER_LEN..meta_end])
            .map_err(|e| CheckpointError::Metadata(e.to_string()))?;

        let expected = descriptors_for_spec(&meta.encoder)?;
        if meta.tensors != expected {
            return Err(CheckpointError::Shape(format!(
                "tensor list does not follow encoder '{}' layer chain",
                meta.encoder.name
            )));
        }
        let floats: u64 = meta.tensors.iter().map(|t| (t.rows * t.cols) as u64).sum();
        let end = meta_end as u64 + 8 * floats;
        need(end)?;
        if found > end {
            return Err(CheckpointError::TrailingBytes(found - end));
        }
        let mut offset = meta_end;
        let mut tensors = Vec::with_capacity(meta.tensors.len());
        for d in &meta.tensors {
            let n = d.rows * d.cols;
            let data = bytes[offset..offset + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            offset += 8 * n;
            tensors.push(Tensor::new(d.rows, d.cols, data).map_err(|e| CheckpointError::Shape(e.to_string()))?);
        }
        let params = EncoderParams::from_tensors(&meta.encoder, tensors)
            .map_err(|e| CheckpointError::Shape(e.to_string()))?;
        Ok(Self { meta, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn descriptors_for_spec(spec: &EncoderSpec) -> Result<Vec<TensorDescriptor>, CheckpointError> {
    let zeros = EncoderParams::zeros(spec).map_err(|e| CheckpointError::Metadata(e.to_string()))?;
    Ok(descriptors(&zeros))
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    ckpt.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::load(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;

    fn sample() -> Checkpoint {
        let spec = EncoderSpec::new("tiny", 3, vec![4], 2);
        let params = EncoderParams::init(&spec, &mut Rng::new(9)).unwrap();
        let mut c = Checkpoint::untrained(params, Stage::Predistill, 9);
        c.meta.config = Some(TrainConfig::predistill());
        c
    }

    #[test]
    fn roundtrip_is_bit_identical() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = sample().to_bytes().unwrap();
        assert_eq!(&bytes[..4], b"VLCD");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        let meta_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let floats = 3 * 4 + 4 + 4 * 2 + 2;
        assert_eq!(bytes.len(), 16 + meta_len + 8 * floats);
    }

    #[test]
    fn every_truncation_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        for cut in 0..bytes.len() {
            assert!(Checkpoint::from_bytes(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn typed_errors() {
        let bytes = sample().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic(_))));
        let mut bad = bytes.clone();
        bad[4] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::UnsupportedVersion(2))
        ));
        let mut bad = bytes.clone();
        bad.push(0);
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::TrailingBytes(1))));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated { .. })
        ));
        let mut bad = bytes;
        bad[16] = b'[';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Metadata(_))));
    }

    #[test]
    fn shape_chain_checked() {
        let mut c = sample();
        c.meta.tensors[0].rows = 5;
        assert!(matches!(c.to_bytes(), Err(CheckpointError::Shape(_))));
        let good = sample();
        let mut meta = good.meta.clone();
        meta.tensors.swap(0, 1);
        let json = serde_json::to_vec(&meta).unwrap();
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"VLCD");
        bytes.extend_from_slice(&1u32.to_le_bytes());
        bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
        bytes.extend_from_slice(&json);
        bytes.resize(bytes.len() + 8 * good.params.scalar_count(), 0);
        assert!(matches!(Checkpoint::from_bytes(&bytes), Err(CheckpointError::Shape(_))));
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nested/c.ckpt");
        let c = sample();
        save_checkpoint(&c, &p).unwrap();
        let back = load_checkpoint(&p).unwrap();
        assert_eq!(back, c);
        assert!(matches!(
            load_checkpoint(&dir.path().join("missing")),
            Err(CheckpointError::Io(_))
        ));
    }
}
