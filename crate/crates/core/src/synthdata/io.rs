//! Dataset files: `manifest.json` plus `data.bin`.
//!
//! `data.bin` is the concatenation of the blocks listed in the manifest, in
//! order. `f64` blocks are little-endian IEEE-754 doubles, `u8` blocks are raw
//! bytes; both are row-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetKind};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DATA_FILE: &str = "data.bin";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    U8,
}

impl Dtype {
    fn width(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockDescriptor {
    pub name: String,
    pub dtype: Dtype,
    pub rows: usize,
    pub cols: usize,
    pub offset: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub kind: DatasetKind,
    pub count: usize,
    pub image_dim: usize,
    pub text_dim: usize,
    pub seed: u64,
    pub config_hash: String,
    pub stream: String,
    pub tasks: Vec<usize>,
    pub blocks: Vec<BlockDescriptor>,
}

impl DatasetManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let text = fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn block(&self, name: &str) -> Option<&BlockDescriptor> {
        self.blocks.iter().find(|b| b.name == name)
    }
}

struct Writer {
    blocks: Vec<BlockDescriptor>,
    data: Vec<u8>,
}

impl Writer {
    fn f64_block(&mut self, name: &str, t: &Tensor) {
        let offset = self.data.len() as u64;
        for v in t.data() {
            self.data.extend_from_slice(&v.to_le_bytes());
        }
        self.blocks.push(BlockDescriptor {
            name: name.into(),
            dtype: Dtype::F64,
            rows: t.rows(),
            cols: t.cols(),
            offset,
            bytes: self.data.len() as u64 - offset,
        });
    }

    fn u8_block(&mut self, name: &str, rows: usize, cols: usize, bytes: &[u8]) {
        let offset = self.data.len() as u64;
        self.data.extend_from_slice(bytes);
        self.blocks.push(BlockDescriptor {
            name: name.into(),
            dtype: Dtype::U8,
            rows,
            cols,
            offset,
            bytes: bytes.len() as u64,
        });
    }
}

impl Dataset {
    pub fn manifest_and_bytes(&self) -> (DatasetManifest, Vec<u8>) {
        let n = self.len();
        let mut w = Writer {
            blocks: Vec::new(),
            data: Vec::new(),
        };
        w.f64_block("x", &self.x);
        if let Some(v) = &self.v {
            w.f64_block("v", v);
        }
        if let Some(c) = &self.concepts {
            w.u8_block("concepts", n, 1, c);
        }
        if let Some(a) = &self.attributes {
            w.f64_block("attributes", a);
        }
        if let Some(l) = &self.labels {
            w.u8_block("labels", n, self.tasks.len(), l);
        }
        let manifest = DatasetManifest {
            format_version: DATASET_FORMAT_VERSION,
            kind: self.kind,
            count: n,
            image_dim: self.image_dim,
            text_dim: self.text_dim,
            seed: self.seed,
            config_hash: self.world_hash.clone(),
            stream: self.stream.clone(),
            tasks: self.tasks.clone(),
            blocks: w.blocks,
        };
        (manifest, w.data)
    }

    /// Writes `manifest.json` and `data.bin` into `dir`, creating it if needed.
    pub fn save(&self, dir: &Path) -> Result<DatasetManifest> {
        fs::create_dir_all(dir)?;
        let (manifest, bytes) = self.manifest_and_bytes();
        let mut json = serde_json::to_string_pretty(&manifest)?;
        json.push('\n');
        fs::write(dir.join(DATA_FILE), &bytes)?;
        fs::write(dir.join(MANIFEST_FILE), json)?;
        Ok(manifest)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = DatasetManifest::read(dir)?;
        let bytes = fs::read(dir.join(DATA_FILE))?;
        Self::from_parts(&manifest, &bytes)
    }

    /// Loads and checks that the dataset was generated from the given world hash.
    pub fn load_checked(dir: &Path, world_hash: &str) -> Result<Self> {
        let d = Self::load(dir)?;
        if d.world_hash != world_hash {
            return Err(Error::DatasetFormat(format!(
                "{} was generated from config {} but {} was expected",
                dir.display(),
                d.world_hash,
                world_hash
            )));
        }
        Ok(d)
    }

    pub fn from_parts(m: &DatasetManifest, bytes: &[u8]) -> Result<Self> {
        let fmt = |s: String| Error::DatasetFormat(s);
        if m.format_version != DATASET_FORMAT_VERSION {
            return Err(fmt(format!("unsupported dataset format version {}", m.format_version)));
        }
        let mut expected_offset = 0u64;
        for b in &m.blocks {
            if b.offset != expected_offset {
                return Err(fmt(format!("block '{}' starts at {} not {}", b.name, b.offset, expected_offset)));
            }
            if b.bytes != (b.rows * b.cols * b.dtype.width()) as u64 {
                return Err(fmt(format!("block '{}' byte length disagrees with its shape", b.name)));
            }
            if b.rows != m.count {
                return Err(fmt(format!("block '{}' has {} rows, manifest count is {}", b.name, b.rows, m.count)));
            }
            expected_offset += b.bytes;
        }
        if bytes.len() as u64 != expected_offset {
            return Err(fmt(format!(
                "data file holds {} bytes, manifest declares {}",
                bytes.len(),
                expected_offset
            )));
        }

        let slice = |b: &BlockDescriptor| &bytes[b.offset as usize..(b.offset + b.bytes) as usize];
        let f64_block = |name: &str, cols: usize| -> Result<Option<Tensor>> {
            let Some(b) = m.block(name) else { return Ok(None) };
            if b.dtype != Dtype::F64 || b.cols != cols {
                return Err(fmt(format!("block '{name}' has unexpected dtype or width")));
            }
            let data = slice(b)
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            Ok(Some(Tensor::new(b.rows, b.cols, data)?))
        };
        let u8_block = |name: &str, cols: usize| -> Result<Option<Vec<u8>>> {
            let Some(b) = m.block(name) else { return Ok(None) };
            if b.dtype != Dtype::U8 || b.cols != cols {
                return Err(fmt(format!("block '{name}' has unexpected dtype or width")));
            }
            Ok(Some(slice(b).to_vec()))
        };

        let x = f64_block("x", m.image_dim)?.ok_or_else(|| fmt("missing image block 'x'".into()))?;
        let v = f64_block("v", m.text_dim)?;
        let concepts = u8_block("concepts", 1)?;
        let attributes = match m.block("attributes") {
            Some(b) => f64_block("attributes", b.cols)?,
            None => None,
        };
        let labels = u8_block("labels", m.tasks.len())?;
        if let Some(l) = &labels {
            if l.iter().any(|&b| b > 1) {
                return Err(fmt("labels must be 0 or 1".into()));
            }
        }
        if !m.tasks.is_empty() && labels.is_none() {
            return Err(fmt("manifest lists tasks but has no label block".into()));
        }
        Ok(Dataset {
            kind: m.kind,
            world_hash: m.config_hash.clone(),
            seed: m.seed,
            stream: m.stream.clone(),
            image_dim: m.image_dim,
            text_dim: m.text_dim,
            x,
            v,
            concepts,
            attributes,
            tasks: m.tasks.clone(),
            labels,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::super::*;
    use super::*;

    #[test]
    fn save_load_roundtrip_and_bytes_stable() {
        let cfg = WorldConfig::default();
        let d = gen_finetune_labeled(&cfg, 30).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert_eq!(back, d);
        let first = fs::read(dir.path().join(DATA_FILE)).unwrap();
        let other = tempfile::tempdir().unwrap();
        gen_finetune_labeled(&cfg, 30).unwrap().save(other.path()).unwrap();
        assert_eq!(first, fs::read(other.path().join(DATA_FILE)).unwrap());
        assert_eq!(
            fs::read(dir.path().join(MANIFEST_FILE)).unwrap(),
            fs::read(other.path().join(MANIFEST_FILE)).unwrap()
        );
    }

    #[test]
    fn unlabeled_manifest_has_no_text_block() {
        let d = gen_unlabeled_corpus(&WorldConfig::default(), 5).unwrap();
        let (m, _) = d.manifest_and_bytes();
        assert_eq!(m.kind, DatasetKind::Unlabeled);
        assert!(m.block("v").is_none());
        assert_eq!(m.count, 5);
    }

    #[test]
    fn truncated_data_rejected() {
        let d = gen_pretrain_pairs(&WorldConfig::default(), 4).unwrap();
        let (m, bytes) = d.manifest_and_bytes();
        assert!(Dataset::from_parts(&m, &bytes[..bytes.len() - 1]).is_err());
        let mut bad = m.clone();
        bad.count = 5;
        assert!(Dataset::from_parts(&bad, &bytes).is_err());
        let mut bad = m;
        bad.format_version = 2;
        assert!(Dataset::from_parts(&bad, &bytes).is_err());
    }

    #[test]
    fn hash_check_on_load() {
        let cfg = WorldConfig::default();
        let d = gen_pretrain_pairs(&cfg, 4).unwrap();
        let dir = tempfile::tempdir().unwrap();
        d.save(dir.path()).unwrap();
        assert!(Dataset::load_checked(dir.path(), &cfg.hash()).is_ok());
        assert!(Dataset::load_checked(dir.path(), "0000").is_err());
    }
}
