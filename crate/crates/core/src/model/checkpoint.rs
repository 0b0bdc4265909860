//! Checkpoint container.
//!
//! ```text
//! "FXCK" version:u8
//! metadata: u64 length + JSON (config, scaler, seed, split, tensor names and shapes)
//! tensors:  f64 values of every parameter then every buffer, in metadata order
//! crc32 of everything above: u32
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::Model;
use super::params::ParameterSet;
use crate::autodiff::Tensor;
use crate::binio::{ByteReader, ByteWriter};
use crate::data::{Scaler, SplitSpec};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FXCK";
const VERSION: u8 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub scaler: Scaler,
    /// Seed the run that produced these weights was started with.
    pub seed: u64,
    /// Split the weights were trained under, so evaluation can reproduce it.
    pub split: Option<SplitSpec>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Metadata {
    config: ModelConfig,
    scaler: Scaler,
    seed: u64,
    split: Option<SplitSpec>,
    params: Vec<(String, Vec<usize>)>,
    buffers: Vec<(String, Vec<usize>)>,
}

fn shapes(map: &BTreeMap<String, Tensor>) -> Vec<(String, Vec<usize>)> {
    map.iter()
        .map(|(k, v)| (k.clone(), v.shape().to_vec()))
        .collect()
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let p = &self.model.params;
        let meta = Metadata {
            config: self.model.config.clone(),
            scaler: self.scaler,
            seed: self.seed,
            split: self.split.clone(),
            params: shapes(&p.params),
            buffers: shapes(&p.buffers),
        };
        let mut w = ByteWriter::new();
        w.bytes(MAGIC);
        w.u8(VERSION);
        w.blob(&serde_json::to_vec(&meta)?);
        for t in p.params.values().chain(p.buffers.values()) {
            for v in t.data() {
                w.f64(*v);
            }
        }
        let mut bytes = w.into_inner();
        let crc = crc32fast::hash(&bytes);
        bytes.extend_from_slice(&crc.to_le_bytes());
        Ok(bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 1 + 4 || &bytes[..4] != MAGIC {
            return Err(Error::Format("not a checkpoint".into()));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!(
                "checkpoint version {} unsupported (expected {VERSION})",
                bytes[4]
            )));
        }
        let (body, crc) = bytes.split_at(bytes.len() - 4);
        if crc32fast::hash(body) != u32::from_le_bytes(crc.try_into().unwrap()) {
            return Err(Error::Integrity("checkpoint checksum mismatch".into()));
        }
        let mut r = ByteReader::new(&body[5..]);
        let meta: Metadata = serde_json::from_slice(r.blob()?)?;
        meta.config.validate()?;
        let mut read = |list: &[(String, Vec<usize>)]| -> Result<BTreeMap<String, Tensor>> {
            let mut out = BTreeMap::new();
            for (name, shape) in list {
                let n: usize = shape.iter().product();
                let mut data = Vec::with_capacity(n);
                for _ in 0..n {
                    data.push(r.f64()?);
                }
                out.insert(name.clone(), Tensor::new(shape.clone(), data)?);
            }
            Ok(out)
        };
        let params = ParameterSet {
            params: read(&meta.params)?,
            buffers: read(&meta.buffers)?,
        };
        if !r.is_done() {
            return Err(Error::Format("trailing bytes in checkpoint".into()));
        }
        params.check_shapes(&ParameterSet::init(&meta.config, 0)?)?;
        Ok(Checkpoint {
            model: Model {
                config: meta.config,
                params,
            },
            scaler: meta.scaler,
            seed: meta.seed,
            split: meta.split,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&std::fs::read(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ckpt() -> Checkpoint {
        Checkpoint {
            model: Model::new(ModelConfig::default(), 3).unwrap(),
            scaler: Scaler {
                mean: 12.5,
                std: 0.25,
            },
            seed: 3,
            split: Some(SplitSpec::default()),
        }
    }

    #[test]
    fn save_load_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let c = ckpt();
        c.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert!(back.model.params.bitwise_eq(&c.model.params));
        assert_eq!(back, c);
    }

    #[test]
    fn version_mismatch_is_format_error() {
        let mut bytes = ckpt().to_bytes().unwrap();
        bytes[4] = 7;
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::Format(_))
        ));
    }
}
