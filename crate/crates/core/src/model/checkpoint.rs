//! Binary checkpoint format.
//!
//! ```text
//! b"CLDNCKPT"  u32 LE version  u64 LE header length  JSON header  tensor data
//! ```
//!
//! The JSON header carries the generating [`NetworkConfig`], the element type,
//! every tensor's name and shape in storage order, and an opaque `meta`
//! object used by the trainer for optimizer and schedule state. Tensor data
//! follows as little-endian values of the stored element type.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelError, Network, NetworkConfig, Result};
use crate::scalar::Scalar;

const MAGIC: &[u8; 8] = b"CLDNCKPT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    config: NetworkConfig,
    dtype: String,
    tensors: Vec<TensorHeader>,
    #[serde(default)]
    meta: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
struct TensorHeader {
    name: String,
    shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Vec<T>,
}

/// In-memory checkpoint: network tensors followed by any extra tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint<T> {
    pub config: NetworkConfig,
    pub tensors: Vec<NamedTensor<T>>,
    pub meta: serde_json::Value,
}

fn ck_err(path: &Path, message: impl ToString) -> ModelError {
    ModelError::Checkpoint {
        path: path.display().to_string(),
        message: message.to_string(),
    }
}

impl<T: Scalar> Checkpoint<T> {
    pub fn from_network(net: &Network<T>) -> Self {
        Self {
            config: net.config().clone(),
            tensors: net
                .params()
                .tensors()
                .iter()
                .map(|t| NamedTensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    values: t.values.clone(),
                })
                .collect(),
            meta: serde_json::Value::Null,
        }
    }

    pub fn tensor(&self, name: &str) -> Option<&NamedTensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }

    /// Rebuilds the network, rejecting config, name or shape mismatches.
    pub fn to_network(&self, expected: Option<&NetworkConfig>) -> Result<Network<T>> {
        if let Some(cfg) = expected {
            if cfg != &self.config {
                return Err(ModelError::CheckpointMismatch(format!(
                    "checkpoint was built for {:?} (bottleneck {}, side {}) but config asks for {:?} (bottleneck {}, side {})",
                    self.config.depth_schedule,
                    self.config.bottleneck_depth,
                    self.config.input_side,
                    cfg.depth_schedule,
                    cfg.bottleneck_depth,
                    cfg.input_side
                )));
            }
        }
        let mut net = Network::zeros(self.config.clone())?;
        for t in net.params_mut().tensors_mut() {
            let stored = self
                .tensor(&t.name)
                .ok_or_else(|| ModelError::CheckpointMismatch(format!("missing tensor {}", t.name)))?;
            if stored.shape != t.shape {
                return Err(ModelError::CheckpointMismatch(format!(
                    "tensor {} has shape {:?}, expected {:?}",
                    t.name, stored.shape, t.shape
                )));
            }
            t.values.clone_from(&stored.values);
        }
        Ok(net)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = Header {
            config: self.config.clone(),
            dtype: T::DTYPE.to_string(),
            tensors: self
                .tensors
                .iter()
                .map(|t| TensorHeader {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                })
                .collect(),
            meta: self.meta.clone(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| ck_err(path, e))?;
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| ck_err(parent, e))?;
        }
        let write = || -> std::io::Result<()> {
            let mut w = BufWriter::new(File::create(path)?);
            w.write_all(MAGIC)?;
            w.write_all(&VERSION.to_le_bytes())?;
            w.write_all(&(json.len() as u64).to_le_bytes())?;
            w.write_all(&json)?;
            for t in &self.tensors {
                T::write_le(&t.values, &mut w)?;
            }
            w.flush()
        };
        write().map_err(|e| ck_err(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = BufReader::new(File::open(path).map_err(|e| ck_err(path, e))?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|e| ck_err(path, e))?;
        if &magic != MAGIC {
            return Err(ck_err(path, "not a checkpoint file"));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word).map_err(|e| ck_err(path, e))?;
        let version = u32::from_le_bytes(word);
        if version != VERSION {
            return Err(ck_err(path, format!("unsupported version {version}")));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|e| ck_err(path, e))?;
        let mut json = vec![0u8; u64::from_le_bytes(len) as usize];
        r.read_exact(&mut json).map_err(|e| ck_err(path, e))?;
        let header: Header = serde_json::from_slice(&json).map_err(|e| ck_err(path, e))?;
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for th in header.tensors {
            let n: usize = th.shape.iter().product();
            let values: Vec<T> = match header.dtype.as_str() {
                "f32" => f32::read_le(&mut r, n)
                    .map_err(|e| ck_err(path, e))?
                    .into_iter()
                    .map(|v| T::lit(f64::from(v)))
                    .collect(),
                "f64" => f64::read_le(&mut r, n)
                    .map_err(|e| ck_err(path, e))?
                    .into_iter()
                    .map(T::lit)
                    .collect(),
                other => return Err(ck_err(path, format!("unknown dtype {other}"))),
            };
            tensors.push(NamedTensor {
                name: th.name,
                shape: th.shape,
                values,
            });
        }
        Ok(Self {
            config: header.config,
            tensors,
            meta: header.meta,
        })
    }
}

impl<T: Scalar> Network<T> {
    pub fn save(&self, path: &Path) -> Result<()> {
        Checkpoint::from_network(self).save(path)
    }

    /// Loads weights; when `expected` is given the stored config must equal it.
    pub fn load(path: &Path, expected: Option<&NetworkConfig>) -> Result<Self> {
        Checkpoint::<T>::load(path)?.to_network(expected)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::WeightInit;

    #[test]
    fn save_load_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let net = Network::<f32>::build(NetworkConfig::with_levels(16, 4, 2), WeightInit::default(), 3).unwrap();
        net.save(&path).unwrap();
        let back = Network::<f32>::load(&path, Some(net.config())).unwrap();
        assert_eq!(back, net);
        // Widening on load keeps values exactly.
        let wide = Network::<f64>::load(&path, None).unwrap();
        assert_eq!(wide.params().values(0)[0], f64::from(net.params().values(0)[0]));
    }

    #[test]
    fn level_mismatch_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.ckpt");
        let five = Network::<f32>::build(NetworkConfig::with_levels(64, 4, 5), WeightInit::default(), 0).unwrap();
        five.save(&path).unwrap();
        let three = NetworkConfig::with_levels(64, 4, 3);
        assert!(matches!(
            Network::<f32>::load(&path, Some(&three)),
            Err(ModelError::CheckpointMismatch(_))
        ));
    }

    #[test]
    fn garbage_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.ckpt");
        std::fs::write(&path, b"nope").unwrap();
        assert!(matches!(Checkpoint::<f32>::load(&path), Err(ModelError::Checkpoint { .. })));
    }
}
