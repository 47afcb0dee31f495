use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::data::Normalization;
use super::model::{param_layout, Model};
use crate::autodiff::{AdamState, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"OVLCKPT\0";
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Position of the training run's random streams. All streams are derived
/// from the seed plus epoch and batch indices, so these three numbers are
/// the complete generator state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    pub epoch: usize,
    pub batch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BestRecord {
    pub epoch: usize,
    pub test_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub adam: AdamState,
    pub normalization: Normalization,
    pub rng: RngState,
    pub best: Option<BestRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    /// Offset and length in f32 elements within the blob area.
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    config: ModelConfig,
    normalization: Normalization,
    rng: RngState,
    best: Option<BestRecord>,
    adam_step: u64,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    pub fn epoch(&self) -> usize {
        self.rng.epoch
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut blobs: Vec<f32> = Vec::new();
        let mut tensors = Vec::new();
        let mut push = |name: String, shape: &[usize], data: &[f32]| {
            tensors.push(TensorEntry {
                name,
                shape: shape.to_vec(),
                offset: blobs.len(),
                len: data.len(),
            });
            blobs.extend_from_slice(data);
        };
        for (name, p) in self.model.names.iter().zip(&self.model.params) {
            push(name.clone(), p.shape(), p.data());
        }
        for (i, (name, p)) in self.model.names.iter().zip(&self.model.params).enumerate() {
            push(format!("adam.m.{name}"), p.shape(), &self.adam.m[i]);
            push(format!("adam.v.{name}"), p.shape(), &self.adam.v[i]);
        }
        let header = Header {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.model.config.clone(),
            normalization: self.normalization.clone(),
            rng: self.rng,
            best: self.best,
            adam_step: self.adam.step,
            tensors,
        };
        let json = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::with_capacity(16 + json.len() + blobs.len() * 4);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in blobs {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Checkpoint> {
        let bad = |detail: String| Error::format(origin, detail);
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let body = bytes
            .get(16..)
            .filter(|b| b.len() >= hlen)
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header =
            serde_json::from_slice(&body[..hlen]).map_err(|e| bad(format!("header: {e}")))?;
        if header.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {}", header.format_version)));
        }
        header.config.validate()?;
        let blob = &body[hlen..];
        if blob.len() % 4 != 0 {
            return Err(bad("blob area is not a whole number of f32 values".into()));
        }
        let floats: Vec<f32> = blob
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let find = |name: &str, shape: &[usize]| -> Result<Vec<f32>> {
            let e = header
                .tensors
                .iter()
                .find(|e| e.name == name)
                .ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if e.shape != shape || e.len != shape.iter().product::<usize>() {
                return Err(bad(format!("tensor {name} has shape {:?}, expected {shape:?}", e.shape)));
            }
            floats
                .get(e.offset..e.offset + e.len)
                .map(<[f32]>::to_vec)
                .ok_or_else(|| bad(format!("tensor {name} lies outside the blob area")))
        };
        let layout = param_layout(&header.config);
        let mut names = Vec::new();
        let mut params = Vec::new();
        let mut m = Vec::new();
        let mut v = Vec::new();
        for (name, shape) in &layout {
            params.push(Tensor::new(shape, find(name, shape)?)?);
            m.push(find(&format!("adam.m.{name}"), shape)?);
            v.push(find(&format!("adam.v.{name}"), shape)?);
            names.push(name.clone());
        }
        Ok(Checkpoint {
            model: Model {
                config: header.config,
                names,
                params,
            },
            adam: AdamState {
                step: header.adam_step,
                m,
                v,
            },
            normalization: header.normalization,
            rng: header.rng,
            best: header.best,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        let bytes = fs::read(path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::MissingCheckpoint(path.display().to_string())
            } else {
                Error::io(path, e)
            }
        })?;
        Checkpoint::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskRegistry;
    use crate::trainer::config::SuppressionBranch;

    fn sample() -> Checkpoint {
        let mut cfg = ModelConfig::new(8, TaskRegistry::preserve_task().0[0].clone());
        cfg.conv_blocks[0].filters = 2;
        cfg.conv_blocks[1].filters = 3;
        cfg.fc_feature_dim = 5;
        cfg.suppression = vec![SuppressionBranch::random(3)];
        let model = Model::init(cfg).unwrap();
        let mut adam = AdamState::new(&model.params);
        adam.step = 7;
        adam.m[0][0] = 0.25;
        adam.v[1][0] = 1.5;
        Checkpoint {
            model,
            adam,
            normalization: Normalization {
                mean: vec![0.1, 0.2, 0.3],
                std: vec![1.0, 2.0, 3.0],
            },
            rng: RngState {
                seed: 9,
                epoch: 3,
                batch: 4,
            },
            best: Some(BestRecord {
                epoch: 2,
                test_accuracy: 0.75,
            }),
        }
    }

    #[test]
    fn bytes_round_trip() {
        let c = sample();
        let bytes = c.to_bytes();
        let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes(), bytes);
    }

    #[test]
    fn rejects_corruption() {
        let bytes = sample().to_bytes();
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 3], Path::new("m")).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Checkpoint::from_bytes(&bad, Path::new("m")).is_err());
        assert!(Checkpoint::from_bytes(&bytes[..20], Path::new("m")).is_err());
    }

    #[test]
    fn missing_file_is_reported() {
        let err = Checkpoint::load(Path::new("/nonexistent/model.ckpt")).unwrap_err();
        assert!(matches!(err, Error::MissingCheckpoint(_)));
    }
}
