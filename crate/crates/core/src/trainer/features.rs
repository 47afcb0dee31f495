use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::data::{load_split, ImageSet};
use super::model::Model;
use super::train::{forward_eval, write_json};
use crate::dataset::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::tasks::TaskRegistry;

pub const FEATURES_FORMAT_VERSION: u32 = 1;

/// Frozen feature rows of one split with every task's labels attached.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSet {
    pub split: Split,
    pub rows: usize,
    pub cols: usize,
    /// Row-major `rows x cols`.
    pub data: Vec<f32>,
    pub tasks: TaskRegistry,
    /// Class index per row, per task in registry order.
    pub labels: Vec<Vec<usize>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Sidecar {
    format_version: u32,
    split: Split,
    rows: usize,
    cols: usize,
    dtype: String,
    data_file: String,
    tasks: TaskRegistry,
    /// One column of class indices per task.
    label_columns: Vec<Vec<usize>>,
}

impl FeatureSet {
    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn task_labels(&self, task: usize) -> Vec<usize> {
        self.labels.iter().map(|l| l[task]).collect()
    }

    pub fn data_path(dir: &Path, split: Split) -> PathBuf {
        dir.join(format!("features_{}.f32", split.as_str()))
    }

    pub fn sidecar_path(dir: &Path, split: Split) -> PathBuf {
        dir.join(format!("features_{}.json", split.as_str()))
    }

    /// Raw little-endian f32 matrix plus a JSON sidecar.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let data_path = Self::data_path(dir, self.split);
        let bytes: Vec<u8> = self.data.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&data_path, bytes).map_err(|e| Error::io(&data_path, e))?;
        let sidecar = Sidecar {
            format_version: FEATURES_FORMAT_VERSION,
            split: self.split,
            rows: self.rows,
            cols: self.cols,
            dtype: "f32le".into(),
            data_file: data_path
                .file_name()
                .expect("file name")
                .to_string_lossy()
                .into_owned(),
            tasks: self.tasks.clone(),
            label_columns: (0..self.tasks.len()).map(|t| self.task_labels(t)).collect(),
        };
        write_json(&Self::sidecar_path(dir, self.split), &sidecar)
    }

    /// Loads from a sidecar path, or from `dir` plus `split`.
    pub fn load(dir: &Path, split: Split) -> Result<FeatureSet> {
        Self::load_sidecar(&Self::sidecar_path(dir, split))
    }

    pub fn load_sidecar(path: &Path) -> Result<FeatureSet> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if side.format_version != FEATURES_FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported version {}", side.format_version)));
        }
        let data_path = path.parent().unwrap_or(Path::new(".")).join(&side.data_file);
        let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
        if bytes.len() != side.rows * side.cols * 4 {
            return Err(Error::format(
                &data_path,
                format!("{} bytes for a {}x{} f32 matrix", bytes.len(), side.rows, side.cols),
            ));
        }
        if side.label_columns.len() != side.tasks.len()
            || side.label_columns.iter().any(|c| c.len() != side.rows)
        {
            return Err(Error::format(path, "label columns do not match rows and tasks"));
        }
        let data = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        let labels = (0..side.rows)
            .map(|r| side.label_columns.iter().map(|c| c[r]).collect())
            .collect();
        Ok(FeatureSet {
            split: side.split,
            rows: side.rows,
            cols: side.cols,
            data,
            tasks: side.tasks,
            labels,
        })
    }
}

/// Eval-mode features of an already normalized image set.
pub fn features_of(model: &Model, set: &ImageSet, tasks: &TaskRegistry, split: Split) -> Result<FeatureSet> {
    let (data, _) = forward_eval(model, set)?;
    Ok(FeatureSet {
        split,
        rows: set.len(),
        cols: model.config.fc_feature_dim,
        data,
        tasks: tasks.clone(),
        labels: set.labels.clone(),
    })
}

/// Loads `split` from the dataset in `data_dir`, normalizes it with the
/// checkpoint's statistics, and runs the trunk in eval mode.
pub fn extract_features(ckpt: &Checkpoint, data_dir: &Path, split: Split) -> Result<FeatureSet> {
    let manifest = DatasetManifest::load(data_dir)?;
    let root = if data_dir.is_dir() {
        data_dir.to_path_buf()
    } else {
        data_dir.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
    };
    let cfg = &ckpt.model.config;
    cfg.check_against(manifest.tasks())
        .map_err(|e| Error::ConfigMismatch(e.to_string()))?;
    let mut set = load_split(&manifest, &root, split)?;
    if set.side != cfg.input_side {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint expects {} px inputs, dataset has {} px",
            cfg.input_side, set.side
        )));
    }
    set.normalize(&ckpt.normalization);
    features_of(&ckpt.model, &set, manifest.tasks(), split)
}
