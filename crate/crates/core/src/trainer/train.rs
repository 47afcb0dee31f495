use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::{BestRecord, Checkpoint, RngState};
use super::config::{ModelConfig, SuppressionMode};
use super::data::{load_split, ImageSet, Normalization};
use super::loss::{objective, random_labels};
use super::model::{argmax_rows, forward, Model};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, Targets, Tensor};
use crate::dataset::{DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tasks::TaskRegistry;

pub const RUN_FILE: &str = "run.json";
pub const MODEL_FILE: &str = "model.ckpt";
pub const LAST_FILE: &str = "last.ckpt";
pub const LOG_FILE: &str = "train_log.csv";

const EVAL_CHUNK: usize = 128;

/// Both splits of a dataset, z-normalized with train-split statistics.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub root: PathBuf,
    pub manifest: DatasetManifest,
    pub normalization: Normalization,
    pub train: ImageSet,
    pub test: ImageSet,
}

impl PreparedData {
    pub fn load(dir: &Path) -> Result<PreparedData> {
        let manifest = DatasetManifest::load(dir)?;
        let root = if dir.is_dir() {
            dir.to_path_buf()
        } else {
            dir.parent().map_or_else(|| PathBuf::from("."), Path::to_path_buf)
        };
        let mut train = load_split(&manifest, &root, Split::Train)?;
        let mut test = load_split(&manifest, &root, Split::Test)?;
        let normalization = Normalization::fit(&train);
        train.normalize(&normalization);
        test.normalize(&normalization);
        Ok(PreparedData {
            root,
            manifest,
            normalization,
            train,
            test,
        })
    }

    pub fn tasks(&self) -> &TaskRegistry {
        self.manifest.tasks()
    }

    pub fn split(&self, split: Split) -> &ImageSet {
        match split {
            Split::Train => &self.train,
            Split::Test => &self.test,
        }
    }
}

/// Losses and accuracy of one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepStats {
    pub preserved_loss: f64,
    pub branch_losses: Vec<f64>,
    pub combined_loss: f64,
    pub correct: usize,
    pub batch_size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub preserved_train_acc: f64,
    pub preserved_test_acc: f64,
    pub branch_losses: Vec<f64>,
    pub preserved_loss: f64,
    pub combined_loss: f64,
}

impl EpochLog {
    pub fn csv_header(cfg: &ModelConfig) -> String {
        let mut cols = vec![
            "epoch".to_string(),
            "preserved_train_acc".into(),
            "preserved_test_acc".into(),
        ];
        cols.extend((0..cfg.suppression.len()).map(|i| format!("branch_{i}_loss")));
        cols.push("preserved_loss".into());
        cols.push("combined_loss".into());
        cols.join(",")
    }

    pub fn csv_row(&self) -> String {
        let mut cols = vec![
            self.epoch.to_string(),
            format!("{:.6}", self.preserved_train_acc),
            format!("{:.6}", self.preserved_test_acc),
        ];
        cols.extend(self.branch_losses.iter().map(|l| format!("{l:.9}")));
        cols.push(format!("{:.9}", self.preserved_loss));
        cols.push(format!("{:.9}", self.combined_loss));
        cols.join(",")
    }
}

/// Mutable training state over a prepared dataset.
pub struct Trainer<'d> {
    data: &'d PreparedData,
    preserved_index: usize,
    branch_tasks: Vec<Option<usize>>,
    adam_cfg: AdamConfig,
    pub model: Model,
    pub adam: AdamState,
    pub rng: RngState,
    pub best: Option<BestRecord>,
    best_checkpoint: Option<Checkpoint>,
}

impl<'d> Trainer<'d> {
    pub fn new(config: ModelConfig, data: &'d PreparedData) -> Result<Self> {
        let model = Model::init(config)?;
        let adam = AdamState::new(&model.params);
        let rng = RngState {
            seed: model.config.seed,
            epoch: 0,
            batch: 0,
        };
        Self::assemble(model, adam, rng, None, data)
    }

    pub fn resume(ckpt: Checkpoint, data: &'d PreparedData) -> Result<Self> {
        if ckpt.normalization != data.normalization {
            return Err(Error::ConfigMismatch(
                "checkpoint normalization differs from the dataset's train statistics".into(),
            ));
        }
        Self::assemble(ckpt.model, ckpt.adam, ckpt.rng, ckpt.best, data)
    }

    fn assemble(
        model: Model,
        adam: AdamState,
        rng: RngState,
        best: Option<BestRecord>,
        data: &'d PreparedData,
    ) -> Result<Self> {
        let cfg = &model.config;
        cfg.validate()?;
        cfg.check_against(data.tasks())?;
        if data.train.side != cfg.input_side {
            return Err(Error::ConfigMismatch(format!(
                "model expects {} px inputs, dataset has {} px",
                cfg.input_side, data.train.side
            )));
        }
        let preserved_index = data
            .tasks()
            .position(&cfg.preserved_task.name)
            .expect("checked against registry");
        let branch_tasks = cfg
            .suppression
            .iter()
            .map(|b| b.task.as_ref().and_then(|t| data.tasks().position(&t.name)))
            .collect();
        let adam_cfg = AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        };
        Ok(Trainer {
            data,
            preserved_index,
            branch_tasks,
            adam_cfg,
            model,
            adam,
            rng,
            best,
            best_checkpoint: None,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.model.config
    }

    pub fn batches_per_epoch(&self) -> usize {
        self.data.train.len().div_ceil(self.config().batch_size)
    }

    /// Sample order of one epoch.
    pub fn epoch_order(&self, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        order.shuffle(&mut stream(self.rng.seed, Stream::Shuffle, epoch as u64, 0, 0));
        order
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            adam: self.adam.clone(),
            normalization: self.data.normalization.clone(),
            rng: self.rng,
            best: self.best,
        }
    }

    /// Checkpoint with the best preserved test accuracy seen at an epoch
    /// boundary so far.
    pub fn best_checkpoint(&self) -> Option<&Checkpoint> {
        self.best_checkpoint.as_ref()
    }

    /// Runs the next minibatch and advances the stream position.
    pub fn step(&mut self) -> Result<StepStats> {
        let RngState { seed, epoch, batch } = self.rng;
        let cfg = self.model.config.clone();
        let order = self.epoch_order(epoch);
        let lo = batch * cfg.batch_size;
        let idx = &order[lo..(lo + cfg.batch_size).min(order.len())];
        let x = self.data.train.batch(idx);
        let y = self.data.train.task_labels(self.preserved_index, idx);
        let branch_targets: Vec<Targets<f32>> = cfg
            .suppression
            .iter()
            .zip(&self.branch_tasks)
            .enumerate()
            .map(|(i, (br, task))| match (br.mode, task) {
                (SuppressionMode::RandomGr, _) => {
                    let mut r = stream(seed, Stream::RandomLabels, epoch as u64, batch as u64, i as u64);
                    Targets::Indices(random_labels(idx.len(), br.n_classes, &mut r))
                }
                (_, Some(t)) => Targets::Indices(self.data.train.task_labels(*t, idx)),
                (_, None) => unreachable!("known branches are checked against the registry"),
            })
            .collect();

        let mut g = Graph::train(stream(seed, Stream::Dropout, epoch as u64, batch as u64, 0));
        let xi = g.input(x);
        let fwd = forward(&cfg, &self.model.params, &mut g, xi)?;
        let predictions = argmax_rows(g.value(fwd.preserved_logits));
        let correct = predictions.iter().zip(&y).filter(|(p, t)| p == t).count();
        let losses = objective(&mut g, &cfg, &fwd, Targets::Indices(y), branch_targets)?;
        let diverged = |detail: String| Error::Divergence {
            epoch,
            batch,
            detail,
        };
        if !g.value(losses.objective).all_finite() {
            return Err(diverged(format!(
                "non-finite objective (preserved loss {}, branch losses {:?})",
                losses.preserved_value, losses.branch_values
            )));
        }
        let mut grads = g.backward(losses.objective)?;
        let grads: Vec<Tensor<f32>> = fwd.params.iter().map(|&id| grads.take(id)).collect();
        if let Some(i) = grads.iter().position(|t| !t.all_finite()) {
            return Err(diverged(format!("non-finite gradient for {}", self.model.names[i])));
        }
        adam_step(&mut self.model.params, &grads, &mut self.adam, &self.adam_cfg)?;

        self.rng.batch += 1;
        if self.rng.batch == self.batches_per_epoch() {
            self.rng.batch = 0;
            self.rng.epoch += 1;
        }
        Ok(StepStats {
            preserved_loss: losses.preserved_value,
            branch_losses: losses.branch_values,
            combined_loss: losses.combined,
            correct,
            batch_size: idx.len(),
        })
    }

    /// Preserved-head accuracy on a split, eval mode.
    pub fn evaluate(&self, split: Split) -> Result<f64> {
        let set = self.data.split(split);
        let preds = predict(&self.model, set)?;
        let correct = preds
            .iter()
            .zip(&set.labels)
            .filter(|(p, l)| **p == l[self.preserved_index])
            .count();
        Ok(correct as f64 / set.len() as f64)
    }

    /// Finishes the current epoch, evaluates, and updates best-checkpoint
    /// tracking.
    pub fn run_epoch(&mut self) -> Result<EpochLog> {
        let epoch = self.rng.epoch;
        let nb = self.config().suppression.len();
        let (mut correct, mut seen) = (0usize, 0usize);
        let mut preserved = 0f64;
        let mut combined = 0f64;
        let mut branches = vec![0f64; nb];
        while self.rng.epoch == epoch {
            let s = self.step()?;
            let w = s.batch_size as f64;
            correct += s.correct;
            seen += s.batch_size;
            preserved += s.preserved_loss * w;
            combined += s.combined_loss * w;
            for (acc, l) in branches.iter_mut().zip(&s.branch_losses) {
                *acc += l * w;
            }
        }
        let n = seen.max(1) as f64;
        let test_acc = self.evaluate(Split::Test)?;
        if self.best.map_or(true, |b| test_acc > b.test_accuracy) {
            self.best = Some(BestRecord {
                epoch,
                test_accuracy: test_acc,
            });
            self.best_checkpoint = Some(self.checkpoint());
        }
        Ok(EpochLog {
            epoch,
            preserved_train_acc: correct as f64 / n,
            preserved_test_acc: test_acc,
            branch_losses: branches.into_iter().map(|b| b / n).collect(),
            preserved_loss: preserved / n,
            combined_loss: combined / n,
        })
    }
}

/// Eval-mode forward over a set in fixed chunks; returns the feature rows
/// and the preserved-head predictions.
pub fn forward_eval(model: &Model, set: &ImageSet) -> Result<(Vec<f32>, Vec<usize>)> {
    let cfg = &model.config;
    let mut features = Vec::with_capacity(set.len() * cfg.fc_feature_dim);
    let mut preds = Vec::with_capacity(set.len());
    let all: Vec<usize> = (0..set.len()).collect();
    for chunk in all.chunks(EVAL_CHUNK) {
        let mut g = Graph::eval();
        let xi = g.input(set.batch(chunk));
        let fwd = forward(cfg, &model.params, &mut g, xi)?;
        features.extend_from_slice(g.value(fwd.features).data());
        preds.extend(argmax_rows(g.value(fwd.preserved_logits)));
    }
    Ok((features, preds))
}

pub fn predict(model: &Model, set: &ImageSet) -> Result<Vec<usize>> {
    forward_eval(model, set).map(|(_, p)| p)
}

/// Summary persisted next to the checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: ModelConfig,
    pub dataset_kind: String,
    /// Dataset the run was trained on, as given to the trainer.
    #[serde(default)]
    pub data_dir: Option<String>,
    pub tasks: TaskRegistry,
    pub epochs_completed: usize,
    pub best: Option<BestRecord>,
    pub final_test_accuracy: f64,
    pub log: Vec<EpochLog>,
}

impl RunRecord {
    pub fn load(run_dir: &Path) -> Result<RunRecord> {
        let path = run_dir.join(RUN_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::format(&path, e))
    }
}

pub(crate) fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::format(path, e))?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Trains `config` on `data` for its epoch budget, writing `run.json`,
/// `model.ckpt` (best preserved test accuracy), `last.ckpt`, and
/// `train_log.csv` into `out_dir`. A compatible `last.ckpt` already in
/// `out_dir` is resumed.
pub fn train(config: ModelConfig, data: &PreparedData, out_dir: &Path) -> Result<RunRecord> {
    train_with_progress(config, data, out_dir, |_| {})
}

/// [`train`], calling `progress` after every completed epoch.
pub fn train_with_progress(
    config: ModelConfig,
    data: &PreparedData,
    out_dir: &Path,
    mut progress: impl FnMut(&EpochLog),
) -> Result<RunRecord> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let last = out_dir.join(LAST_FILE);
    let mut log: Vec<EpochLog> = Vec::new();
    let mut trainer = match Checkpoint::load(&last) {
        Ok(ckpt) if ckpt.model.config == config => {
            if let Ok(prev) = RunRecord::load(out_dir) {
                log = prev.log.into_iter().filter(|l| l.epoch < ckpt.rng.epoch).collect();
            }
            let mut t = Trainer::resume(ckpt, data)?;
            if let Ok(best) = Checkpoint::load(&out_dir.join(MODEL_FILE)) {
                t.best_checkpoint = Some(best);
            }
            t
        }
        Ok(_) => {
            return Err(Error::ConfigMismatch(format!(
                "{} was written by a different configuration",
                last.display()
            )))
        }
        Err(Error::MissingCheckpoint(_)) => Trainer::new(config, data)?,
        Err(e) => return Err(e),
    };
    let log_path = out_dir.join(LOG_FILE);
    while trainer.rng.epoch < trainer.config().epochs {
        let entry = trainer.run_epoch()?;
        progress(&entry);
        log.push(entry);
        write_log(&log_path, trainer.config(), &log)?;
        trainer.checkpoint().save(&last)?;
        if let Some(best) = trainer.best_checkpoint() {
            best.save(&out_dir.join(MODEL_FILE))?;
        }
    }
    write_log(&log_path, trainer.config(), &log)?;
    let record = RunRecord {
        config: trainer.config().clone(),
        dataset_kind: data.manifest.header.kind.clone(),
        data_dir: Some(data.root.display().to_string()),
        tasks: data.tasks().clone(),
        epochs_completed: trainer.rng.epoch,
        best: trainer.best,
        final_test_accuracy: log.last().map_or(0.0, |l| l.preserved_test_acc),
        log,
    };
    write_json(&out_dir.join(RUN_FILE), &record)?;
    Ok(record)
}

fn write_log(path: &Path, cfg: &ModelConfig, log: &[EpochLog]) -> Result<()> {
    let mut out = Vec::new();
    writeln!(out, "{}", EpochLog::csv_header(cfg)).expect("write to vec");
    for l in log {
        writeln!(out, "{}", l.csv_row()).expect("write to vec");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
