//! Fixed two-hidden-layer probe classifiers on frozen features, and the
//! task-by-task performance matrix built from them.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{adam_step, AdamConfig, AdamState, Graph, NodeId, Targets, Tensor};
use crate::dataset::Split;
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};
use crate::tasks::TaskRegistry;
use crate::trainer::{argmax_rows, extract_features, Checkpoint, FeatureSet, RunRecord, MODEL_FILE};
use crate::trust::SquareMatrix;

pub const MATRIX_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeConfig {
    pub hidden: Vec<usize>,
    /// Dropout rate after each hidden layer.
    pub dropout: Vec<f64>,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation-loss improvement before stopping.
    pub early_stop_patience: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            hidden: vec![512, 100],
            dropout: vec![0.5, 0.3],
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            early_stop_patience: 10,
            val_fraction: 0.2,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.hidden.len() != self.dropout.len() {
            return bad("one dropout rate per hidden layer".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layers need at least one unit".into());
        }
        if self.dropout.iter().any(|p| !(0.0..1.0).contains(p)) {
            return bad("dropout rates must lie in [0, 1)".into());
        }
        if self.batch_size == 0 || self.max_epochs == 0 {
            return bad("batch_size and max_epochs must be positive".into());
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} outside (0, 1)", self.val_fraction));
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        Ok(())
    }
}

/// Outcome of one probe.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub task: String,
    pub test_accuracy: f64,
    /// Frequency of the majority class in the test labels.
    pub chance: f64,
    pub best_val_loss: f64,
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub n_train: usize,
    pub n_val: usize,
    pub n_test: usize,
}

struct Mlp {
    params: Vec<Tensor<f32>>,
}

impl Mlp {
    fn init(dims: &[usize], seed: u64) -> Mlp {
        let mut params = Vec::new();
        for (layer, w) in dims.windows(2).enumerate() {
            let limit = (6.0 / w[0] as f64).sqrt();
            let mut rng = stream(seed, Stream::ProbeInit, layer as u64, 0, 0);
            params.push(Tensor::from_fn(&[w[0], w[1]], |_| rng.gen_range(-limit..limit) as f32));
            params.push(Tensor::zeros(&[w[1]]));
        }
        Mlp { params }
    }

    fn forward(&self, g: &mut Graph<f32>, x: NodeId, dropout: &[f64]) -> Result<(Vec<NodeId>, NodeId)> {
        let ids: Vec<NodeId> = self.params.iter().map(|p| g.param(p.clone())).collect();
        let layers = ids.len() / 2;
        let mut h = x;
        for l in 0..layers {
            h = g.matmul(h, ids[2 * l])?;
            h = g.add_bias(h, ids[2 * l + 1])?;
            if l + 1 < layers {
                h = g.relu(h);
                h = g.dropout(h, dropout[l])?;
            }
        }
        Ok((ids, h))
    }
}

fn rows_tensor(data: &[f32], cols: usize, rows: &[usize]) -> Tensor<f32> {
    let mut out = Vec::with_capacity(rows.len() * cols);
    for &r in rows {
        out.extend_from_slice(&data[r * cols..(r + 1) * cols]);
    }
    Tensor::new(&[rows.len(), cols], out).expect("row gather matches its shape")
}

/// Per-dimension z-normalization fitted on `rows` of `data`.
fn fit_znorm(data: &[f32], cols: usize, rows: &[usize]) -> (Vec<f64>, Vec<f64>) {
    let mut mean = vec![0f64; cols];
    let mut sq = vec![0f64; cols];
    for &r in rows {
        for (j, &v) in data[r * cols..(r + 1) * cols].iter().enumerate() {
            mean[j] += v as f64;
            sq[j] += v as f64 * v as f64;
        }
    }
    let n = rows.len().max(1) as f64;
    let std = mean
        .iter_mut()
        .zip(&sq)
        .map(|(m, q)| {
            *m /= n;
            let var = (q / n - *m * *m).max(0.0);
            if var > 1e-12 {
                var.sqrt()
            } else {
                1.0
            }
        })
        .collect();
    (mean, std)
}

fn apply_znorm(data: &[f32], cols: usize, mean: &[f64], std: &[f64]) -> Vec<f32> {
    data.chunks(cols)
        .flat_map(|row| {
            row.iter()
                .enumerate()
                .map(|(j, &v)| ((v as f64 - mean[j]) / std[j]) as f32)
        })
        .collect()
}

fn majority_frequency(labels: &[usize], n_classes: usize) -> f64 {
    let mut counts = vec![0usize; n_classes];
    for &l in labels {
        counts[l] += 1;
    }
    counts.into_iter().max().unwrap_or(0) as f64 / labels.len().max(1) as f64
}

/// Mean cross-entropy and accuracy of the probe over `rows`, eval mode.
fn evaluate(mlp: &Mlp, cfg: &ProbeConfig, x: &[f32], cols: usize, labels: &[usize], rows: &[usize]) -> Result<(f64, f64)> {
    let (mut loss, mut correct) = (0f64, 0usize);
    for chunk in rows.chunks(512) {
        let mut g = Graph::eval();
        let xi = g.input(rows_tensor(x, cols, chunk));
        let (_, logits) = mlp.forward(&mut g, xi, &cfg.dropout)?;
        let y: Vec<usize> = chunk.iter().map(|&r| labels[r]).collect();
        correct += argmax_rows(g.value(logits))
            .iter()
            .zip(&y)
            .filter(|(p, t)| p == t)
            .count();
        let l = g.softmax_cross_entropy(logits, Targets::Indices(y))?;
        loss += g.value(l).item() as f64 * chunk.len() as f64;
    }
    let n = rows.len().max(1) as f64;
    Ok((loss / n, correct as f64 / n))
}

/// Trains a probe for `task` on `train` features (with a held-out
/// validation slice for early stopping) and scores it on `test`.
pub fn train_probe(train: &FeatureSet, test: &FeatureSet, task: usize, cfg: &ProbeConfig) -> Result<ProbeResult> {
    cfg.validate()?;
    if train.cols != test.cols {
        return Err(Error::ShapeMismatch(format!(
            "train features have {} columns, test {}",
            train.cols, test.cols
        )));
    }
    if train.tasks != test.tasks {
        return Err(Error::RegistryMismatch("train and test feature sets disagree on tasks".into()));
    }
    let spec = train
        .tasks
        .tasks()
        .get(task)
        .ok_or_else(|| Error::InvalidConfig(format!("no task at index {task}")))?;
    let n_classes = spec.num_classes;
    let y_train = train.task_labels(task);
    let y_test = test.task_labels(task);
    if let Some(&first) = y_train.first() {
        if y_train.iter().all(|&c| c == first) {
            return Err(Error::DegenerateLabels(first));
        }
    }
    if train.rows < 2 || test.rows == 0 {
        return Err(Error::InvalidConfig("probe needs at least two train rows and one test row".into()));
    }
    let mut order: Vec<usize> = (0..train.rows).collect();
    order.shuffle(&mut stream(cfg.seed, Stream::ProbeSplit, 0, 0, 0));
    let n_val = ((train.rows as f64 * cfg.val_fraction).round() as usize).clamp(1, train.rows - 1);
    let (fit_rows, val_rows) = order.split_at(train.rows - n_val);
    let mut fit_rows = fit_rows.to_vec();
    fit_rows.sort_unstable();
    let val_rows = val_rows.to_vec();

    let cols = train.cols;
    let (mean, std) = fit_znorm(&train.data, cols, &fit_rows);
    let x_train = apply_znorm(&train.data, cols, &mean, &std);
    let x_test = apply_znorm(&test.data, cols, &mean, &std);

    let mut dims = vec![cols];
    dims.extend(&cfg.hidden);
    dims.push(n_classes);
    let mut mlp = Mlp::init(&dims, cfg.seed);
    let mut adam = AdamState::new(&mlp.params);
    let adam_cfg = AdamConfig {
        lr: cfg.lr,
        ..AdamConfig::default()
    };

    let mut best = (f64::INFINITY, 0usize, mlp.params.clone());
    let mut epochs_run = 0;
    for epoch in 0..cfg.max_epochs {
        let mut perm = fit_rows.clone();
        perm.shuffle(&mut stream(cfg.seed, Stream::ProbeShuffle, epoch as u64, 0, 0));
        for (b, idx) in perm.chunks(cfg.batch_size).enumerate() {
            let mut g = Graph::train(stream(cfg.seed, Stream::ProbeDropout, epoch as u64, b as u64, 0));
            let xi = g.input(rows_tensor(&x_train, cols, idx));
            let (ids, logits) = mlp.forward(&mut g, xi, &cfg.dropout)?;
            let y = idx.iter().map(|&r| y_train[r]).collect();
            let loss = g.softmax_cross_entropy(logits, Targets::Indices(y))?;
            if !g.value(loss).all_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: b,
                    detail: format!("probe for {} produced a non-finite loss", spec.name),
                });
            }
            let mut grads = g.backward(loss)?;
            let grads: Vec<Tensor<f32>> = ids.iter().map(|&id| grads.take(id)).collect();
            adam_step(&mut mlp.params, &grads, &mut adam, &adam_cfg)?;
        }
        epochs_run = epoch + 1;
        let (val_loss, _) = evaluate(&mlp, cfg, &x_train, cols, &y_train, &val_rows)?;
        if val_loss < best.0 {
            best = (val_loss, epoch, mlp.params.clone());
        } else if epoch - best.1 >= cfg.early_stop_patience {
            break;
        }
    }
    mlp.params = best.2;
    let test_rows: Vec<usize> = (0..test.rows).collect();
    let (_, test_accuracy) = evaluate(&mlp, cfg, &x_test, cols, &y_test, &test_rows)?;
    Ok(ProbeResult {
        task: spec.name.clone(),
        test_accuracy,
        chance: majority_frequency(&y_test, n_classes),
        best_val_loss: best.0,
        best_epoch: best.1,
        epochs_run,
        n_train: fit_rows.len(),
        n_val: val_rows.len(),
        n_test: test.rows,
    })
}

/// Frozen features of one trained extractor.
#[derive(Debug, Clone)]
pub struct RunFeatures {
    /// Task the extractor was trained to preserve.
    pub preserved: String,
    /// SHA-256 of the checkpoint bytes.
    pub checkpoint_id: String,
    pub train: FeatureSet,
    pub test: FeatureSet,
}

impl RunFeatures {
    /// Loads features from `run_dir`, extracting them from `model.ckpt`
    /// when they are not on disk yet. `data_dir` defaults to the dataset
    /// recorded in `run.json`.
    pub fn from_run(run_dir: &Path, data_dir: Option<&Path>) -> Result<RunFeatures> {
        let ckpt_path = run_dir.join(MODEL_FILE);
        let bytes = fs::read(&ckpt_path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingCheckpoint(ckpt_path.display().to_string()),
            _ => Error::io(&ckpt_path, e),
        })?;
        let ckpt = Checkpoint::from_bytes(&bytes, &ckpt_path)?;
        let checkpoint_id = hex_digest(&bytes);
        let load = |split| -> Result<FeatureSet> {
            match FeatureSet::load(run_dir, split) {
                Ok(f) => Ok(f),
                Err(Error::Io { .. }) => {
                    let data: PathBuf = match data_dir {
                        Some(d) => d.to_path_buf(),
                        None => RunRecord::load(run_dir)?
                            .data_dir
                            .map(PathBuf::from)
                            .ok_or_else(|| Error::InvalidConfig("run.json does not record a dataset".into()))?,
                    };
                    let f = extract_features(&ckpt, &data, split)?;
                    f.save(run_dir)?;
                    Ok(f)
                }
                Err(e) => Err(e),
            }
        };
        Ok(RunFeatures {
            preserved: ckpt.model.config.preserved_task.name.clone(),
            checkpoint_id,
            train: load(Split::Train)?,
            test: load(Split::Test)?,
        })
    }
}

fn hex_digest(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowProvenance {
    pub preserved: String,
    pub checkpoint_id: String,
    pub label: String,
}

/// `cells[i][j]`: test accuracy of probing task `j` on features of the
/// extractor trained to preserve task `i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceMatrix {
    pub format_version: u32,
    pub tasks: TaskRegistry,
    pub cells: SquareMatrix,
    /// Majority-class frequency of the probed test labels, per cell.
    pub chance: SquareMatrix,
    pub rows: Vec<RowProvenance>,
    pub probe: ProbeConfig,
    pub details: Vec<Vec<ProbeResult>>,
}

impl PerformanceMatrix {
    pub fn n(&self) -> usize {
        self.tasks.len()
    }

    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        Some(self.cells.get(self.tasks.position(row)?, self.tasks.position(col)?))
    }

    /// Copy with row `i` replaced by probes of another extractor.
    pub fn with_row(&self, i: usize, provenance: RowProvenance, results: Vec<ProbeResult>) -> Result<PerformanceMatrix> {
        if results.len() != self.n() || i >= self.n() {
            return Err(Error::ShapeMismatch(format!(
                "row {i} with {} results for a {}-task matrix",
                results.len(),
                self.n()
            )));
        }
        let mut out = self.clone();
        for (j, r) in results.iter().enumerate() {
            out.cells.set(i, j, r.test_accuracy);
            out.chance.set(i, j, r.chance);
        }
        out.rows[i] = provenance;
        out.details[i] = results;
        Ok(out)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("matrix serializes");
        s.push('\n');
        s
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: &Path) -> Result<PerformanceMatrix> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: PerformanceMatrix = serde_json::from_str(&text).map_err(|e| Error::format(path, e))?;
        if m.format_version != MATRIX_FORMAT_VERSION {
            return Err(Error::format(path, format!("unsupported version {}", m.format_version)));
        }
        if m.cells.n != m.tasks.len() || m.cells.cells.len() != m.cells.n * m.cells.n {
            return Err(Error::format(path, "cell count does not match the task list"));
        }
        Ok(m)
    }

    /// `preserved,<task...>` header, one row per preserved task.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let names = self.tasks.names();
        let mut header = vec!["preserved"];
        header.extend(&names);
        w.write_record(&header).expect("write to vec");
        for (i, name) in names.iter().enumerate() {
            let mut rec = vec![name.to_string()];
            rec.extend((0..self.n()).map(|j| format!("{}", self.cells.get(i, j))));
            w.write_record(&rec).expect("write to vec");
        }
        String::from_utf8(w.into_inner().expect("flush to vec")).expect("utf-8 csv")
    }

    /// Parses [`Self::to_csv`] output back into task names and cells.
    pub fn parse_csv(text: &str) -> Result<(Vec<String>, SquareMatrix)> {
        let origin = Path::new("<csv>");
        let mut r = csv::Reader::from_reader(text.as_bytes());
        let header = r.headers().map_err(|e| Error::format(origin, e))?.clone();
        let names: Vec<String> = header.iter().skip(1).map(str::to_string).collect();
        let mut rows = Vec::new();
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::format(origin, e))?;
            let row = rec
                .iter()
                .skip(1)
                .map(|v| v.parse::<f64>().map_err(|e| Error::format(origin, e)))
                .collect::<Result<Vec<f64>>>()?;
            rows.push(row);
        }
        Ok((names, SquareMatrix::from_rows(&rows)?))
    }
}

fn worker_count() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Runs `jobs` on up to `available_parallelism` threads, preserving order.
fn parallel_map<J: Sync, R: Send>(jobs: &[J], f: impl Fn(&J) -> R + Sync) -> Vec<R> {
    let workers = worker_count().min(jobs.len()).max(1);
    if workers == 1 {
        return jobs.iter().map(&f).collect();
    }
    let next = std::sync::atomic::AtomicUsize::new(0);
    let mut slots: Vec<Option<R>> = (0..jobs.len()).map(|_| None).collect();
    let results = std::sync::Mutex::new(&mut slots);
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if k >= jobs.len() {
                    break;
                }
                let r = f(&jobs[k]);
                results.lock().expect("result lock")[k] = Some(r);
            });
        }
    });
    slots.into_iter().map(|r| r.expect("every job ran")).collect()
}

/// Probes every task on one extractor's features.
pub fn probe_row(run: &RunFeatures, cfg: &ProbeConfig) -> Result<Vec<ProbeResult>> {
    let tasks: Vec<usize> = (0..run.train.tasks.len()).collect();
    parallel_map(&tasks, |&j| train_probe(&run.train, &run.test, j, cfg))
        .into_iter()
        .collect()
}

/// Assembles the full matrix from one extractor per task.
pub fn build_matrix(runs: &[RunFeatures], tasks: &TaskRegistry, cfg: &ProbeConfig) -> Result<PerformanceMatrix> {
    tasks.validate()?;
    cfg.validate()?;
    let mut ordered = Vec::with_capacity(tasks.len());
    for t in tasks.tasks() {
        let run = runs
            .iter()
            .find(|r| r.preserved == t.name)
            .ok_or_else(|| Error::MissingCheckpoint(format!("no run preserving {}", t.name)))?;
        if &run.train.tasks != tasks {
            return Err(Error::RegistryMismatch(format!(
                "features of the {} run use a different task registry",
                t.name
            )));
        }
        ordered.push(run);
    }
    let jobs: Vec<(usize, usize)> = (0..tasks.len())
        .flat_map(|i| (0..tasks.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<ProbeResult> = parallel_map(&jobs, |&(i, j)| train_probe(&ordered[i].train, &ordered[i].test, j, cfg))
        .into_iter()
        .collect::<Result<_>>()?;
    let n = tasks.len();
    let details: Vec<Vec<ProbeResult>> = results.chunks(n).map(<[ProbeResult]>::to_vec).collect();
    Ok(PerformanceMatrix {
        format_version: MATRIX_FORMAT_VERSION,
        tasks: tasks.clone(),
        cells: SquareMatrix::from_fn(n, |i, j| details[i][j].test_accuracy),
        chance: SquareMatrix::from_fn(n, |i, j| details[i][j].chance),
        rows: ordered
            .iter()
            .map(|r| RowProvenance {
                preserved: r.preserved.clone(),
                checkpoint_id: r.checkpoint_id.clone(),
                label: "baseline".into(),
            })
            .collect(),
        probe: cfg.clone(),
        details,
    })
}

/// Matrix over run directories (one per preserved task).
pub fn build_matrix_from_runs(
    run_dirs: &[PathBuf],
    data_dir: Option<&Path>,
    cfg: &ProbeConfig,
) -> Result<PerformanceMatrix> {
    let runs = run_dirs
        .iter()
        .map(|d| RunFeatures::from_run(d, data_dir))
        .collect::<Result<Vec<_>>>()?;
    let tasks = runs
        .first()
        .map(|r| r.train.tasks.clone())
        .ok_or(Error::TooFewTasks(0))?;
    build_matrix(&runs, &tasks, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskSpec;
    use rand_distr::{Distribution, Normal};

    fn registry(n: usize) -> TaskRegistry {
        let names: Vec<String> = (0..n).map(|c| format!("c{c}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        TaskRegistry(vec![TaskSpec::new("t", &refs).unwrap()])
    }

    fn blobs(rows: usize, seed: u64, shuffle_labels: bool) -> FeatureSet {
        let mut rng = stream(seed, Stream::ProbeSplit, 99, 0, 0);
        let normal = Normal::new(0.0, 1.0).unwrap();
        let cols = 8;
        let mut data = Vec::new();
        let mut labels = Vec::new();
        for r in 0..rows {
            let c = r % 2;
            for k in 0..cols {
                let centre = if k == 0 { c as f64 * 5.0 - 2.5 } else { 0.0 };
                data.push((centre + normal.sample(&mut rng)) as f32);
            }
            labels.push(vec![c]);
        }
        if shuffle_labels {
            labels.shuffle(&mut rng);
        }
        FeatureSet {
            split: Split::Train,
            rows,
            cols,
            data,
            tasks: registry(2),
            labels,
        }
    }

    fn quick() -> ProbeConfig {
        ProbeConfig {
            max_epochs: 30,
            lr: 1e-3,
            ..ProbeConfig::default()
        }
    }

    #[test]
    fn defaults_match_the_fixed_architecture() {
        let c = ProbeConfig::default();
        assert_eq!(c.hidden, vec![512, 100]);
        assert_eq!(c.dropout, vec![0.5, 0.3]);
        assert_eq!((c.lr, c.batch_size, c.max_epochs, c.early_stop_patience), (1e-4, 32, 100, 10));
        assert_eq!(c.val_fraction, 0.2);
    }

    #[test]
    fn degenerate_labels_rejected() {
        let mut f = blobs(20, 1, false);
        for l in &mut f.labels {
            l[0] = 1;
        }
        let err = train_probe(&f, &f, 0, &quick()).unwrap_err();
        assert!(matches!(err, Error::DegenerateLabels(1)));
    }

    #[test]
    fn csv_round_trip() {
        let m = PerformanceMatrix {
            format_version: MATRIX_FORMAT_VERSION,
            tasks: TaskRegistry::preserve_task(),
            cells: SquareMatrix::from_fn(5, |i, j| (i * 5 + j) as f64 / 24.0 * 0.999_999_7),
            chance: SquareMatrix::from_fn(5, |_, _| 0.2),
            rows: vec![],
            probe: ProbeConfig::default(),
            details: vec![],
        };
        let (names, cells) = PerformanceMatrix::parse_csv(&m.to_csv()).unwrap();
        assert_eq!(names, TaskRegistry::preserve_task().names());
        for (a, b) in cells.cells.iter().zip(&m.cells.cells) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn majority_frequency_counts() {
        assert_eq!(majority_frequency(&[0, 1, 1, 2], 3), 0.5);
    }

    #[test]
    fn separable_blobs_are_learned() {
        // Means 5σ apart: the Bayes accuracy is Φ(2.5) ≈ 0.9938.
        let train = blobs(4000, 2, false);
        let test = blobs(2000, 3, false);
        let r = train_probe(&train, &test, 0, &quick()).unwrap();
        assert!(r.test_accuracy >= 0.9938 - 0.01, "{r:?}");
    }

    #[test]
    fn shuffled_labels_stay_at_chance() {
        let train = blobs(1000, 4, true);
        let test = blobs(2000, 5, true);
        let r = train_probe(&train, &test, 0, &quick()).unwrap();
        let sigma = (0.25f64 / 2000.0).sqrt();
        assert!((r.test_accuracy - 0.5).abs() <= 3.0 * sigma, "{r:?}");
    }
}
