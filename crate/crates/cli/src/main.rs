mod fetch;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use overlearn_core::dataset::{generate_dataset, GenConfig, Split};
use overlearn_core::mnist::{colorize_dir, ColorMnistConfig};
use overlearn_core::probes::{
    build_matrix_from_runs, probe_row, train_probe, PerformanceMatrix, ProbeConfig, RowProvenance, RunFeatures,
};
use overlearn_core::report::{export_report, Comparison};
use overlearn_core::trainer::{
    default_random_branches, extract_features, train_with_progress, Checkpoint, ConvBlock, EpochLog, FeatureSet,
    ModelConfig, PreparedData, RunRecord, SuppressionBranch, SuppressionMode, MODEL_FILE, RUN_FILE,
};
use overlearn_core::trust::{score_matrix, trust_delta};
use overlearn_core::TaskSpec;

#[derive(Parser)]
#[command(name = "overlearn", version, about = "Measure and suppress task overlearning in CNN features")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render the five-task synthetic shape dataset.
    Gen(GenArgs),
    /// Build colored MNIST from IDX files, optionally downloading them first.
    Mnist(MnistArgs),
    /// Train a feature extractor with optional suppression branches.
    Train(TrainArgs),
    /// Dump frozen features of a trained run.
    Extract(ExtractArgs),
    /// Probe one task on a feature dump.
    Probe(ProbeArgs),
    /// Probe every task on every baseline run and assemble the matrix.
    Matrix(MatrixArgs),
    /// Score a performance matrix.
    Trust(TrustArgs),
    /// Write CSV, JSON, SVG and markdown reports for a matrix.
    Report(ReportArgs),
}

#[derive(Args)]
struct GenArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    side: usize,
    #[arg(long, default_value_t = 50)]
    train_per_var: usize,
    #[arg(long, default_value_t = 10)]
    test_per_var: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct MnistArgs {
    /// Directory holding the four IDX files (gzipped or not).
    #[arg(long)]
    raw: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Mirror base URL; the IDX files are downloaded into `--raw` first.
    #[arg(long)]
    fetch: Option<String>,
    /// sha256sum-style listing; defaults to `<fetch>/SHA256SUMS`.
    #[arg(long, requires = "fetch")]
    checksums: Option<PathBuf>,
    #[arg(long, default_value_t = 128)]
    threshold: u8,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Gr,
    Negloss,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    preserve: String,
    /// Task name, `random:N`, or `random` for one branch per other class count.
    #[arg(long)]
    suppress: Vec<String>,
    #[arg(long, value_enum, default_value = "gr")]
    mode: Mode,
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Gradient-reversal scale; defaults to 1 - lambda.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Filters per conv block, e.g. `8,16,32`.
    #[arg(long, value_delimiter = ',')]
    filters: Option<Vec<usize>>,
    #[arg(long, default_value_t = 3)]
    kernel: usize,
    #[arg(long)]
    fc_dim: Option<usize>,
    /// Hidden ReLU width of each suppression head (0 = linear head).
    #[arg(long)]
    branch_hidden: Option<usize>,
    #[arg(short, long)]
    quiet: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long)]
    run: PathBuf,
    /// Dataset directory; defaults to the one recorded in run.json.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Output directory; defaults to the run directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "all")]
    split: SplitArg,
}

#[derive(Args, Clone)]
struct ProbeOpts {
    #[arg(long, default_value_t = 0)]
    probe_seed: u64,
    #[arg(long)]
    max_epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    probe_lr: Option<f64>,
}

impl ProbeOpts {
    fn config(&self) -> ProbeConfig {
        let mut c = ProbeConfig {
            seed: self.probe_seed,
            ..ProbeConfig::default()
        };
        if let Some(e) = self.max_epochs {
            c.max_epochs = e;
        }
        if let Some(p) = self.patience {
            c.early_stop_patience = p;
        }
        if let Some(lr) = self.probe_lr {
            c.lr = lr;
        }
        c
    }
}

#[derive(Args)]
struct ProbeArgs {
    /// Train-split feature sidecar (`features_train.json`).
    #[arg(long)]
    features: PathBuf,
    /// Test-split sidecar; defaults to `features_test.json` next to `--features`.
    #[arg(long)]
    test: Option<PathBuf>,
    #[arg(long)]
    task: String,
    #[command(flatten)]
    opts: ProbeOpts,
}

#[derive(Args)]
struct MatrixArgs {
    /// Directory whose subdirectories are training runs.
    #[arg(long)]
    runs: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Start from this matrix and replace one row instead of probing every baseline.
    #[arg(long, requires = "replace")]
    baseline: Option<PathBuf>,
    /// Run (relative to `--runs`) whose probes replace its preserved task's row.
    #[arg(long, requires = "baseline")]
    replace: Option<PathBuf>,
    #[arg(long)]
    label: Option<String>,
    #[command(flatten)]
    opts: ProbeOpts,
}

#[derive(Args)]
struct TrustArgs {
    #[arg(long)]
    matrix: PathBuf,
    #[arg(long)]
    baseline: Option<PathBuf>,
    /// Write the JSON here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    /// Directory containing `matrix.json`.
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Matrix to compare against the baseline, as `FILE` or `LABEL=FILE`.
    #[arg(long)]
    compare: Vec<String>,
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Gen(a) => gen(a),
        Command::Mnist(a) => mnist(a),
        Command::Train(a) => train(a),
        Command::Extract(a) => extract(a),
        Command::Probe(a) => probe(a),
        Command::Matrix(a) => matrix(a),
        Command::Trust(a) => trust(a),
        Command::Report(a) => report(a),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let cfg = GenConfig {
        image_side: a.side,
        train_per_variation: a.train_per_var,
        test_per_variation: a.test_per_var,
        seed: a.seed,
        ..GenConfig::default()
    };
    let m = generate_dataset(&cfg, &a.out)?;
    println!(
        "wrote {} train and {} test images to {}",
        m.count(Split::Train),
        m.count(Split::Test),
        a.out.display()
    );
    Ok(())
}

fn mnist(a: MnistArgs) -> Result<()> {
    if let Some(url) = &a.fetch {
        let n = fetch::fetch_mnist(url, &a.raw, a.checksums.as_deref())?;
        eprintln!("downloaded and verified {n} files into {}", a.raw.display());
    }
    let cfg = ColorMnistConfig {
        threshold: a.threshold,
        ..ColorMnistConfig::new(a.seed)
    };
    let m = colorize_dir(&a.raw, &cfg, &a.out)?;
    println!(
        "wrote {} train and {} test images to {}",
        m.count(Split::Train),
        m.count(Split::Test),
        a.out.display()
    );
    Ok(())
}

fn parse_branches(specs: &[String], mode: Mode, data: &PreparedData, preserved: &TaskSpec) -> Result<Vec<SuppressionBranch>> {
    let tasks = data.tasks();
    let mut out = Vec::new();
    for s in specs {
        if s == "random" {
            let mut defaults = default_random_branches(tasks, preserved);
            if defaults.is_empty() {
                bail!("every task has {} classes; name the branch size with random:N", preserved.num_classes);
            }
            out.append(&mut defaults);
        } else if let Some(n) = s.strip_prefix("random:") {
            let n: usize = n.parse().with_context(|| format!("bad class count in {s:?}"))?;
            out.push(SuppressionBranch::random(n));
        } else {
            let task = tasks
                .get(s)
                .with_context(|| format!("unknown task {s:?}; known: {}", tasks.names().join(", ")))?;
            let mode = match mode {
                Mode::Gr => SuppressionMode::KnownGr,
                Mode::Negloss => SuppressionMode::KnownNegativeLoss,
            };
            out.push(SuppressionBranch::known(task, mode));
        }
    }
    Ok(out)
}

fn train(a: TrainArgs) -> Result<()> {
    let data = PreparedData::load(&a.data)?;
    let task = data
        .tasks()
        .get(&a.preserve)
        .with_context(|| format!("unknown task {:?}", a.preserve))?
        .clone();
    let mut cfg = ModelConfig::new(data.train.side, task.clone());
    cfg.suppression = parse_branches(&a.suppress, a.mode, &data, &task)?;
    for b in &mut cfg.suppression {
        if b.uses_reversal() {
            b.alpha = a.alpha;
        }
    }
    cfg.lambda = a.lambda;
    cfg.seed = a.seed;
    if let Some(e) = a.epochs {
        cfg.epochs = e;
    }
    if let Some(lr) = a.lr {
        cfg.lr = lr;
    }
    if let Some(b) = a.batch_size {
        cfg.batch_size = b;
    }
    if let Some(f) = &a.filters {
        cfg.conv_blocks = f.iter().map(|&filters| ConvBlock { filters, kernel: a.kernel }).collect();
    }
    if let Some(d) = a.fc_dim {
        cfg.fc_feature_dim = d;
    }
    if let Some(h) = a.branch_hidden {
        cfg.branch_hidden = h;
    }
    let quiet = a.quiet;
    if !quiet {
        eprintln!("{}", EpochLog::csv_header(&cfg));
    }
    let record = train_with_progress(cfg, &data, &a.out, |log| {
        if !quiet {
            eprintln!("{}", log.csv_row());
        }
    })?;
    match record.best {
        Some(b) => println!(
            "best test accuracy {:.4} at epoch {}; run written to {}",
            b.test_accuracy,
            b.epoch,
            a.out.display()
        ),
        None => println!("run written to {}", a.out.display()),
    }
    Ok(())
}

fn extract(a: ExtractArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.run.join(MODEL_FILE))?;
    let data = match a.data {
        Some(d) => d,
        None => RunRecord::load(&a.run)?
            .data_dir
            .map(PathBuf::from)
            .context("run.json does not record a dataset; pass --data")?,
    };
    let out = a.out.unwrap_or_else(|| a.run.clone());
    let splits: &[Split] = match a.split {
        SplitArg::Train => &[Split::Train],
        SplitArg::Test => &[Split::Test],
        SplitArg::All => &[Split::Train, Split::Test],
    };
    for &split in splits {
        let f = extract_features(&ckpt, &data, split)?;
        f.save(&out)?;
        println!("{}: {}x{}", FeatureSet::sidecar_path(&out, split).display(), f.rows, f.cols);
    }
    Ok(())
}

fn probe(a: ProbeArgs) -> Result<()> {
    let train = FeatureSet::load_sidecar(&a.features)?;
    let test_path = match a.test {
        Some(t) => t,
        None => {
            let dir = a.features.parent().unwrap_or(Path::new("."));
            FeatureSet::sidecar_path(dir, Split::Test)
        }
    };
    let test = FeatureSet::load_sidecar(&test_path)?;
    let task = train
        .tasks
        .position(&a.task)
        .with_context(|| format!("unknown task {:?}", a.task))?;
    let result = train_probe(&train, &test, task, &a.opts.config())?;
    println!("{}", serde_json::to_string_pretty(&result)?);
    Ok(())
}

/// Subdirectories of `dir` that hold a finished run.
fn run_dirs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let p = e?.path();
        if p.join(RUN_FILE).is_file() {
            out.push(p);
        }
    }
    out.sort();
    Ok(out)
}

fn write_matrix(m: &PerformanceMatrix, out: &Path) -> Result<()> {
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent)?;
    }
    m.save_json(out)?;
    let csv = out.with_extension("csv");
    fs::write(&csv, m.to_csv()).with_context(|| format!("writing {}", csv.display()))?;
    Ok(())
}

fn matrix(a: MatrixArgs) -> Result<()> {
    let cfg = a.opts.config();
    let m = match (&a.baseline, &a.replace) {
        (Some(base), Some(run)) => {
            let base = PerformanceMatrix::load_json(base)?;
            let run_dir = a.runs.join(run);
            let feats = RunFeatures::from_run(&run_dir, a.data.as_deref())?;
            let i = base
                .tasks
                .position(&feats.preserved)
                .with_context(|| format!("baseline has no row for {}", feats.preserved))?;
            let label = match &a.label {
                Some(l) => l.clone(),
                None => run.display().to_string(),
            };
            let results = probe_row(&feats, &base.probe)?;
            base.with_row(
                i,
                RowProvenance {
                    preserved: feats.preserved.clone(),
                    checkpoint_id: feats.checkpoint_id.clone(),
                    label,
                },
                results,
            )?
        }
        _ => {
            let mut baselines = Vec::new();
            let mut seen = Vec::new();
            for d in run_dirs(&a.runs)? {
                let r = RunRecord::load(&d)?;
                if !r.config.suppression.is_empty() {
                    continue;
                }
                let name = r.config.preserved_task.name.clone();
                if seen.contains(&name) {
                    bail!("more than one baseline run preserves {name}");
                }
                seen.push(name);
                baselines.push(d);
            }
            build_matrix_from_runs(&baselines, a.data.as_deref(), &cfg)?
        }
    };
    write_matrix(&m, &a.out)?;
    let report = score_matrix(&m.tasks, &m.cells)?;
    println!("trust score {:.4} ({:?}); matrix written to {}", report.trust_score, report.band, a.out.display());
    Ok(())
}

fn trust(a: TrustArgs) -> Result<()> {
    let m = PerformanceMatrix::load_json(&a.matrix)?;
    let report = score_matrix(&m.tasks, &m.cells)?;
    let mut json = serde_json::json!({ "trust": report });
    eprintln!("trust score {:.4} ({:?})", report.trust_score, report.band);
    for o in &report.overlearned {
        eprintln!("  overlearned: {} -> {} at {:.4} (chance {:.4})", o.row, o.col, o.accuracy, o.ideal);
    }
    if let Some(b) = &a.baseline {
        let base = PerformanceMatrix::load_json(b)?;
        let before = score_matrix(&base.tasks, &base.cells)?;
        let delta = trust_delta(&before, &report)?;
        eprintln!(
            "baseline {:.4} -> {:.4} ({:+.4})",
            before.trust_score, report.trust_score, delta.delta
        );
        json["baseline"] = serde_json::to_value(&before)?;
        json["delta"] = serde_json::to_value(&delta)?;
    }
    let text = serde_json::to_string_pretty(&json)? + "\n";
    match a.out {
        Some(p) => fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn report(a: ReportArgs) -> Result<()> {
    let m = PerformanceMatrix::load_json(&a.run.join("matrix.json"))?;
    let t = score_matrix(&m.tasks, &m.cells)?;
    let mut comparisons = Vec::new();
    for c in &a.compare {
        let (label, path) = match c.split_once('=') {
            Some((l, p)) => (l.to_string(), PathBuf::from(p)),
            None => {
                let p = PathBuf::from(c);
                let stem = p.file_stem().map_or_else(|| c.clone(), |s| s.to_string_lossy().into_owned());
                (stem, p)
            }
        };
        comparisons.push(Comparison {
            label,
            matrix: PerformanceMatrix::load_json(&path)?,
        });
    }
    let files = export_report(&t, &m, &comparisons, &a.out)?;
    for f in files {
        println!("{}", f.display());
    }
    Ok(())
}
