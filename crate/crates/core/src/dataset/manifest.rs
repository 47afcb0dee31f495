//! On-disk sample index: one `# {json header}` comment line followed by a
//! CSV table `path,split,<task...>,instance` with class names in the task
//! columns.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::palette::Rgb;
use crate::error::{Error, Result};
use crate::tasks::TaskRegistry;

pub const MANIFEST_FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Split> {
        match s {
            "train" => Some(Split::Train),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    pub format_version: u32,
    /// Generator that produced the set, e.g. `preserve_task` or `colored_mnist`.
    pub kind: String,
    pub tasks: TaskRegistry,
    /// Echo of the generator configuration.
    pub config: serde_json::Value,
    pub palette: Vec<(String, Rgb)>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    /// Relative to the manifest's directory.
    pub path: String,
    pub split: Split,
    /// Class index per task, in registry order.
    pub labels: Vec<usize>,
    pub instance: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn tasks(&self) -> &TaskRegistry {
        &self.header.tasks
    }

    pub fn split_rows(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split_rows(split).count()
    }

    /// Per-class row counts for one task and split.
    pub fn class_histogram(&self, task: usize, split: Split) -> Vec<usize> {
        let mut hist = vec![0; self.header.tasks.0[task].num_classes];
        for row in self.split_rows(split) {
            hist[row.labels[task]] += 1;
        }
        hist
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let header = serde_json::to_string(&self.header).expect("header serializes");
        let fail = |e: std::io::Error| Error::io("<manifest>", e);
        writeln!(w, "# {header}").map_err(fail)?;
        let mut csv = csv::Writer::from_writer(w);
        let mut cols = vec!["path".to_string(), "split".to_string()];
        cols.extend(self.header.tasks.0.iter().map(|t| t.name.clone()));
        cols.push("instance".into());
        csv.write_record(&cols)
            .map_err(|e| Error::format("<manifest>", e))?;
        for row in &self.rows {
            let mut rec = vec![row.path.clone(), row.split.as_str().to_string()];
            for (t, &c) in self.header.tasks.0.iter().zip(&row.labels) {
                rec.push(t.class_names[c].clone());
            }
            rec.push(row.instance.to_string());
            csv.write_record(&rec)
                .map_err(|e| Error::format("<manifest>", e))?;
        }
        csv.flush().map_err(fail)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut f = BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?);
        self.write_to(&mut f).map_err(|e| relabel(e, path))?;
        f.flush().map_err(|e| Error::io(path, e))
    }

    pub fn read_from(r: impl BufRead, origin: &Path) -> Result<Self> {
        let mut r = r;
        let mut first = String::new();
        r.read_line(&mut first).map_err(|e| Error::io(origin, e))?;
        let json = first
            .trim_end()
            .strip_prefix("# ")
            .ok_or_else(|| Error::format(origin, "missing '# {json}' header line"))?;
        let header: ManifestHeader =
            serde_json::from_str(json).map_err(|e| Error::format(origin, e))?;
        if header.format_version != MANIFEST_FORMAT_VERSION {
            return Err(Error::format(
                origin,
                format!("unsupported manifest version {}", header.format_version),
            ));
        }
        header.tasks.validate()?;
        let mut csv = csv::Reader::from_reader(r);
        let cols = csv.headers().map_err(|e| Error::format(origin, e))?.clone();
        let n_tasks = header.tasks.len();
        let expected: Vec<&str> = ["path", "split"]
            .into_iter()
            .chain(header.tasks.names())
            .chain(["instance"])
            .collect();
        if cols.iter().collect::<Vec<_>>() != expected {
            return Err(Error::format(origin, format!("unexpected columns {cols:?}")));
        }
        let mut rows = Vec::new();
        for rec in csv.records() {
            let rec = rec.map_err(|e| Error::format(origin, e))?;
            let split = Split::parse(&rec[1])
                .ok_or_else(|| Error::format(origin, format!("bad split {}", &rec[1])))?;
            let mut labels = Vec::with_capacity(n_tasks);
            for (t, task) in header.tasks.0.iter().enumerate() {
                let name = &rec[2 + t];
                labels.push(task.class_index(name).ok_or_else(|| {
                    Error::format(origin, format!("unknown {} class {name}", task.name))
                })?);
            }
            let instance = rec[2 + n_tasks]
                .parse()
                .map_err(|e| Error::format(origin, e))?;
            rows.push(ManifestRow {
                path: rec[0].to_string(),
                split,
                labels,
                instance,
            });
        }
        Ok(DatasetManifest { header, rows })
    }

    /// Loads `manifest.csv` from a dataset directory (or a direct file path).
    pub fn load(path: &Path) -> Result<Self> {
        let file = if path.is_dir() {
            path.join(MANIFEST_FILE)
        } else {
            path.to_path_buf()
        };
        let f = File::open(&file).map_err(|e| Error::io(&file, e))?;
        Self::read_from(BufReader::new(f), &file)
    }
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Io { source, .. } => Error::io(path, source),
        Error::Format { detail, .. } => Error::format(path, detail),
        other => other,
    }
}
