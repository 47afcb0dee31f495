//! SVG heatmaps and on-disk report bundles for performance matrices and
//! trust scores. Every artifact is a pure function of its inputs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::palette::Rgb;
use crate::error::{Error, Result};
use crate::probes::PerformanceMatrix;
use crate::trust::{trust_delta, SquareMatrix, TrustDelta, TrustReport};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatmapSpec {
    pub title: String,
    /// Colour of a cell with value 0.
    pub low: Rgb,
    /// Colour of a cell with value 1.
    pub high: Rgb,
    /// Decimal places of the cell labels.
    pub precision: usize,
    pub cell_size: usize,
}

impl Default for HeatmapSpec {
    fn default() -> Self {
        HeatmapSpec {
            title: "Task performance".into(),
            low: [26, 152, 80],
            high: [215, 48, 39],
            precision: 2,
            cell_size: 72,
        }
    }
}

/// Linear ramp from `spec.low` at 0 to `spec.high` at 1; inputs are
/// clamped to `[0, 1]`.
pub fn ramp(spec: &HeatmapSpec, value: f64) -> Rgb {
    let t = if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) };
    let mut out = [0u8; 3];
    for c in 0..3 {
        let (a, b) = (spec.low[c] as f64, spec.high[c] as f64);
        out[c] = (a + (b - a) * t).round() as u8;
    }
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Grid of `matrix` with row and column task labels. Rows are preserved
/// tasks, columns probed tasks.
pub fn render_heatmap(matrix: &SquareMatrix, labels: &[String], spec: &HeatmapSpec) -> Result<String> {
    let n = matrix.n;
    if labels.len() != n {
        return Err(Error::ShapeMismatch(format!("{} labels for a {n}x{n} matrix", labels.len())));
    }
    let cs = spec.cell_size;
    let (left, top) = (120, 90);
    let width = left + n * cs + 20;
    let height = top + n * cs + 40;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif">"#
    );
    let _ = writeln!(
        s,
        r#"<title>{}</title>"#,
        escape(&spec.title)
    );
    let _ = writeln!(
        s,
        r#"<text class="title" x="{}" y="24" font-size="16" text-anchor="middle">{}</text>"#,
        width / 2,
        escape(&spec.title)
    );
    for (j, l) in labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="col-label" x="{}" y="{}" font-size="12" text-anchor="middle">{}</text>"#,
            left + j * cs + cs / 2,
            top - 10,
            escape(l)
        );
    }
    for (i, l) in labels.iter().enumerate() {
        let _ = writeln!(
            s,
            r#"<text class="row-label" x="{}" y="{}" font-size="12" text-anchor="end">{}</text>"#,
            left - 8,
            top + i * cs + cs / 2 + 4,
            escape(l)
        );
    }
    for i in 0..n {
        for j in 0..n {
            let v = matrix.get(i, j);
            let [r, g, b] = ramp(spec, v);
            let (x, y) = (left + j * cs, top + i * cs);
            let _ = writeln!(
                s,
                "<rect class=\"cell\" x=\"{x}\" y=\"{y}\" width=\"{cs}\" height=\"{cs}\" fill=\"#{r:02x}{g:02x}{b:02x}\" stroke=\"#ffffff\"/>"
            );
            let _ = writeln!(
                s,
                "<text class=\"value\" x=\"{}\" y=\"{}\" font-size=\"13\" text-anchor=\"middle\" fill=\"#000000\">{:.*}</text>",
                x + cs / 2,
                y + cs / 2 + 5,
                spec.precision,
                v
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}

/// Another matrix over the same tasks, compared against the baseline.
#[derive(Debug, Clone)]
pub struct Comparison {
    pub label: String,
    pub matrix: PerformanceMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub label: String,
    pub trust: TrustReport,
    pub delta: TrustDelta,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustFile {
    pub format_version: u32,
    pub baseline: TrustReport,
    pub comparisons: Vec<ComparisonReport>,
}

/// Writes `matrix.csv`, `matrix.json`, `trust.json`, `heatmap.svg`, and
/// `summary.md`; each comparison also gets `matrix_<label>.json` and
/// `heatmap_<label>.svg`. Returns the written paths.
pub fn export_report(
    trust: &TrustReport,
    matrix: &PerformanceMatrix,
    comparisons: &[Comparison],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let labels: Vec<String> = matrix.tasks.names().into_iter().map(String::from).collect();
    let mut written = Vec::new();
    let mut put = |name: &str, text: &str| -> Result<()> {
        let p = out_dir.join(name);
        fs::write(&p, text).map_err(|e| Error::io(&p, e))?;
        written.push(p);
        Ok(())
    };
    put("matrix.csv", &matrix.to_csv())?;
    put("matrix.json", &matrix.to_json())?;
    let spec = HeatmapSpec {
        title: "Baseline task performance".into(),
        ..HeatmapSpec::default()
    };
    put("heatmap.svg", &render_heatmap(&matrix.cells, &labels, &spec)?)?;

    let mut reports = Vec::with_capacity(comparisons.len());
    for c in comparisons {
        if c.matrix.tasks != matrix.tasks {
            return Err(Error::RegistryMismatch(format!("comparison {} uses other tasks", c.label)));
        }
        let t = crate::trust::score_matrix(&c.matrix.tasks, &c.matrix.cells)?;
        let delta = trust_delta(trust, &t)?;
        let slug = slug(&c.label);
        put(&format!("matrix_{slug}.json"), &c.matrix.to_json())?;
        let spec = HeatmapSpec {
            title: format!("Task performance: {}", c.label),
            ..HeatmapSpec::default()
        };
        put(&format!("heatmap_{slug}.svg"), &render_heatmap(&c.matrix.cells, &labels, &spec)?)?;
        reports.push(ComparisonReport {
            label: c.label.clone(),
            trust: t,
            delta,
        });
    }
    let file = TrustFile {
        format_version: REPORT_FORMAT_VERSION,
        baseline: trust.clone(),
        comparisons: reports,
    };
    let mut json = serde_json::to_string_pretty(&file).expect("trust file serializes");
    json.push('\n');
    put("trust.json", &json)?;
    put("summary.md", &summary_markdown(matrix, &file))?;
    Ok(written)
}

fn slug(label: &str) -> String {
    label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn markdown_matrix(out: &mut String, tasks: &[String], m: &SquareMatrix) {
    let _ = writeln!(out, "| preserved \\ probed | {} |", tasks.join(" | "));
    let _ = writeln!(out, "|---|{}", "---|".repeat(tasks.len()));
    for (i, t) in tasks.iter().enumerate() {
        let cells: Vec<String> = (0..m.n).map(|j| format!("{:.4}", m.get(i, j))).collect();
        let _ = writeln!(out, "| {t} | {} |", cells.join(" | "));
    }
}

pub fn summary_markdown(matrix: &PerformanceMatrix, file: &TrustFile) -> String {
    let t = &file.baseline;
    let mut s = String::new();
    let _ = writeln!(s, "# Trust report\n");
    let _ = writeln!(s, "Trust score: **{:.4}** ({:?})\n", t.trust_score, t.band);
    let _ = writeln!(s, "## Performance matrix\n");
    markdown_matrix(&mut s, &t.tasks, &matrix.cells);
    let _ = writeln!(s, "\n## Overlearned cells\n");
    if t.overlearned.is_empty() {
        let _ = writeln!(s, "None above the {:.2} threshold.", t.overlearning_threshold);
    } else {
        for o in &t.overlearned {
            let _ = writeln!(
                s,
                "- {} features predict {}: {:.4} (chance {:.4})",
                o.row, o.col, o.accuracy, o.ideal
            );
        }
    }
    if !file.comparisons.is_empty() {
        let _ = writeln!(s, "\n## Deltas\n");
        let _ = writeln!(s, "| run | trust | delta |");
        let _ = writeln!(s, "|---|---|---|");
        for c in &file.comparisons {
            let _ = writeln!(s, "| {} | {:.4} | {:+.4} |", c.label, c.trust.trust_score, c.delta.delta);
        }
        for c in &file.comparisons {
            let _ = writeln!(s, "\n### {}\n", c.label);
            let _ = writeln!(s, "Largest cell contributions:\n");
            for cell in c.delta.cells.iter().filter(|c| c.contribution != 0.0).take(5) {
                let _ = writeln!(s, "- {} -> {}: {:+.4}", cell.row, cell.col, cell.contribution);
            }
        }
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::probes::{ProbeConfig, MATRIX_FORMAT_VERSION};
    use crate::tasks::TaskRegistry;
    use crate::trust::{ideal_matrix, score_matrix};

    fn labels() -> Vec<String> {
        TaskRegistry::preserve_task().names().into_iter().map(String::from).collect()
    }

    fn matrix(cells: SquareMatrix) -> PerformanceMatrix {
        PerformanceMatrix {
            format_version: MATRIX_FORMAT_VERSION,
            tasks: TaskRegistry::preserve_task(),
            chance: cells.clone(),
            cells,
            rows: vec![],
            probe: ProbeConfig::default(),
            details: vec![],
        }
    }

    #[test]
    fn ramp_is_monotone_between_endpoints() {
        let spec = HeatmapSpec::default();
        assert_eq!(ramp(&spec, 0.0), spec.low);
        assert_eq!(ramp(&spec, 1.0), spec.high);
        let mut prev = ramp(&spec, 0.0);
        for k in 1..=100 {
            let c = ramp(&spec, k as f64 / 100.0);
            for ch in 0..3 {
                let up = spec.high[ch] >= spec.low[ch];
                assert!(if up { c[ch] >= prev[ch] } else { c[ch] <= prev[ch] });
            }
            prev = c;
        }
    }

    #[test]
    fn heatmap_structure_and_determinism() {
        let m = ideal_matrix(&TaskRegistry::preserve_task()).unwrap();
        let spec = HeatmapSpec::default();
        let a = render_heatmap(&m, &labels(), &spec).unwrap();
        assert_eq!(a, render_heatmap(&m, &labels(), &spec).unwrap());
        assert_eq!(a.matches("<rect class=\"cell\"").count(), 25);
        assert_eq!(a.matches("<text class=\"value\"").count(), 25);
        let [r, g, b] = spec.high;
        let diag = format!("x=\"120\" y=\"90\" width=\"72\" height=\"72\" fill=\"#{r:02x}{g:02x}{b:02x}\"");
        assert!(a.contains(&diag));
    }

    #[test]
    fn export_without_comparisons_omits_deltas() {
        let dir = tempfile::tempdir().unwrap();
        let cells = SquareMatrix::from_fn(5, |i, j| if i == j { 0.95 } else { 0.5 });
        let m = matrix(cells);
        let t = score_matrix(&m.tasks, &m.cells).unwrap();
        let files = export_report(&t, &m, &[], dir.path()).unwrap();
        assert_eq!(files.len(), 5);
        for f in ["matrix.csv", "matrix.json", "trust.json", "heatmap.svg", "summary.md"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let summary = fs::read_to_string(dir.path().join("summary.md")).unwrap();
        assert!(!summary.contains("## Deltas"));
        let back = PerformanceMatrix::load_json(&dir.path().join("matrix.json")).unwrap();
        assert_eq!(back, m);
        let trust: TrustFile =
            serde_json::from_str(&fs::read_to_string(dir.path().join("trust.json")).unwrap()).unwrap();
        assert_eq!(trust.baseline, t);
    }

    #[test]
    fn export_with_comparison_reports_delta() {
        let dir = tempfile::tempdir().unwrap();
        let base = matrix(SquareMatrix::from_fn(5, |i, j| if i == j { 0.95 } else { 0.6 }));
        let mut after = base.clone();
        after.cells.set(0, 4, 1.0 / 3.0);
        let t = score_matrix(&base.tasks, &base.cells).unwrap();
        let cmp = Comparison {
            label: "random gr".into(),
            matrix: after,
        };
        export_report(&t, &base, &[cmp], dir.path()).unwrap();
        let summary = fs::read_to_string(dir.path().join("summary.md")).unwrap();
        assert!(summary.contains("## Deltas"));
        assert!(dir.path().join("heatmap_random_gr.svg").exists());
    }
}
