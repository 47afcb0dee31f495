//! Trust score of a task performance matrix.
//!
//! `score = 1 - Σ(|M - T| ∘ W) / ΣW`, where `M` is the ideal matrix (1 on
//! the diagonal, chance `1/n_j` off it) and `W` weights diagonal cells by
//! `n_t - 1` and off-diagonal cells by 1.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::TaskRegistry;

/// Square matrix stored row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SquareMatrix {
    pub n: usize,
    pub cells: Vec<f64>,
}

impl SquareMatrix {
    pub fn from_fn(n: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        SquareMatrix {
            n,
            cells: (0..n * n).map(|k| f(k / n, k % n)).collect(),
        }
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(Error::ShapeMismatch("matrix rows must have length n".into()));
        }
        Ok(SquareMatrix {
            n,
            cells: rows.concat(),
        })
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.cells[i * self.n + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.cells[i * self.n + j] = v;
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        self.cells.chunks(self.n).map(<[f64]>::to_vec).collect()
    }

    pub fn sum(&self) -> f64 {
        self.cells.iter().sum()
    }

    /// `P · A · Pᵀ` for the permutation mapping new index `k` to old `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        SquareMatrix::from_fn(self.n, |i, j| self.get(perm[i], perm[j]))
    }
}

pub fn ideal_matrix(tasks: &TaskRegistry) -> Result<SquareMatrix> {
    if tasks.len() < 2 {
        return Err(Error::TooFewTasks(tasks.len()));
    }
    for t in tasks.tasks() {
        if t.num_classes < 2 {
            return Err(Error::TooFewClasses {
                task: t.name.clone(),
                classes: t.num_classes,
            });
        }
    }
    let counts: Vec<usize> = tasks.tasks().iter().map(|t| t.num_classes).collect();
    Ok(SquareMatrix::from_fn(counts.len(), |i, j| {
        if i == j {
            1.0
        } else {
            1.0 / counts[j] as f64
        }
    }))
}

pub fn weight_matrix(n_tasks: usize) -> Result<SquareMatrix> {
    if n_tasks < 2 {
        return Err(Error::TooFewTasks(n_tasks));
    }
    Ok(SquareMatrix::from_fn(n_tasks, |i, j| {
        if i == j {
            (n_tasks - 1) as f64
        } else {
            1.0
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrustBand {
    High,
    Acceptable,
    Poor,
}

impl TrustBand {
    /// `> 0.9` high, `[0.8, 0.9]` acceptable, `< 0.8` poor.
    pub fn classify(score: f64) -> Self {
        if score > 0.9 {
            TrustBand::High
        } else if score >= 0.8 {
            TrustBand::Acceptable
        } else {
            TrustBand::Poor
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Overlearned {
    pub row: String,
    pub col: String,
    pub accuracy: f64,
    pub ideal: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustReport {
    pub tasks: Vec<String>,
    pub trust_score: f64,
    pub band: TrustBand,
    pub ideal: SquareMatrix,
    pub weights: SquareMatrix,
    pub deviation: SquareMatrix,
    /// Off-diagonal cells whose accuracy exceeds chance by more than
    /// `overlearning_threshold`.
    pub overlearned: Vec<Overlearned>,
    pub overlearning_threshold: f64,
}

pub const DEFAULT_OVERLEARNING_THRESHOLD: f64 = 0.1;

pub fn trust_score(
    tasks: &TaskRegistry,
    performance: &SquareMatrix,
    ideal: &SquareMatrix,
    weights: &SquareMatrix,
) -> Result<TrustReport> {
    let n = performance.n;
    if ideal.n != n || weights.n != n || tasks.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "T is {n}x{n}, M is {}x{}, W is {}x{}, {} tasks",
            ideal.n,
            ideal.n,
            weights.n,
            weights.n,
            tasks.len()
        )));
    }
    for i in 0..n {
        for j in 0..n {
            let v = performance.get(i, j);
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::OutOfRangeCell { row: i, col: j, value: v });
            }
        }
    }
    let deviation = SquareMatrix::from_fn(n, |i, j| (ideal.get(i, j) - performance.get(i, j)).abs());
    let weighted: f64 = deviation
        .cells
        .iter()
        .zip(&weights.cells)
        .map(|(d, w)| d * w)
        .sum();
    let trust_score = 1.0 - weighted / weights.sum();
    let names: Vec<String> = tasks.names().into_iter().map(String::from).collect();
    let threshold = DEFAULT_OVERLEARNING_THRESHOLD;
    let mut overlearned = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i != j && performance.get(i, j) - ideal.get(i, j) > threshold {
                overlearned.push(Overlearned {
                    row: names[i].clone(),
                    col: names[j].clone(),
                    accuracy: performance.get(i, j),
                    ideal: ideal.get(i, j),
                });
            }
        }
    }
    Ok(TrustReport {
        tasks: names,
        trust_score,
        band: TrustBand::classify(trust_score),
        ideal: ideal.clone(),
        weights: weights.clone(),
        deviation,
        overlearned,
        overlearning_threshold: threshold,
    })
}

/// Builds M and W from the registry and scores `performance`.
pub fn score_matrix(tasks: &TaskRegistry, performance: &SquareMatrix) -> Result<TrustReport> {
    let ideal = ideal_matrix(tasks)?;
    let weights = weight_matrix(tasks.len())?;
    trust_score(tasks, performance, &ideal, &weights)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellContribution {
    pub row: String,
    pub col: String,
    /// Change of this cell's weighted deviation divided by ΣW; positive
    /// values raise the score of `after` relative to `before`.
    pub contribution: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrustDelta {
    /// `after.trust_score - before.trust_score`.
    pub delta: f64,
    /// Sorted by decreasing absolute contribution.
    pub cells: Vec<CellContribution>,
}

pub fn trust_delta(before: &TrustReport, after: &TrustReport) -> Result<TrustDelta> {
    if before.tasks != after.tasks || before.weights != after.weights || before.ideal != after.ideal {
        return Err(Error::RegistryMismatch(format!(
            "{:?} vs {:?}",
            before.tasks, after.tasks
        )));
    }
    let n = before.tasks.len();
    let total_w = before.weights.sum();
    let mut cells = Vec::with_capacity(n * n);
    for i in 0..n {
        for j in 0..n {
            let w = before.weights.get(i, j);
            let c = (before.deviation.get(i, j) - after.deviation.get(i, j)) * w / total_w;
            cells.push(CellContribution {
                row: before.tasks[i].clone(),
                col: before.tasks[j].clone(),
                contribution: c,
            });
        }
    }
    cells.sort_by(|a, b| {
        b.contribution
            .abs()
            .total_cmp(&a.contribution.abs())
            .then_with(|| (&a.row, &a.col).cmp(&(&b.row, &b.col)))
    });
    Ok(TrustDelta {
        delta: after.trust_score - before.trust_score,
        cells,
    })
}
