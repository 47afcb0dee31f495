use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tasks::{TaskRegistry, TaskSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SuppressionMode {
    /// Branch attached directly; its loss enters the objective negated.
    KnownNegativeLoss,
    /// Branch behind a gradient-reversal node, trained on the task's labels.
    KnownGr,
    /// Branch behind a gradient-reversal node, trained on fresh uniform
    /// labels drawn every minibatch.
    RandomGr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuppressionBranch {
    pub mode: SuppressionMode,
    pub n_classes: usize,
    /// Suppressed task; required for the known-label modes.
    pub task: Option<TaskSpec>,
    /// Gradient-reversal scale; `None` means `1 - lambda`.
    pub alpha: Option<f64>,
}

impl SuppressionBranch {
    pub fn known(task: &TaskSpec, mode: SuppressionMode) -> Self {
        SuppressionBranch {
            mode,
            n_classes: task.num_classes,
            task: Some(task.clone()),
            alpha: None,
        }
    }

    pub fn random(n_classes: usize) -> Self {
        SuppressionBranch {
            mode: SuppressionMode::RandomGr,
            n_classes,
            task: None,
            alpha: None,
        }
    }

    pub fn uses_reversal(&self) -> bool {
        matches!(self.mode, SuppressionMode::KnownGr | SuppressionMode::RandomGr)
    }

    pub fn label(&self) -> String {
        match (&self.mode, &self.task) {
            (SuppressionMode::RandomGr, _) => format!("random{}", self.n_classes),
            (SuppressionMode::KnownGr, Some(t)) => format!("gr_{}", t.name),
            (SuppressionMode::KnownNegativeLoss, Some(t)) => format!("negloss_{}", t.name),
            (_, None) => "invalid".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvBlock {
    pub filters: usize,
    pub kernel: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_side: usize,
    pub input_channels: usize,
    pub conv_blocks: Vec<ConvBlock>,
    pub fc_feature_dim: usize,
    /// Width of a ReLU hidden layer in each suppression head; 0 makes the
    /// heads linear.
    #[serde(default)]
    pub branch_hidden: usize,
    pub preserved_task: TaskSpec,
    pub suppression: Vec<SuppressionBranch>,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Two conv blocks (16 and 32 filters, 3x3), 256-d features, λ = 0.5.
    pub fn new(input_side: usize, preserved_task: TaskSpec) -> Self {
        ModelConfig {
            input_side,
            input_channels: 3,
            conv_blocks: vec![
                ConvBlock { filters: 16, kernel: 3 },
                ConvBlock { filters: 32, kernel: 3 },
            ],
            fc_feature_dim: 256,
            branch_hidden: 0,
            preserved_task,
            suppression: Vec::new(),
            lambda: 0.5,
            lr: 1e-4,
            batch_size: 32,
            epochs: 30,
            seed: 0,
        }
    }

    /// Weight of the preserved loss. Without suppression branches the
    /// objective is the preserved loss alone, whatever `lambda` says.
    pub fn effective_lambda(&self) -> f64 {
        if self.suppression.is_empty() {
            1.0
        } else {
            self.lambda
        }
    }

    pub fn branch_alpha(&self, branch: &SuppressionBranch) -> f64 {
        branch.alpha.unwrap_or(1.0 - self.lambda)
    }

    /// Spatial side after all pooling stages.
    pub fn trunk_side(&self) -> usize {
        self.conv_blocks
            .iter()
            .fold(self.input_side, |s, _| s / 2)
    }

    pub fn flat_dim(&self) -> usize {
        let channels = self
            .conv_blocks
            .last()
            .map_or(self.input_channels, |b| b.filters);
        channels * self.trunk_side() * self.trunk_side()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.lambda) {
            return bad(format!("lambda {} outside [0, 1]", self.lambda));
        }
        if self.input_channels == 0 || self.fc_feature_dim == 0 {
            return bad("input_channels and fc_feature_dim must be positive".into());
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return bad("batch_size and epochs must be positive".into());
        }
        if !(self.lr > 0.0) {
            return bad(format!("learning rate {} must be positive", self.lr));
        }
        let mut side = self.input_side;
        for b in &self.conv_blocks {
            if b.kernel % 2 == 0 || b.filters == 0 {
                return bad(format!("conv block {b:?} needs an odd kernel and >= 1 filter"));
            }
            if side < 2 {
                return bad(format!("input side {} too small for {} pooling stages", self.input_side, self.conv_blocks.len()));
            }
            side /= 2;
        }
        self.preserved_task.validate()?;
        for br in &self.suppression {
            if br.n_classes < 2 {
                return bad(format!("suppression branch needs >= 2 classes, got {}", br.n_classes));
            }
            if let Some(a) = br.alpha {
                if !(a >= 0.0) {
                    return bad(format!("alpha {a} must be non-negative"));
                }
            }
            match br.mode {
                SuppressionMode::RandomGr => {
                    if br.n_classes == self.preserved_task.num_classes {
                        return bad(format!(
                            "random branch with {} classes matches the preserved task's class count",
                            br.n_classes
                        ));
                    }
                }
                SuppressionMode::KnownGr | SuppressionMode::KnownNegativeLoss => {
                    let Some(task) = &br.task else {
                        return bad("known-label suppression needs a task".into());
                    };
                    if task.name == self.preserved_task.name {
                        return bad(format!("cannot suppress the preserved task {}", task.name));
                    }
                    if task.num_classes != br.n_classes {
                        return bad(format!(
                            "branch declares {} classes, task {} has {}",
                            br.n_classes, task.name, task.num_classes
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Checks that preserved and known-suppressed tasks exist in `tasks`.
    pub fn check_against(&self, tasks: &TaskRegistry) -> Result<()> {
        let known = std::iter::once(&self.preserved_task)
            .chain(self.suppression.iter().filter_map(|b| b.task.as_ref()));
        for t in known {
            match tasks.get(&t.name) {
                Some(found) if found == t => {}
                Some(_) => {
                    return Err(Error::ConfigMismatch(format!(
                        "task {} differs from the dataset's definition",
                        t.name
                    )))
                }
                None => {
                    return Err(Error::InvalidConfig(format!(
                        "task {} not present in the dataset",
                        t.name
                    )))
                }
            }
        }
        Ok(())
    }
}

/// One random-label branch per distinct class count in the registry other
/// than the preserved task's, in increasing order.
pub fn default_random_branches(tasks: &TaskRegistry, preserved: &TaskSpec) -> Vec<SuppressionBranch> {
    let mut counts: Vec<usize> = tasks
        .tasks()
        .iter()
        .map(|t| t.num_classes)
        .filter(|&n| n != preserved.num_classes)
        .collect();
    counts.sort_unstable();
    counts.dedup();
    counts.into_iter().map(SuppressionBranch::random).collect()
}
