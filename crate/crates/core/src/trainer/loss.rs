use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, SuppressionMode};
use super::model::ForwardNodes;
use crate::autodiff::{Element, Graph, NodeId, Targets};
use crate::error::{Error, Result};

/// `λ·L_p − (1−λ)·Σ L_s`.
pub fn combined_loss(preserved_loss: f64, suppression_losses: &[f64], lambda: f64) -> f64 {
    let s: f64 = suppression_losses.iter().sum();
    lambda * preserved_loss - (1.0 - lambda) * s
}

/// Upper bound on a maximized branch loss; past it the branch stops
/// pushing the trunk.
pub fn suppression_cap(n_classes: usize) -> f64 {
    4.0 * (n_classes as f64).ln()
}

/// I.i.d. uniform class indices in `0..n_classes`.
pub fn random_labels(batch_size: usize, n_classes: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..batch_size).map(|_| rng.gen_range(0..n_classes)).collect()
}

/// Loss nodes and scalar values for one minibatch.
#[derive(Debug, Clone)]
pub struct LossNodes {
    pub preserved: NodeId,
    pub branches: Vec<NodeId>,
    /// Scalar node the optimizer differentiates.
    pub objective: NodeId,
    pub preserved_value: f64,
    /// Branch losses as they enter the combined loss, clamped at
    /// [`suppression_cap`].
    pub branch_values: Vec<f64>,
    pub combined: f64,
}

/// Builds the training objective.
///
/// The optimized scalar is the combined loss divided by λ (for λ > 0), so the
/// preserved term always carries unit weight. Reversal branches contribute
/// `+L_s/λ` and receive the `-(1-λ)` factor through their reversal node; the
/// negative-loss mode contributes `-(1-λ)/λ · L_s` directly. Once a branch
/// loss reaches its cap the trunk gets no gradient from that branch: the
/// negative term becomes constant and a reversal node's scale drops to 0,
/// while a reversal head keeps fitting its labels.
pub fn objective<T: Element>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    fwd: &ForwardNodes,
    preserved_targets: Targets<T>,
    branch_targets: Vec<Targets<T>>,
) -> Result<LossNodes> {
    if branch_targets.len() != cfg.suppression.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} branch target sets for {} branches",
            branch_targets.len(),
            cfg.suppression.len()
        )));
    }
    let lambda = cfg.effective_lambda();
    let preserved = g.softmax_cross_entropy(fwd.preserved_logits, preserved_targets)?;
    let preserved_value = g.value(preserved).item().to_f64();
    let mut objective = (lambda > 0.0).then_some(preserved);
    let mut branches = Vec::with_capacity(branch_targets.len());
    let mut branch_values = Vec::with_capacity(branch_targets.len());
    for (((br, &logits), reversal), targets) in cfg
        .suppression
        .iter()
        .zip(&fwd.branch_logits)
        .zip(&fwd.reversals)
        .zip(branch_targets)
    {
        let loss = g.softmax_cross_entropy(logits, targets)?;
        let value = g.value(loss).item().to_f64();
        branches.push(loss);
        let cap = suppression_cap(br.n_classes);
        branch_values.push(value.min(cap));
        let term = match br.mode {
            SuppressionMode::KnownGr | SuppressionMode::RandomGr => {
                if value >= cap {
                    let r = reversal.ok_or_else(|| Error::ShapeMismatch("reversal branch without a reversal node".into()))?;
                    g.set_reversal_scale(r, T::ZERO)?;
                }
                let w = if lambda > 0.0 { 1.0 / lambda } else { 1.0 };
                Some(g.scale(loss, T::from_f64(w)))
            }
            SuppressionMode::KnownNegativeLoss => {
                if value >= cap {
                    None
                } else {
                    let w = if lambda > 0.0 {
                        -(1.0 - lambda) / lambda
                    } else {
                        -1.0
                    };
                    Some(g.scale(loss, T::from_f64(w)))
                }
            }
        };
        if let Some(term) = term {
            objective = Some(match objective {
                Some(acc) => g.add(acc, term)?,
                None => term,
            });
        }
    }
    let objective = match objective {
        Some(o) => o,
        None => g.scale(preserved, T::ZERO),
    };
    Ok(LossNodes {
        preserved,
        branches,
        objective,
        preserved_value,
        combined: combined_loss(preserved_value, &branch_values, lambda),
        branch_values,
    })
}
