use rand::Rng;

use super::config::{ModelConfig, SuppressionMode};
use crate::autodiff::{Element, Graph, NodeId, Padding, Tensor};
use crate::error::{Error, Result};
use crate::rng::{stream, Stream};

/// Name and shape of every trainable tensor, in storage order: conv blocks,
/// feature layer, preserved head, then one head per suppression branch.
pub fn param_layout(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let mut channels = cfg.input_channels;
    for (i, b) in cfg.conv_blocks.iter().enumerate() {
        out.push((format!("conv{i}.w"), vec![b.filters, channels, b.kernel, b.kernel]));
        out.push((format!("conv{i}.b"), vec![b.filters]));
        channels = b.filters;
    }
    out.push(("fc.w".into(), vec![cfg.flat_dim(), cfg.fc_feature_dim]));
    out.push(("fc.b".into(), vec![cfg.fc_feature_dim]));
    let n = cfg.preserved_task.num_classes;
    out.push(("head.preserved.w".into(), vec![cfg.fc_feature_dim, n]));
    out.push(("head.preserved.b".into(), vec![n]));
    for (i, br) in cfg.suppression.iter().enumerate() {
        let mut width = cfg.fc_feature_dim;
        if cfg.branch_hidden > 0 {
            out.push((format!("head.branch{i}.hidden.w"), vec![width, cfg.branch_hidden]));
            out.push((format!("head.branch{i}.hidden.b"), vec![cfg.branch_hidden]));
            width = cfg.branch_hidden;
        }
        out.push((format!("head.branch{i}.w"), vec![width, br.n_classes]));
        out.push((format!("head.branch{i}.b"), vec![br.n_classes]));
    }
    out
}

/// Parameter tensors per suppression head.
pub fn tensors_per_branch(cfg: &ModelConfig) -> usize {
    if cfg.branch_hidden > 0 {
        4
    } else {
        2
    }
}

/// Analytic parameter count of the declared topology.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    let mut total = 0;
    let mut channels = cfg.input_channels;
    for b in &cfg.conv_blocks {
        total += b.filters * channels * b.kernel * b.kernel + b.filters;
        channels = b.filters;
    }
    total += cfg.flat_dim() * cfg.fc_feature_dim + cfg.fc_feature_dim;
    let n = cfg.preserved_task.num_classes;
    total += cfg.fc_feature_dim * n + n;
    for b in &cfg.suppression {
        let n = b.n_classes;
        total += if cfg.branch_hidden > 0 {
            let h = cfg.branch_hidden;
            cfg.fc_feature_dim * h + h + h * n + n
        } else {
            cfg.fc_feature_dim * n + n
        };
    }
    total
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub names: Vec<String>,
    pub params: Vec<Tensor<f32>>,
}

/// Node handles produced by one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardNodes {
    pub params: Vec<NodeId>,
    pub features: NodeId,
    pub preserved_logits: NodeId,
    pub branch_logits: Vec<NodeId>,
    /// Reversal node feeding each branch head, if any.
    pub reversals: Vec<Option<NodeId>>,
}

impl Model {
    /// Fan-in scaled uniform init (`±sqrt(6 / fan_in)`), zero biases. Each
    /// tensor draws from its own stream keyed by its slot, so adding heads
    /// never changes the trunk's initial weights.
    pub fn init(config: ModelConfig) -> Result<Model> {
        config.validate()?;
        let layout = param_layout(&config);
        let mut names = Vec::with_capacity(layout.len());
        let mut params = Vec::with_capacity(layout.len());
        for (slot, (name, shape)) in layout.into_iter().enumerate() {
            let tensor = if name.ends_with(".b") {
                Tensor::zeros(&shape)
            } else {
                let fan_in: usize = if shape.len() == 4 {
                    shape[1..].iter().product()
                } else {
                    shape[0]
                };
                let limit = (6.0 / fan_in as f64).sqrt();
                let mut rng = stream(config.seed, Stream::Init, slot as u64, 0, 0);
                Tensor::from_fn(&shape, |_| rng.gen_range(-limit..limit) as f32)
            };
            names.push(name);
            params.push(tensor);
        }
        Ok(Model {
            config,
            names,
            params,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<f32>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }
}

/// Appends the model to `g`: `x` is `[n, c, side, side]`. Suppression heads
/// behind a reversal node get `alpha` from the config.
pub fn forward<T: Element>(
    cfg: &ModelConfig,
    params: &[Tensor<T>],
    g: &mut Graph<T>,
    x: NodeId,
) -> Result<ForwardNodes> {
    let expected = 2 * cfg.conv_blocks.len() + 4 + tensors_per_branch(cfg) * cfg.suppression.len();
    if params.len() != expected {
        return Err(Error::ShapeMismatch(format!(
            "model expects {expected} parameter tensors, got {}",
            params.len()
        )));
    }
    let ids: Vec<NodeId> = params.iter().map(|p| g.param(p.clone())).collect();
    let mut h = x;
    let mut slot = 0;
    for _ in &cfg.conv_blocks {
        h = g.conv2d(h, ids[slot], ids[slot + 1], Padding::Same)?;
        h = g.relu(h);
        h = g.max_pool2(h)?;
        slot += 2;
    }
    let flat = g.flatten(h)?;
    let fc = g.matmul(flat, ids[slot])?;
    let fc = g.add_bias(fc, ids[slot + 1])?;
    let features = g.relu(fc);
    slot += 2;
    let head = |g: &mut Graph<T>, input: NodeId, slot: usize| -> Result<NodeId> {
        let z = g.matmul(input, ids[slot])?;
        g.add_bias(z, ids[slot + 1])
    };
    let preserved_logits = head(g, features, slot)?;
    slot += 2;
    let mut branch_logits = Vec::with_capacity(cfg.suppression.len());
    let mut reversals = Vec::with_capacity(cfg.suppression.len());
    for br in &cfg.suppression {
        let input = match br.mode {
            SuppressionMode::KnownNegativeLoss => {
                reversals.push(None);
                features
            }
            SuppressionMode::KnownGr | SuppressionMode::RandomGr => {
                let r = g.grad_reverse(features, T::from_f64(cfg.branch_alpha(br)));
                reversals.push(Some(r));
                r
            }
        };
        let input = if cfg.branch_hidden > 0 {
            let z = head(g, input, slot)?;
            slot += 2;
            g.relu(z)
        } else {
            input
        };
        branch_logits.push(head(g, input, slot)?);
        slot += 2;
    }
    Ok(ForwardNodes {
        params: ids,
        features,
        preserved_logits,
        branch_logits,
        reversals,
    })
}

/// Row-wise argmax.
pub fn argmax_rows<T: Element>(logits: &Tensor<T>) -> Vec<usize> {
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (j, v) in row.iter().enumerate() {
                if v.to_f64() > row[best].to_f64() {
                    best = j;
                }
            }
            best
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::TaskRegistry;
    use crate::trainer::config::SuppressionBranch;

    fn cfg() -> ModelConfig {
        let mut c = ModelConfig::new(16, TaskRegistry::preserve_task().0[0].clone());
        c.conv_blocks[0].filters = 4;
        c.conv_blocks[1].filters = 6;
        c.fc_feature_dim = 12;
        c
    }

    #[test]
    fn parameter_count_matches_formula() {
        let c = cfg();
        let m = Model::init(c.clone()).unwrap();
        // conv0: 4*3*9+4, conv1: 6*4*9+6, fc: 6*4*4*12+12, head: 12*5+5
        assert_eq!(m.parameter_count(), 112 + 222 + 1164 + 65);
        assert_eq!(m.parameter_count(), parameter_count(&c));
    }

    #[test]
    fn heads_follow_branches() {
        let mut c = cfg();
        c.suppression = vec![SuppressionBranch::random(3)];
        let m = Model::init(c.clone()).unwrap();
        let x = Tensor::from_fn(&[2, 3, 16, 16], |i| (i % 7) as f32 * 0.1);
        let mut g = Graph::eval();
        let xi = g.input(x);
        let f = forward(&c, &m.params, &mut g, xi).unwrap();
        assert_eq!(f.branch_logits.len(), 1);
        assert_eq!(g.value(f.branch_logits[0]).shape(), &[2, 3]);
        assert_eq!(g.value(f.preserved_logits).shape(), &[2, 5]);
        assert_eq!(g.value(f.features).shape(), &[2, 12]);
    }

    #[test]
    fn hidden_branch_heads_add_a_layer() {
        let mut c = cfg();
        c.suppression = vec![SuppressionBranch::random(3), SuppressionBranch::random(4)];
        c.branch_hidden = 7;
        let m = Model::init(c.clone()).unwrap();
        assert_eq!(m.params.len(), 2 * 2 + 4 + 2 * 4);
        assert_eq!(m.parameter_count(), 112 + 222 + 1164 + 65 + (12 * 7 + 7 + 7 * 3 + 3) + (12 * 7 + 7 + 7 * 4 + 4));
        assert_eq!(m.parameter_count(), parameter_count(&c));
        let x = Tensor::from_fn(&[2, 3, 16, 16], |i| (i % 5) as f32 * 0.2);
        let mut g = Graph::eval();
        let xi = g.input(x);
        let f = forward(&c, &m.params, &mut g, xi).unwrap();
        assert_eq!(g.value(f.branch_logits[1]).shape(), &[2, 4]);
        assert!(f.reversals.iter().all(Option::is_some));
    }

    #[test]
    fn trunk_init_ignores_heads() {
        let plain = Model::init(cfg()).unwrap();
        let mut c = cfg();
        c.suppression = vec![SuppressionBranch::random(3), SuppressionBranch::random(7)];
        let with = Model::init(c).unwrap();
        assert_eq!(plain.params[..], with.params[..plain.params.len()]);
    }
}
