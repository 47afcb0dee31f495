//! Central finite-difference checks of every autodiff operator and of the
//! composite training loss, in f64 on small random tensors.

use overlearn_core::autodiff::{Graph, NodeId, Padding, Targets, Tensor};
use overlearn_core::rng::{stream, Stream};
use overlearn_core::trainer::{combined_loss, suppression_cap, forward, objective, Model, ModelConfig, SuppressionBranch, SuppressionMode};
use overlearn_core::{Result, TaskRegistry};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 20;
const EPS: f64 = 1e-5;
const REL_TOL: f64 = 1e-3;
const ABS_FLOOR: f64 = 1e-8;

fn rng(seed: u64, tag: u64) -> ChaCha8Rng {
    stream(seed, Stream::Init, 1000 + tag, 0, 0)
}

fn random(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// Values bounded away from zero, so ReLU kinks sit far from `x ± EPS`.
fn away_from_zero(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = r.gen_range(0.05..1.0);
        if r.gen_bool(0.5) {
            m
        } else {
            -m
        }
    })
}

/// Distinct values spaced 0.01 apart in random order, so pooling windows
/// have no near ties.
fn distinct(shape: &[usize], r: &mut ChaCha8Rng) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut v: Vec<f64> = (0..n).map(|i| i as f64 * 0.01 - n as f64 * 0.005).collect();
    v.shuffle(r);
    Tensor::new(shape, v).unwrap()
}

/// Builds a scalar from `inputs` (all registered as parameters) and returns
/// its value and node ids.
type Build<'a> = dyn Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId> + 'a;

fn eval(inputs: &[Tensor<f64>], build: &Build, mode_seed: Option<u64>) -> (f64, Vec<Tensor<f64>>) {
    let mut g = match mode_seed {
        Some(s) => Graph::train(stream(s, Stream::Dropout, 0, 0, 0)),
        None => Graph::eval(),
    };
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.param(t.clone())).collect();
    let out = build(&mut g, &ids).unwrap();
    let value = g.value(out).item();
    let grads = g.backward(out).unwrap();
    (value, ids.iter().map(|&id| grads.get(id)).collect())
}

fn close(analytic: f64, numeric: f64) -> bool {
    (analytic - numeric).abs() <= REL_TOL * analytic.abs().max(numeric.abs()) + ABS_FLOOR
}

/// Compares analytic gradients with central differences for every
/// coordinate of every input. `mode_seed` fixes dropout masks.
fn check(name: &str, inputs: Vec<Tensor<f64>>, build: &Build, mode_seed: Option<u64>) {
    let (_, grads) = eval(&inputs, build, mode_seed);
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += EPS;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= EPS;
            let numeric = (eval(&plus, build, mode_seed).0 - eval(&minus, build, mode_seed).0) / (2.0 * EPS);
            let analytic = grads[k].data()[i];
            assert!(
                close(analytic, numeric),
                "{name}: input {k} coord {i}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }
}

/// Reduces a node to the scalar `1ᵀ · X · w` for a fixed random column `w`.
fn weighted_sum(g: &mut Graph<f64>, x: NodeId, seed: u64) -> NodeId {
    let shape = g.value(x).shape().to_vec();
    let flat = if shape.len() == 2 { x } else { g.flatten(x).unwrap() };
    let fs = g.value(flat).shape().to_vec();
    let mut r = rng(seed, 77);
    let w = g.input(random(&[fs[1], 1], &mut r));
    let col = g.matmul(flat, w).unwrap();
    let ones = g.input(Tensor::from_fn(&[1, fs[0]], |_| 1.0));
    g.matmul(ones, col).unwrap()
}

pub fn matmul_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed, 1);
        let inputs = vec![random(&[3, 4], &mut r), random(&[4, 5], &mut r)];
        check("matmul", inputs, &|g, ids| {
            let y = g.matmul(ids[0], ids[1])?;
            Ok(weighted_sum(g, y, seed))
        }, None);
    }
}

pub fn add_bias_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed, 2);
        let inputs = vec![random(&[3, 4], &mut r), random(&[4], &mut r)];
        check("add_bias", inputs, &|g, ids| {
            let y = g.add_bias(ids[0], ids[1])?;
            Ok(weighted_sum(g, y, seed))
        }, None);
    }
}

pub fn conv2d_gradients() {
    for seed in 0..SEEDS {
        for padding in [Padding::Same, Padding::Valid] {
            let mut r = rng(seed, 3);
            let k = if seed % 2 == 0 { 3 } else { 1 };
            let inputs = vec![
                random(&[2, 2, 5, 4], &mut r),
                random(&[3, 2, k, k], &mut r),
                random(&[3], &mut r),
            ];
            check("conv2d", inputs, &|g, ids| {
                let y = g.conv2d(ids[0], ids[1], ids[2], padding)?;
                Ok(weighted_sum(g, y, seed))
            }, None);
        }
    }
}

pub fn max_pool_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed, 4);
        let inputs = vec![distinct(&[2, 2, 4, 5], &mut r)];
        check("max_pool2", inputs, &|g, ids| {
            let y = g.max_pool2(ids[0])?;
            Ok(weighted_sum(g, y, seed))
        }, None);
    }
}

pub fn relu_and_flatten_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed, 5);
        let inputs = vec![away_from_zero(&[2, 3, 2, 2], &mut r)];
        check("relu", inputs, &|g, ids| {
            let y = g.relu(ids[0]);
            let y = g.flatten(y)?;
            Ok(weighted_sum(g, y, seed))
        }, None);
    }
}

pub fn dropout_gradients_with_fixed_mask() {
    for seed in 0..SEEDS {
        let mut r = rng(seed, 6);
        let inputs = vec![random(&[4, 6], &mut r)];
        check("dropout", inputs, &|g, ids| {
            let y = g.dropout(ids[0], 0.4)?;
            Ok(weighted_sum(g, y, seed))
        }, Some(seed));
    }
}

pub fn softmax_cross_entropy_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed, 7);
        let targets: Vec<usize> = (0..4).map(|_| r.gen_range(0..5)).collect();
        let mut dense = random(&[4, 5], &mut r);
        for row in dense.data_mut().chunks_mut(5) {
            let s: f64 = row.iter().map(|v| v.abs()).sum();
            for v in row {
                *v = v.abs() / s;
            }
        }
        let inputs = vec![random(&[4, 5], &mut r)];
        let t = targets.clone();
        check("softmax_ce_indices", inputs.clone(), &move |g, ids| {
            g.softmax_cross_entropy(ids[0], Targets::Indices(t.clone()))
        }, None);
        check("softmax_ce_dense", inputs, &move |g, ids| {
            g.softmax_cross_entropy(ids[0], Targets::Dense(dense.clone()))
        }, None);
    }
}

pub fn scale_and_add_gradients() {
    for seed in 0..SEEDS {
        let mut r = rng(seed, 8);
        let s = r.gen_range(-2.0..2.0);
        let inputs = vec![random(&[3, 3], &mut r), random(&[3, 3], &mut r)];
        check("scale_add", inputs, &move |g, ids| {
            let a = g.scale(ids[0], s);
            let y = g.add(a, ids[1])?;
            Ok(weighted_sum(g, y, seed))
        }, None);
    }
}

pub fn grad_reverse_is_identity_forward_and_negated_backward() {
    for seed in 0..SEEDS {
        let mut r = rng(seed, 9);
        let alpha = r.gen_range(0.0..2.0f64);
        let x = random(&[3, 4], &mut r);
        // Reference: the same graph without the reversal node.
        let (_, plain) = eval(&[x.clone()], &|g, ids| Ok(weighted_sum(g, ids[0], seed)), None);
        let mut g = Graph::eval();
        let xi = g.param(x.clone());
        let y = g.grad_reverse(xi, alpha);
        assert_eq!(g.value(y), &x, "forward must be a bit-exact copy");
        let out = weighted_sum(&mut g, y, seed);
        let grads = g.backward(out).unwrap();
        let got = grads.get(xi);
        for (a, b) in got.data().iter().zip(plain[0].data()) {
            assert_eq!(a.to_bits(), (-alpha * b).to_bits());
        }
    }
}

fn tiny_config(mode: SuppressionMode, lambda: f64, seed: u64) -> ModelConfig {
    let reg = TaskRegistry::preserve_task();
    let mut c = ModelConfig::new(8, reg.0[0].clone());
    c.conv_blocks[0].filters = 2;
    c.conv_blocks[1].filters = 3;
    c.fc_feature_dim = 6;
    c.lambda = lambda;
    c.seed = seed;
    c.suppression = vec![match mode {
        SuppressionMode::RandomGr => SuppressionBranch::random(3),
        m => SuppressionBranch::known(&reg.0[4], m),
    }];
    c
}

/// Trunk gradient of the training objective, scaled by λ, against central
/// differences of `λ·L_p − (1−λ)·L_s` evaluated through the whole model.
pub fn composite_loss_gradients_through_the_model() {
    for seed in 0..SEEDS {
        let mut r = rng(seed, 10);
        let lambda = r.gen_range(0.2..0.9);
        let mode = [SuppressionMode::KnownGr, SuppressionMode::KnownNegativeLoss, SuppressionMode::RandomGr]
            [seed as usize % 3];
        let cfg = tiny_config(mode, lambda, seed);
        let model = Model::init(cfg.clone()).unwrap();
        let params: Vec<Tensor<f64>> = model.params.iter().map(|p| p.cast()).collect();
        let x = random(&[3, 3, 8, 8], &mut r);
        let yp: Vec<usize> = (0..3).map(|_| r.gen_range(0..5)).collect();
        let ys: Vec<usize> = (0..3).map(|_| r.gen_range(0..3)).collect();
        let trunk = 6;

        let run = |params: &[Tensor<f64>]| {
            let mut g = Graph::eval();
            let xi = g.input(x.clone());
            let fwd = forward(&cfg, params, &mut g, xi).unwrap();
            let losses = objective(
                &mut g,
                &cfg,
                &fwd,
                Targets::Indices(yp.clone()),
                vec![Targets::Indices(ys.clone())],
            )
            .unwrap();
            let grads = g.backward(losses.objective).unwrap();
            let combined = combined_loss(losses.preserved_value, &[g.value(losses.branches[0]).item()], lambda);
            assert!((combined - losses.combined).abs() < 1e-12);
            (combined, fwd.params.iter().map(|&id| grads.get(id)).collect::<Vec<_>>())
        };
        let (_, grads) = run(&params);
        for k in 0..trunk {
            for i in (0..params[k].len()).step_by(3) {
                let mut plus = params.clone();
                plus[k].data_mut()[i] += EPS;
                let mut minus = params.clone();
                minus[k].data_mut()[i] -= EPS;
                let numeric = (run(&plus).0 - run(&minus).0) / (2.0 * EPS);
                let analytic = lambda * grads[k].data()[i];
                assert!(
                    close(analytic, numeric),
                    "{mode:?} seed {seed}: tensor {k} coord {i}: {analytic} vs {numeric}"
                );
            }
        }
    }
}

/// Known-label reversal and the explicit negative loss produce the same
/// trunk gradient for the same parameters and batch.
pub fn reversal_and_negative_loss_agree_on_the_trunk() {
    for seed in 0..SEEDS {
        let mut r = rng(seed, 11);
        let lambda = r.gen_range(0.2..0.9);
        let gr = tiny_config(SuppressionMode::KnownGr, lambda, seed);
        let neg = tiny_config(SuppressionMode::KnownNegativeLoss, lambda, seed);
        let params = Model::init(gr.clone()).unwrap().params;
        let x: Tensor<f32> = Tensor::from_fn(&[4, 3, 8, 8], |_| r.gen_range(-0.25..0.25));
        let yp: Vec<usize> = (0..4).map(|_| r.gen_range(0..5)).collect();
        let ys: Vec<usize> = (0..4).map(|_| r.gen_range(0..3)).collect();
        let trunk_grads = |cfg: &ModelConfig| {
            let mut g = Graph::<f32>::eval();
            let xi = g.input(x.clone());
            let fwd = forward(cfg, &params, &mut g, xi).unwrap();
            let l = objective(&mut g, cfg, &fwd, Targets::Indices(yp.clone()), vec![Targets::Indices(ys.clone())])
                .unwrap();
            assert!(l.branch_values[0] < suppression_cap(3), "seed {seed}: cap reached");
            let grads = g.backward(l.objective).unwrap();
            (0..6).map(|k| grads.get(fwd.params[k])).collect::<Vec<_>>()
        };
        let (a, b) = (trunk_grads(&gr), trunk_grads(&neg));
        for (ta, tb) in a.iter().zip(&b) {
            let norm: f64 = ta.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
            let diff: f64 = ta
                .data()
                .iter()
                .zip(tb.data())
                .map(|(x, y)| (*x as f64 - *y as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(diff <= 1e-5 * norm.max(1e-12), "seed {seed}: diff {diff} norm {norm}");
        }
    }
}
