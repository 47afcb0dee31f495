use criterion::{criterion_group, criterion_main, Criterion};
use overlearn_bench::{desk_config, random_batch};
use overlearn_core::autodiff::{Graph, Targets};
use overlearn_core::dataset::{render_sample, GenConfig, VariationLabel};
use overlearn_core::report::{render_heatmap, HeatmapSpec};
use overlearn_core::rng::{stream, Stream};
use overlearn_core::trainer::{forward, objective, Model, SuppressionBranch};
use overlearn_core::trust::SquareMatrix;
use overlearn_core::TaskRegistry;

fn train_step(c: &mut Criterion) {
    let mut group = c.benchmark_group("train_step");
    group.sample_size(10);
    let x = random_batch(32, 64, 2);
    let y: Vec<usize> = (0..32).map(|i| i % 5).collect();
    for (name, branches) in [("baseline", vec![]), ("random3", vec![SuppressionBranch::random(3)])] {
        let mut cfg = desk_config("shape");
        cfg.suppression = branches;
        let model = Model::init(cfg.clone()).unwrap();
        let branch_targets = |n: usize| -> Vec<Targets<f32>> {
            (0..n).map(|_| Targets::Indices((0..32).map(|i| i % 3).collect())).collect()
        };
        group.bench_function(name, |b| {
            b.iter(|| {
                let mut g = Graph::train(stream(0, Stream::Dropout, 0, 0, 0));
                let xi = g.input(x.clone());
                let fwd = forward(&cfg, &model.params, &mut g, xi).unwrap();
                let l = objective(&mut g, &cfg, &fwd, Targets::Indices(y.clone()), branch_targets(cfg.suppression.len()))
                    .unwrap();
                g.backward(l.objective).unwrap()
            })
        });
    }
    group.finish();
}

fn render(c: &mut Criterion) {
    let label = VariationLabel::all().nth(617).unwrap();
    for side in [64, 256] {
        let cfg = GenConfig {
            image_side: side,
            ..GenConfig::default()
        };
        c.bench_function(&format!("render_sample/{side}px"), |b| {
            b.iter(|| render_sample(&label, &cfg, &mut stream(0, Stream::Render, 617, 0, 0)))
        });
    }
}

fn heatmap(c: &mut Criterion) {
    let labels: Vec<String> = TaskRegistry::preserve_task().names().into_iter().map(String::from).collect();
    let m = SquareMatrix::from_fn(5, |i, j| if i == j { 0.98 } else { 0.3 + 0.1 * ((i + j) % 5) as f64 });
    let spec = HeatmapSpec::default();
    c.bench_function("render_heatmap/5x5", |b| b.iter(|| render_heatmap(&m, &labels, &spec).unwrap()));
}

criterion_group!(benches, train_step, render, heatmap);
criterion_main!(benches);
