use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;
use treeloss::transport::{wasserstein_lp, wasserstein_tree};
use treeloss::{EdgeWeightScheme, LossConfig, LossKind, Mlp, PixelBatch, SemanticLoss};
use treeloss_bench::{balanced_tree, random_logits, random_prob, random_tree, rng};

fn transport(c: &mut Criterion) {
    let mut group = c.benchmark_group("wasserstein");
    for leaves in [4, 8, 16, 32] {
        let mut r = rng(leaves as u64);
        let tree = random_tree(&mut r, leaves);
        let m = tree.ground_distance().unwrap();
        let (p, q) = (random_prob(&mut r, leaves), random_prob(&mut r, leaves));
        group.bench_with_input(BenchmarkId::new("tree", leaves), &leaves, |b, _| {
            b.iter(|| wasserstein_tree(black_box(&p), black_box(&q), &tree).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("lp", leaves), &leaves, |b, _| {
            b.iter(|| {
                wasserstein_lp(black_box(&p), black_box(&q), &m)
                    .unwrap()
                    .cost
            })
        });
    }
    group.finish();
}

fn losses(c: &mut Criterion) {
    let tree = balanced_tree(4, 3, 2, &EdgeWeightScheme::LeafOnly);
    let classes = tree.num_leaves();
    let pixels = 1024;
    let mut r = rng(7);
    let batch = PixelBatch {
        classes,
        logits: random_logits(&mut r, pixels * classes),
        targets: (0..pixels).map(|_| r.random_range(0..classes)).collect(),
        mask: vec![true; pixels],
    };
    let mut group = c.benchmark_group("batch_loss_1024px");
    let configs = [
        LossConfig::new(LossKind::CrossEntropy, EdgeWeightScheme::LeafOnly),
        LossConfig::new(LossKind::WassersteinCe, EdgeWeightScheme::Hierarchical),
        LossConfig::new(LossKind::TreeCe, EdgeWeightScheme::Hierarchical),
    ];
    for cfg in configs {
        let label = cfg.label();
        let loss = SemanticLoss::new(cfg, &tree).unwrap();
        group.bench_function(label, |b| {
            b.iter(|| loss.batch_loss(black_box(&batch)).unwrap().value)
        });
    }
    group.finish();
}

fn mlp(c: &mut Criterion) {
    let mut r = rng(11);
    let (bands, classes, pixels) = (16, 24, 1024);
    let model = Mlp::new(&[bands, 64, 64, classes], &mut r);
    let inputs: Vec<f64> = (0..pixels * bands)
        .map(|_| r.random_range(0.0..0.2))
        .collect();
    let upstream = random_logits(&mut r, pixels * classes);
    let mut group = c.benchmark_group("mlp_1024px");
    group.bench_function("forward", |b| {
        b.iter(|| model.forward_batch(black_box(&inputs), pixels).unwrap())
    });
    let cache = model.forward_batch(&inputs, pixels).unwrap();
    let mut grad = vec![0.0; model.num_params()];
    group.bench_function("backward", |b| {
        b.iter(|| {
            grad.iter_mut().for_each(|g| *g = 0.0);
            model
                .backward_batch(&cache, black_box(&upstream), &mut grad)
                .unwrap();
        })
    });
    group.finish();
}

criterion_group!(benches, transport, losses, mlp);
criterion_main!(benches);
