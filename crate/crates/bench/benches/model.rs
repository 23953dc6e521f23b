use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

use lorentzkit::model::{fit, predict, training_loss, HeegnetModel, ModelConfig, TrainConfig};
use lorentzkit_bench::epochs;

fn model(c: &mut Criterion) {
    let ds = epochs(4);
    let cfg = ModelConfig::default();
    let batch: Vec<usize> = (0..40).collect();

    let mut g = c.benchmark_group("heegnet");
    g.sample_size(10);
    g.bench_function("loss_forward_batch40", |b| {
        let mut m = HeegnetModel::new(cfg.clone()).unwrap();
        b.iter(|| training_loss(&mut m, black_box(&ds), &batch, 0).unwrap())
    });
    let m = HeegnetModel::new(cfg.clone()).unwrap();
    let all: Vec<usize> = (0..ds.len()).collect();
    g.bench_function("predict_96", |b| b.iter(|| predict(black_box(&m), &ds, &all).unwrap()));
    // one epoch over five domains: forward, backward and Adam, plus validation
    let train = TrainConfig { epochs: 1, ..TrainConfig::default() };
    g.bench_function("fit_one_epoch", |b| b.iter(|| fit(&cfg, &train, black_box(&ds), &[0, 1, 2, 3, 4]).unwrap()));
    g.finish();
}

criterion_group!(benches, model);
criterion_main!(benches);
