//! Sequential vs rayon execution for the two data-parallel hot paths:
//! per-scenario forward/backward over a training batch, and dataset
//! generation.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use drident_core::datagen::{gen_dataset_with, GenSpec};
use drident_core::mlp::fit_normalization;
use drident_core::par::Execution;
use drident_core::scenario::Scenario;
use drident_core::trainer::{loss_gradients, TrainConfig};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn batch_gradients(c: &mut Criterion) {
    let spec = GenSpec { n_train: 64, n_test: 0, seed: 3, ..GenSpec::default() };
    let ds = gen_dataset_with(&spec, Execution::Sequential).unwrap();
    let mut group = c.benchmark_group("loss_gradients_64");
    for (name, exec) in MODES {
        let cfg = TrainConfig { execution: exec, seed: 3, ..TrainConfig::default() };
        let mut net = cfg.init_net(ds.feature_dim().unwrap(), ds.horizon().unwrap());
        let features: Vec<Vec<f64>> = ds.train.iter().map(|s| s.features.clone()).collect();
        net.set_normalization(fit_normalization(&features).unwrap()).unwrap();
        let theta = cfg.initial_params();
        let batch: Vec<&Scenario> = ds.train.iter().collect();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| loss_gradients(black_box(&batch), Some(&net), &theta, &cfg).unwrap())
        });
    }
    group.finish();
}

fn generation(c: &mut Criterion) {
    let spec = GenSpec { seed: 3, ..GenSpec::default() };
    let mut group = c.benchmark_group("gen_dataset_260");
    group.sample_size(20);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| gen_dataset_with(black_box(&spec), exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, batch_gradients, generation);
criterion_main!(benches);
