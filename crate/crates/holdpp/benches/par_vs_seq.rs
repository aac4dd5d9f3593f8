//! Compares the data-parallel batch loss and energy distance against
//! their forced-sequential twins. The two paths share one chunked
//! summation order, so their outputs agree bit for bit and the bench
//! isolates the scheduling cost alone.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use holdpp::data::{self, DatasetName};
use holdpp::dynamics;
use holdpp::score::{self, ScoreNet, TrainConfig};

fn bench_loss(c: &mut Criterion) {
    let spec = dynamics::critical_params(3).unwrap();
    let cfg = TrainConfig::default();
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let net = ScoreNet::new(ScoreNet::default_dims(3, 2), cfg.t_horizon, &mut rng).unwrap();
    let batch = data::make_dataset(DatasetName::EightGaussians, cfg.batch, 3)
        .unwrap()
        .points;

    let mut group = c.benchmark_group("loss");
    group
        .sample_size(20)
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(2));
    group.bench_function("parallel", |b| {
        b.iter(|| {
            let mut draw = ChaCha12Rng::seed_from_u64(7);
            score::loss(black_box(&net), &spec, &batch, &cfg, &mut draw).unwrap()
        })
    });
    group.bench_function("sequential", |b| {
        b.iter(|| {
            let mut draw = ChaCha12Rng::seed_from_u64(7);
            score::loss_sequential(black_box(&net), &spec, &batch, &cfg, &mut draw).unwrap()
        })
    });
    group.finish();
}

fn bench_energy_distance(c: &mut Criterion) {
    let xs = data::make_dataset(DatasetName::TwoMoons, 400, 1).unwrap().points;
    let ys = data::make_dataset(DatasetName::TwoMoons, 400, 2).unwrap().points;

    let mut group = c.benchmark_group("energy_distance");
    group
        .sample_size(20)
        .warm_up_time(Duration::from_millis(500))
        .measurement_time(Duration::from_secs(2));
    group.bench_function("parallel", |b| {
        b.iter(|| data::energy_distance(black_box(&xs), black_box(&ys)))
    });
    group.bench_function("sequential", |b| {
        b.iter(|| data::energy_distance_sequential(black_box(&xs), black_box(&ys)))
    });
    group.finish();
}

criterion_group!(benches, bench_loss, bench_energy_distance);
criterion_main!(benches);
