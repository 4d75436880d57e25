use std::hint::black_box;
use std::time::Duration;

use anytsr::config::{ModelConfig, Preset};
use anytsr::imaging::{make_coord_grid, synth_dataset};
use anytsr::training::{batch_gradients, TrainConfig, Trainer};
use anytsr::AnyTsr;
use criterion::{criterion_group, criterion_main, Criterion};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn inference(c: &mut Criterion) {
    let model = AnyTsr::new(ModelConfig::preset(Preset::Tiny), 1).unwrap();
    let lr = synth_dataset(1, 24, &mut ChaCha8Rng::seed_from_u64(3)).remove(0);
    let mut group = c.benchmark_group("infer_tiny_24");
    group.sample_size(10);
    for s in [2.0, 3.7] {
        group.bench_function(format!("x{s}"), |b| b.iter(|| model.infer(black_box(&lr), s).unwrap()));
    }
    group.finish();
}

fn points(c: &mut Criterion) {
    let model = AnyTsr::new(ModelConfig::preset(Preset::Tiny), 1).unwrap();
    let lr = synth_dataset(1, 16, &mut ChaCha8Rng::seed_from_u64(4)).remove(0);
    let grid = make_coord_grid(32, 32);
    let mut group = c.benchmark_group("infer_points");
    group.sample_size(10);
    group.bench_function("16_to_1024", |b| {
        b.iter(|| model.infer_points(&lr, 2.0, black_box(&grid.coords)).unwrap())
    });
    group.finish();
}

fn training(c: &mut Criterion) {
    let images = synth_dataset(2, 96, &mut ChaCha8Rng::seed_from_u64(5));
    let model = AnyTsr::new(ModelConfig::preset(Preset::Tiny), 1).unwrap();
    let cfg = TrainConfig {
        lr_size: 24,
        batch: 2,
        ..Default::default()
    };
    let trainer = Trainer::new(model, cfg, images).unwrap();
    let (_, batch) = trainer.batch_for(0).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.bench_function("gradients_batch2_lr24", |b| {
        b.iter(|| batch_gradients(&trainer.model, black_box(&batch)).unwrap())
    });
    group.finish();
}

// Batch 16 at lr_size 48: gradients plus the Adam update.
fn full_step(c: &mut Criterion) {
    let images = synth_dataset(4, 192, &mut ChaCha8Rng::seed_from_u64(6));
    let model = AnyTsr::new(ModelConfig::preset(Preset::Tiny), 1).unwrap();
    let cfg = TrainConfig {
        lr_size: 48,
        batch: 16,
        ..Default::default()
    };
    let mut trainer = Trainer::new(model, cfg, images).unwrap();
    let mut group = c.benchmark_group("train");
    group.sample_size(10);
    group.measurement_time(Duration::from_secs(1));
    group.bench_function("step_batch16_lr48", |b| b.iter(|| trainer.train_step().unwrap()));
    group.finish();
}

criterion_group!(benches, inference, points, training, full_step);
criterion_main!(benches);
