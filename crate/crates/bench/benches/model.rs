use cdfuse_bench::images;
use cdfuse_core::data::SynthConfig;
use cdfuse_core::runner::{DataSplit, TrainConfig, Trainer};
use cdfuse_core::tensor::no_grad;
use cdfuse_core::Preset;
use criterion::{criterion_group, criterion_main, Criterion};

fn forward(c: &mut Criterion) {
    let trainer = Trainer::new(TrainConfig::for_preset(Preset::Tiny)).unwrap();
    let (pre, post) = (images(1, 64, 1), images(1, 64, 2));
    c.bench_function("tiny_forward/1x64x64", |b| {
        let _guard = no_grad();
        b.iter(|| trainer.model.forward(&pre, &post).unwrap())
    });
}

fn train_step(c: &mut Criterion) {
    let data = DataSplit::synthetic(&SynthConfig::default(), 16, 0).unwrap();
    let mut trainer = Trainer::new(TrainConfig::for_preset(Preset::Tiny)).unwrap();
    let mut g = c.benchmark_group("train_step");
    g.sample_size(10);
    g.bench_function("tiny/batch4x64x64", |b| b.iter(|| trainer.step(&data.train).unwrap()));
    g.finish();
}

criterion_group!(benches, forward, train_step);
criterion_main!(benches);
