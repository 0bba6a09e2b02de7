use cdfuse_bench::{random_mask, rng, scan_directions, scan_operands};
use cdfuse_core::loss::{lovasz_hinge, LovaszReduction};
use cdfuse_core::metrics::confusion;
use cdfuse_core::nn::{conv2d, ConvSpec};
use cdfuse_core::ssm::{cross_scan_2d, selective_scan};
use cdfuse_core::tensor::no_grad;
use cdfuse_core::Tensor;
use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};

fn scan(c: &mut Criterion) {
    let mut g = c.benchmark_group("selective_scan");
    for l in [256, 1024, 4096] {
        let [u, dt, a, b, cc, d] = scan_operands(1, 32, l, 16);
        g.throughput(Throughput::Elements(l as u64));
        g.bench_with_input(BenchmarkId::from_parameter(l), &l, |bch, _| {
            let _guard = no_grad();
            bch.iter(|| selective_scan(&u, &dt, &a, &b, &cc, &d).unwrap())
        });
    }
    g.finish();
}

fn cross_scan(c: &mut Criterion) {
    let params = scan_directions(32, 4);
    let x = Tensor::randn([1, 32, 16, 16], 1.0, &mut rng(3));
    c.bench_function("cross_scan_2d/32x16x16", |b| {
        let _guard = no_grad();
        b.iter(|| cross_scan_2d(&x, &params).unwrap())
    });
}

fn convolutions(c: &mut Criterion) {
    let mut r = rng(4);
    let x = Tensor::randn([4, 64, 16, 16], 1.0, &mut r);
    let pw = Tensor::randn([64, 64, 1, 1], 0.1, &mut r);
    let dw = Tensor::randn([64, 1, 3, 3], 0.1, &mut r);
    let dense = Tensor::randn([64, 64, 3, 3], 0.1, &mut r);
    let same = ConvSpec {
        padding: 1,
        ..Default::default()
    };
    let mut g = c.benchmark_group("conv2d");
    g.bench_function("pointwise", |b| {
        b.iter(|| conv2d(&x, &pw, None, ConvSpec::default()).unwrap())
    });
    g.bench_function("depthwise3x3", |b| {
        b.iter(|| conv2d(&x, &dw, None, ConvSpec { groups: 64, ..same }).unwrap())
    });
    g.bench_function("dense3x3", |b| b.iter(|| conv2d(&x, &dense, None, same).unwrap()));
    g.finish();
}

fn losses_and_metrics(c: &mut Criterion) {
    let scores = Tensor::randn([4, 64, 64], 1.0, &mut rng(5));
    let masks: Vec<_> = (0..4).map(|i| random_mask(64, 0.2, i)).collect();
    let target = cdfuse_core::BinaryMask::stack(&masks).unwrap();
    c.bench_function("lovasz_hinge/4x64x64", |b| {
        b.iter(|| lovasz_hinge(&scores, &target, LovaszReduction::PerImage).unwrap())
    });
    let (p, t) = (random_mask(256, 0.3, 10), random_mask(256, 0.3, 11));
    c.bench_function("confusion/256x256", |b| b.iter(|| confusion(&p, &t).unwrap()));
}

criterion_group!(benches, scan, cross_scan, convolutions, losses_and_metrics);
criterion_main!(benches);
