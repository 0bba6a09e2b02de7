//! Deterministic inputs shared by the benchmarks.

use cdfuse_core::ssm::{ScanParams, SsmConfig};
use cdfuse_core::{BinaryMask, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Raw selective-scan operands `(u, delta, a, b, c, d)` for `n` sequences of
/// `d` channels, length `l`, state size `s`.
pub fn scan_operands(n: usize, d: usize, l: usize, s: usize) -> [Tensor; 6] {
    let mut r = rng(1);
    [
        Tensor::randn([n, d, l], 1.0, &mut r),
        Tensor::uniform([n, d, l], 0.01, 0.1, &mut r),
        Tensor::uniform([d, s], -4.0, -1.0, &mut r),
        Tensor::randn([n, s, l], 1.0, &mut r),
        Tensor::randn([n, s, l], 1.0, &mut r),
        Tensor::ones([d]),
    ]
}

pub fn scan_directions(channels: usize, d_state: usize) -> Vec<ScanParams> {
    let mut r = rng(2);
    let cfg = SsmConfig {
        d_state,
        ..Default::default()
    };
    (0..4).map(|_| ScanParams::init(channels, &cfg, &mut r)).collect()
}

pub fn images(n: usize, size: usize, seed: u64) -> Tensor {
    Tensor::uniform([n, 3, size, size], 0.0, 1.0, &mut rng(seed))
}

pub fn random_mask(size: usize, p: f64, seed: u64) -> BinaryMask {
    let mut r = rng(seed);
    BinaryMask::from_fn(size, size, |_, _| r.gen_bool(p))
}
