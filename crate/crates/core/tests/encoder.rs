use cdfuse_core::encoder::{Encoder, MAX_STRIDE};
use cdfuse_core::model::{ModelConfig, Preset};
use cdfuse_core::{Error, GradStore, Tensor};

mod common;

fn tiny_encoder(seed: u64) -> Encoder {
    Encoder::init(&ModelConfig::preset(Preset::Tiny).encoder, &mut common::rng(seed)).unwrap()
}

#[test]
fn pyramid_strides_and_widths() {
    let enc = tiny_encoder(0);
    let x = Tensor::uniform([2, 3, 64, 32], 0.0, 1.0, &mut common::rng(1));
    let p = enc.encode(&x).unwrap();
    let channels = ModelConfig::preset(Preset::Tiny).encoder.channels;
    for (i, level) in p.levels.iter().enumerate() {
        let stride = 4 << i;
        assert_eq!(level.dims(), &[2, channels[i], 64 / stride, 32 / stride]);
    }
    assert_eq!(4 << 3, MAX_STRIDE);
}

#[test]
fn pair_encoding_equals_separate_encodes() {
    let enc = tiny_encoder(2);
    let mut r = common::rng(3);
    let x1 = Tensor::uniform([1, 3, 32, 32], 0.0, 1.0, &mut r);
    let x2 = Tensor::uniform([1, 3, 32, 32], 0.0, 1.0, &mut r);
    let (p1, p2) = enc.encode_pair(&x1, &x2).unwrap();
    for (a, b) in p1.levels.iter().zip(&enc.encode(&x1).unwrap().levels) {
        assert_eq!(a.data(), b.data());
    }
    for (a, b) in p2.levels.iter().zip(&enc.encode(&x2).unwrap().levels) {
        assert_eq!(a.data(), b.data());
    }
}

#[test]
fn shared_weight_gradient_is_the_sum_of_both_frames() {
    let enc = tiny_encoder(4);
    let mut r = common::rng(5);
    let x1 = Tensor::uniform([1, 3, 32, 32], 0.0, 1.0, &mut r);
    let x2 = Tensor::uniform([1, 3, 32, 32], 0.0, 1.0, &mut r);
    let deepest = |x: &Tensor| enc.encode(x).unwrap().levels[3].clone();
    let probe = Tensor::randn(deepest(&x1).dims().to_vec(), 1.0, &mut r);
    let grads = |loss: Tensor| -> GradStore { loss.backward().unwrap() };
    let w = &enc.stem.weight;
    let g1 = grads(deepest(&x1).mul(&probe).unwrap().sum_all().unwrap());
    let g2 = grads(deepest(&x2).mul(&probe).unwrap().sum_all().unwrap());
    let (q1, q2) = enc.encode_pair(&x1, &x2).unwrap();
    let both = q1.levels[3]
        .mul(&probe)
        .unwrap()
        .add(&q2.levels[3].mul(&probe).unwrap())
        .unwrap();
    let g = grads(both.sum_all().unwrap());
    let (a, b, s) = (g1.get(w).unwrap(), g2.get(w).unwrap(), g.get(w).unwrap());
    for ((a, b), s) in a.iter().zip(b).zip(s) {
        assert!((a + b - s).abs() <= 1e-10 * (1.0 + s.abs()), "{a} + {b} vs {s}");
    }
}

#[test]
fn bad_inputs_are_dimension_errors() {
    let enc = tiny_encoder(6);
    assert!(matches!(
        enc.encode(&Tensor::zeros([1, 3, 48, 32])),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        enc.encode(&Tensor::zeros([1, 1, 32, 32])),
        Err(Error::Dimension(_))
    ));
    assert!(matches!(
        enc.encode_pair(&Tensor::zeros([1, 3, 32, 32]), &Tensor::zeros([1, 3, 64, 32])),
        Err(Error::Dimension(_))
    ));
}
