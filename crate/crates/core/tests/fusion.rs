use cdfuse_core::fusion::{fold_back, FusionKind, FusionSet};
use cdfuse_core::Tensor;
use proptest::prelude::*;

mod common;

fn frames(dims: [usize; 4], seed: u64) -> (Tensor, Tensor) {
    let mut r = common::rng(seed);
    (Tensor::randn(dims, 1.0, &mut r), Tensor::randn(dims, 1.0, &mut r))
}

fn dims_strategy() -> impl Strategy<Value = [usize; 4]> {
    (1usize..3, 1usize..5, 1usize..6, 1usize..6).prop_map(|(n, c, h, w)| [n, c, h, w])
}

const INVERTIBLE: [FusionKind; 4] = [
    FusionKind::Sequential,
    FusionKind::Cross,
    FusionKind::Parallel,
    FusionKind::ChannelCross,
];

proptest! {
    #[test]
    fn invertible_layouts_reconstruct_both_frames_bitwise(dims in dims_strategy(), seed in any::<u64>()) {
        let (f1, f2) = frames(dims, seed);
        for kind in INVERTIBLE {
            let y = kind.apply(&f1, &f2).unwrap();
            let (g1, g2) = common::unfuse(kind, y.data(), dims);
            prop_assert_eq!(&g1, &f1.to_vec());
            prop_assert_eq!(&g2, &f2.to_vec());
        }
    }

    #[test]
    fn fused_shapes_follow_the_layout(dims in dims_strategy(), seed in any::<u64>()) {
        let (f1, f2) = frames(dims, seed);
        let [n, c, h, w] = dims;
        for kind in FusionKind::ALL {
            let y = kind.apply(&f1, &f2).unwrap();
            let want = match kind {
                FusionKind::Sequential | FusionKind::Cross => [n, c, h, 2 * w],
                FusionKind::Parallel | FusionKind::ChannelCross => [n, 2 * c, h, w],
                FusionKind::Difference => [n, c, h, w],
            };
            prop_assert_eq!(y.dims(), &want[..]);
            prop_assert_eq!(y.dims()[1], c * kind.channel_factor());
            prop_assert_eq!(kind.doubles_width(), y.dims()[3] == 2 * w);
        }
    }

    #[test]
    fn difference_is_symmetric_bitwise(dims in dims_strategy(), seed in any::<u64>()) {
        let (f1, f2) = frames(dims, seed);
        let d12 = FusionKind::Difference.apply(&f1, &f2).unwrap();
        let d21 = FusionKind::Difference.apply(&f2, &f1).unwrap();
        prop_assert_eq!(d12.data(), d21.data());
        for ((d, a), b) in d12.data().iter().zip(f1.data()).zip(f2.data()) {
            prop_assert_eq!(*d, (b - a).abs());
        }
    }

    #[test]
    fn fold_back_sums_the_two_frames(dims in dims_strategy(), seed in any::<u64>()) {
        let (f1, f2) = frames(dims, seed);
        let sum: Vec<f64> = f1.data().iter().zip(f2.data()).map(|(a, b)| a + b).collect();
        for kind in [FusionKind::Sequential, FusionKind::Cross] {
            let folded = fold_back(&kind.apply(&f1, &f2).unwrap(), kind).unwrap();
            prop_assert_eq!(folded.data(), &sum[..]);
        }
    }

    #[test]
    fn fusion_set_text_round_trips(flags in any::<[bool; 5]>()) {
        prop_assume!(flags.iter().any(|&f| f));
        let set = FusionSet::from_flags(flags).unwrap();
        prop_assert_eq!(set.to_string().parse::<FusionSet>().unwrap(), set);
        prop_assert_eq!(set.len(), flags.iter().filter(|&&f| f).count());
    }
}

#[test]
fn mismatched_frames_are_rejected_by_every_mechanism() {
    let a = Tensor::zeros([1, 2, 3, 3]);
    let b = Tensor::zeros([1, 2, 3, 4]);
    for kind in FusionKind::ALL {
        assert!(
            matches!(kind.apply(&a, &b), Err(cdfuse_core::Error::Dimension(_))),
            "{kind}"
        );
    }
}

#[test]
fn empty_fusion_set_is_a_config_error() {
    assert!(matches!(
        FusionSet::from_flags([false; 5]),
        Err(cdfuse_core::Error::Config(_))
    ));
}
