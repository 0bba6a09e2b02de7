use cdfuse_core::data::render_change_map;
use cdfuse_core::metrics::{confusion, ConfusionCounts, Metrics};
use cdfuse_core::BinaryMask;
use proptest::prelude::*;
use rand::Rng;

mod common;

#[test]
fn library_matches_oracle_on_random_pairs() {
    let mut r = common::rng(100);
    for _ in 0..100 {
        let (pp, pt) = (r.gen_range(0.0..1.0), r.gen_range(0.0..1.0));
        let pred = common::random_mask(&mut r, 64, 64, pp);
        let truth = common::random_mask(&mut r, 64, 64, pt);
        let c = confusion(&pred, &truth).unwrap();
        assert_eq!(c, common::brute_counts(&pred, &truth));
        let m = Metrics::from_counts(&c).unwrap();
        assert_eq!(m.values(), common::brute_metrics(&c));
        if c.tp > 0 {
            assert!((m.iou - m.f1 / (2.0 - m.f1)).abs() <= 1e-12);
        }
    }
}

#[test]
fn hand_counts() {
    let c = ConfusionCounts {
        tp: 3,
        fp: 1,
        fn_: 2,
        tn: 4,
    };
    let m = Metrics::from_counts(&c).unwrap();
    assert_eq!(m.pre, 0.75);
    assert_eq!(m.rec, 0.6);
    assert!((m.f1 - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(m.iou, 0.5);
    assert_eq!(m.oa, 0.7);
    // pe = (4*5 + 6*5) / 100 = 0.5
    assert!((m.kc - 0.4).abs() < 1e-15);
    assert!(m.undefined.is_empty());
}

#[test]
fn all_negative_prediction_has_zero_recall() {
    let truth = BinaryMask::from_fn(8, 8, |y, x| (y + x) % 3 == 0);
    let m = Metrics::from_counts(&confusion(&BinaryMask::zeros(8, 8), &truth).unwrap()).unwrap();
    assert_eq!((m.pre, m.rec, m.f1), (0.0, 0.0, 0.0));
    assert!(m.undefined.contains(&"pre") && m.undefined.contains(&"f1"));
}

#[test]
fn empty_counts_are_rejected() {
    assert!(Metrics::from_counts(&ConfusionCounts::default()).is_err());
    assert!(confusion(&BinaryMask::zeros(2, 2), &BinaryMask::zeros(2, 3)).is_err());
}

#[test]
fn change_map_colors_follow_the_confusion() {
    let mut r = common::rng(7);
    let pred = common::random_mask(&mut r, 16, 12, 0.5);
    let truth = common::random_mask(&mut r, 16, 12, 0.5);
    let img = render_change_map(&pred, &truth).unwrap();
    let mut tally = ConfusionCounts::default();
    for y in 0..16 {
        for x in 0..12 {
            match img.pixel(y, x) {
                [255, 255, 255] => tally.tp += 1,
                [255, 0, 0] => tally.fp += 1,
                [0, 255, 0] => tally.fn_ += 1,
                [0, 0, 0] => tally.tn += 1,
                other => panic!("unexpected color {other:?}"),
            }
        }
    }
    assert_eq!(tally, common::brute_counts(&pred, &truth));
}

proptest! {
    #[test]
    fn counts_add_over_disjoint_tiles(seed in any::<u64>(), h in 2usize..20, w in 1usize..20) {
        let mut r = common::rng(seed);
        let pred = common::random_mask(&mut r, h, w, 0.5);
        let truth = common::random_mask(&mut r, h, w, 0.5);
        let cut = h / 2;
        let top = confusion(&pred.crop(0, 0, cut, w).unwrap(), &truth.crop(0, 0, cut, w).unwrap()).unwrap();
        let bottom = confusion(&pred.crop(cut, 0, h - cut, w).unwrap(), &truth.crop(cut, 0, h - cut, w).unwrap()).unwrap();
        prop_assert_eq!(top + bottom, confusion(&pred, &truth).unwrap());
    }

    #[test]
    fn metrics_are_in_range(tp in 0u64..500, fp in 0u64..500, fn_ in 0u64..500, tn in 1u64..500) {
        let m = Metrics::from_counts(&ConfusionCounts { tp, fp, fn_, tn }).unwrap();
        for v in &m.values()[..5] {
            prop_assert!((0.0..=1.0).contains(v));
        }
        prop_assert!(m.kc <= 1.0 + 1e-12);
        prop_assert!(m.iou <= m.f1 + 1e-12);
    }
}
