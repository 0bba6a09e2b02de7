use cdfuse_core::data::SynthConfig;
use cdfuse_core::runner::{
    evaluate, Checkpoint, ConfigMap, DataSplit, TrainConfig, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT,
};
use cdfuse_core::{Error, Module, Tensor};

fn small_config(iterations: usize) -> TrainConfig {
    TrainConfig {
        batch_size: 2,
        iterations,
        eval_every: 0,
        crop: 32,
        seed: 5,
        ..TrainConfig::default()
    }
}

fn data() -> DataSplit {
    DataSplit::synthetic(
        &SynthConfig {
            size: 32,
            seed: 5,
            ..Default::default()
        },
        4,
        2,
    )
    .unwrap()
}

#[test]
fn two_iteration_smoke_run() {
    let d = data();
    let dir = tempfile::tempdir().unwrap();
    let mut t = Trainer::new(small_config(2)).unwrap();
    let report = t.run(&d.train, &d.val, Some(dir.path())).unwrap();
    assert_eq!(report.steps.len(), 2);
    assert!(report.losses().iter().all(|l| l.is_finite()));
    assert_eq!(report.evals.len(), 1);
    assert_eq!(report.evals[0].iteration, 2);
    for name in [BEST_CHECKPOINT, LAST_CHECKPOINT] {
        let ck = Checkpoint::load(&dir.path().join(name)).unwrap();
        assert_eq!(ck.iteration, 2);
        assert_eq!(ck.model().unwrap().param_count(), t.model.param_count());
    }
}

#[test]
fn same_seed_gives_identical_checkpoints() {
    let d = data();
    let bytes = || {
        let mut t = Trainer::new(small_config(3)).unwrap();
        t.run(&d.train, &d.val, None).unwrap();
        t.checkpoint().to_bytes()
    };
    let a = bytes();
    assert_eq!(a, bytes());
    let reloaded = Checkpoint::from_bytes(&a).unwrap();
    assert_eq!(reloaded.to_bytes(), a);
}

#[test]
fn resume_continues_the_same_trajectory() {
    let d = data();
    let mut straight = Trainer::new(small_config(4)).unwrap();
    let full = straight.run(&d.train, &[], None).unwrap().losses();

    let mut first = Trainer::new(small_config(2)).unwrap();
    first.run(&d.train, &[], None).unwrap();
    let bytes = first.checkpoint().to_bytes();
    let mut resumed = Trainer::from_checkpoint(&Checkpoint::from_bytes(&bytes).unwrap()).unwrap();
    resumed.config.iterations = 4;
    let rest = resumed.run(&d.train, &[], None).unwrap().losses();
    assert_eq!(rest.len(), 2);
    for (a, b) in full[2..].iter().zip(&rest) {
        assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
    }
    assert_eq!(resumed.checkpoint().to_bytes(), straight.checkpoint().to_bytes());
}

#[test]
fn augmentation_is_seeded() {
    let d = data();
    let cfg = TrainConfig {
        augment: true,
        ..small_config(1)
    };
    let (_, a) = Trainer::new(cfg).unwrap().next_batch(&d.train).unwrap();
    let (_, b) = Trainer::new(cfg).unwrap().next_batch(&d.train).unwrap();
    assert_eq!(a.pre.data(), b.pre.data());
    assert_eq!(a.labels, b.labels);
}

#[test]
fn overflowing_logits_report_the_batch() {
    let d = data();
    let mut t = Trainer::new(small_config(1)).unwrap();
    t.model.decoder.head.bias = Some(
        Tensor::from_vec(vec![f64::MAX, -f64::MAX], [2])
            .unwrap()
            .into_leaf(true),
    );
    match t.step(&d.train) {
        Err(Error::Numeric(msg)) => {
            assert!(msg.contains("batch indices"), "{msg}");
            assert!(msg.contains("iteration 0"), "{msg}");
        }
        other => panic!("expected a numeric error, got {other:?}"),
    }
}

#[test]
fn silent_head_predicts_no_change() {
    let d = data();
    let mut t = Trainer::new(small_config(1)).unwrap();
    t.model.decoder.head.zero_();
    let report = evaluate(&t.model, &d.val, 2, None).unwrap();
    assert_eq!(report.counts.tp + report.counts.fp, 0);
    assert_eq!(report.metrics.rec, 0.0);
}

#[test]
fn inference_pads_odd_sizes() {
    let d = DataSplit::synthetic(
        &SynthConfig {
            size: 32,
            seed: 1,
            ..Default::default()
        },
        1,
        1,
    )
    .unwrap();
    let t = Trainer::new(small_config(1)).unwrap();
    let odd = d.val[0].crop(0, 0, 27, 30).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let report = evaluate(&t.model, &[odd], 1, Some(dir.path())).unwrap();
    assert_eq!(report.counts.total(), 27 * 30);
    assert!(dir.path().join(format!("{}.ppm", d.val[0].name)).exists());
}

#[test]
fn config_text_layers_and_round_trips() {
    let file = ConfigMap::parse("preset = tiny\nlr = 0.001\n# comment\niters = 10\n").unwrap();
    let mut cli = ConfigMap::new();
    cli.set("lr", "0.0005");
    let cfg = TrainConfig::from_map(&file.merged(&cli)).unwrap();
    assert_eq!(cfg.optim.lr, 0.0005);
    assert_eq!(cfg.iterations, 10);
    assert_eq!(TrainConfig::from_text(&cfg.to_text()).unwrap(), cfg);
    let augmented = TrainConfig { augment: true, ..cfg };
    assert_eq!(TrainConfig::from_text(&augmented.to_text()).unwrap(), augmented);
    assert!(matches!(
        TrainConfig::from_map(&ConfigMap::parse("bogus = 1").unwrap()),
        Err(Error::Config(_))
    ));
    assert!(matches!(
        TrainConfig::from_map(&ConfigMap::parse("lr = -1").unwrap()),
        Err(Error::Config(_))
    ));
}

#[test]
fn corrupt_checkpoints_are_rejected() {
    let bytes = Trainer::new(small_config(1)).unwrap().checkpoint().to_bytes();
    assert!(matches!(
        Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
        Err(Error::Checkpoint(_))
    ));
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::Checkpoint(_))));
    let mut extra = bytes;
    extra.push(0);
    assert!(matches!(Checkpoint::from_bytes(&extra), Err(Error::Checkpoint(_))));
}
