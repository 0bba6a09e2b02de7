use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::eval::evaluate;
use super::optim::AdamW;
use crate::data::{flip_sample, random_crop, Batch, BiTemporalSample};
use crate::error::{Error, Result};
use crate::loss::total_loss;
use crate::metrics::Metrics;
use crate::model::ChangeDetector;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_CROP: u64 = 3;
const STREAM_AUGMENT: u64 = 4;

/// Generator for one purpose/index pair, derived from the master seed.
pub fn derived_rng(seed: u64, purpose: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ purpose.wrapping_mul(0x9E37_79B9_7F4A_7C15));
    rng.set_stream(index);
    rng
}

/// Training-set indices drawn at `iteration`: consecutive slices of a
/// per-epoch permutation, wrapping into the next epoch.
pub fn batch_indices(seed: u64, n: usize, batch: usize, iteration: u64) -> Vec<usize> {
    let start = iteration * batch as u64;
    let mut epoch = u64::MAX;
    let mut perm: Vec<usize> = Vec::new();
    (0..batch as u64)
        .map(|k| {
            let pos = start + k;
            let e = pos / n as u64;
            if e != epoch {
                epoch = e;
                perm = (0..n).collect();
                perm.shuffle(&mut derived_rng(seed, STREAM_SHUFFLE, e));
            }
            perm[(pos % n as u64) as usize]
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub iteration: u64,
    pub loss: f64,
    pub ce: f64,
    pub lovasz: f64,
    pub dice: f64,
}

#[derive(Clone, Debug)]
pub struct EvalRecord {
    /// Number of completed iterations at evaluation time.
    pub iteration: u64,
    pub metrics: Metrics,
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    pub evals: Vec<EvalRecord>,
    pub best_f1: Option<f64>,
    pub best_iteration: Option<u64>,
    /// State after the last iteration.
    pub last: Checkpoint,
}

impl TrainReport {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }
}

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// Owns the model and optimizer for one seeded run.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub model: ChangeDetector,
    pub optimizer: AdamW,
    /// Completed iterations.
    pub iteration: u64,
    pub best_f1: Option<f64>,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let model = ChangeDetector::init(config.model, &mut derived_rng(config.seed, STREAM_INIT, 0))?;
        let optimizer = AdamW::new(config.optim, &model);
        Ok(Self {
            config,
            model,
            optimizer,
            iteration: 0,
            best_f1: None,
        })
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let model = ck.model()?;
        let optimizer = ck.optimizer(&model)?;
        Ok(Self {
            config: ck.config,
            model,
            optimizer,
            iteration: ck.iteration,
            best_f1: ck.best_f1,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.config,
            &self.model,
            Some(&self.optimizer),
            self.iteration,
            self.best_f1,
        )
    }

    /// Crops for the next iteration, as fed to the network.
    pub fn next_batch(&self, train: &[BiTemporalSample]) -> Result<(Vec<usize>, Batch)> {
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let idx = batch_indices(self.config.seed, train.len(), self.config.batch_size, self.iteration);
        let mut rng = derived_rng(self.config.seed, STREAM_CROP, self.iteration);
        let mut crops = idx
            .iter()
            .map(|&i| random_crop(&train[i], self.config.crop, &mut rng))
            .collect::<Result<Vec<_>>>()?;
        if self.config.augment {
            let mut rng = derived_rng(self.config.seed, STREAM_AUGMENT, self.iteration);
            for c in &mut crops {
                let (h, v) = (rng.gen_bool(0.5), rng.gen_bool(0.5));
                *c = flip_sample(c, h, v)?;
            }
        }
        let refs: Vec<&BiTemporalSample> = crops.iter().collect();
        Ok((idx, Batch::new(&refs)?))
    }

    /// One forward/backward/update. A non-finite loss aborts with the
    /// offending batch identified.
    pub fn step(&mut self, train: &[BiTemporalSample]) -> Result<StepLog> {
        let (idx, batch) = self.next_batch(train)?;
        let it = self.iteration;
        let describe = || {
            let names: Vec<&str> = idx.iter().map(|&i| train[i].name.as_str()).collect();
            format!("iteration {it}, batch indices {idx:?} ({})", names.join(", "))
        };
        let numeric = |e: Error| match e {
            Error::Numeric(m) => Error::Numeric(format!("{m} at {}", describe())),
            other => other,
        };
        let logits = self.model.forward(&batch.pre, &batch.post).map_err(numeric)?;
        let loss =
            total_loss(&logits, &batch.target, &self.config.loss_weights, self.config.lovasz).map_err(numeric)?;
        let value = loss.total.item()?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!("loss is {value} at {}", describe())));
        }
        let grads = loss.total.backward().map_err(numeric)?;
        self.optimizer.step(&mut self.model, &grads)?;
        self.iteration += 1;
        Ok(StepLog {
            iteration: it,
            loss: value,
            ce: loss.ce,
            lovasz: loss.lovasz,
            dice: loss.dice,
        })
    }

    /// Trains until `config.iterations` are complete, evaluating on `val`
    /// every `eval_every` iterations and at the end. With `out`, writes
    /// `best.ckpt` whenever held-out F1 improves and `last.ckpt` at the end.
    pub fn run(
        &mut self,
        train: &[BiTemporalSample],
        val: &[BiTemporalSample],
        out: Option<&Path>,
    ) -> Result<TrainReport> {
        if train.is_empty() {
            return Err(Error::Data("training set is empty".into()));
        }
        let total = self.config.iterations as u64;
        let mut steps = Vec::new();
        let mut evals = Vec::new();
        let mut best_iteration = None;
        let log_every = (total / 20).max(1);
        while self.iteration < total {
            let s = self.step(train)?;
            if s.iteration % log_every == 0 || self.iteration == total {
                log::info!(
                    "iter {:>5}/{total}  loss {:.4} (ce {:.4}, lovasz {:.4}, dice {:.4})",
                    self.iteration,
                    s.loss,
                    s.ce,
                    s.lovasz,
                    s.dice
                );
            }
            steps.push(s);
            let due = self.config.eval_every > 0 && self.iteration.is_multiple_of(self.config.eval_every as u64);
            if val.is_empty() || !(due || self.iteration == total) {
                continue;
            }
            let report = evaluate(&self.model, val, self.config.batch_size, None)?;
            let f1 = report.metrics.f1;
            log::info!("eval @ {}: {}", self.iteration, report.metrics.csv_row());
            evals.push(EvalRecord {
                iteration: self.iteration,
                metrics: report.metrics,
            });
            if self.best_f1.is_none_or(|b| f1 > b) {
                self.best_f1 = Some(f1);
                best_iteration = Some(self.iteration);
                if let Some(dir) = out {
                    self.checkpoint().save(&dir.join(BEST_CHECKPOINT))?;
                }
            }
        }
        let last = self.checkpoint();
        if let Some(dir) = out {
            last.save(&dir.join(LAST_CHECKPOINT))?;
        }
        Ok(TrainReport {
            steps,
            evals,
            best_f1: self.best_f1,
            best_iteration,
            last,
        })
    }
}
