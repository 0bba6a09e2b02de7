//! Optimizer, training and evaluation loops, checkpoints and the ablation
//! harness.

mod ablation;
mod checkpoint;
mod config;
mod eval;
mod optim;
mod trainer;

pub use ablation::{
    ablation_csv, run_ablation, variant_shape, AblationRow, AblationVariant, ABLATION_CSV_HEADER, ABLATION_MATRIX,
};
pub use checkpoint::{Checkpoint, OptimizerState, ParamBlob, FORMAT_VERSION, MAGIC};
pub use config::{fusions_without, ConfigMap, TrainConfig};
pub use eval::{evaluate, predict_masks, EvalReport};
pub use optim::{AdamW, AdamWConfig};
pub use trainer::{
    batch_indices, derived_rng, EvalRecord, StepLog, TrainReport, Trainer, BEST_CHECKPOINT, LAST_CHECKPOINT,
};

use std::path::Path;

use crate::data::{generate_range, load_dataset, BiTemporalSample, SynthConfig};
use crate::error::{Error, Result};

/// Training and held-out samples.
#[derive(Clone, Debug, Default)]
pub struct DataSplit {
    pub train: Vec<BiTemporalSample>,
    pub val: Vec<BiTemporalSample>,
}

impl DataSplit {
    /// `n_train` synthetic samples followed by `n_val` further samples of
    /// the same stream.
    pub fn synthetic(cfg: &SynthConfig, n_train: usize, n_val: usize) -> Result<Self> {
        Ok(Self {
            train: generate_range(cfg, 0, n_train)?,
            val: generate_range(cfg, n_train as u64, n_val)?,
        })
    }

    /// `root/train` with `root/val` (or `root/test`) when present; otherwise
    /// `root` itself with every tenth sample held out.
    pub fn load(root: &Path) -> Result<Self> {
        let train_dir = root.join("train");
        if train_dir.is_dir() {
            let val_dir = ["val", "test"]
                .iter()
                .map(|d| root.join(d))
                .find(|d| d.is_dir())
                .ok_or_else(|| Error::Data(format!("{} has train/ but no val/ or test/", root.display())))?;
            return Ok(Self {
                train: nonempty(load_dataset(&train_dir)?.samples, &train_dir)?,
                val: nonempty(load_dataset(&val_dir)?.samples, &val_dir)?,
            });
        }
        let all = nonempty(load_dataset(root)?.samples, root)?;
        if all.len() < 2 {
            log::warn!(
                "only one sample under {}; evaluating on the training sample",
                root.display()
            );
            return Ok(Self {
                train: all.clone(),
                val: all,
            });
        }
        let (val, train): (Vec<_>, Vec<_>) = all.into_iter().enumerate().partition(|(i, _)| i % 10 == 9);
        let mut split = Self {
            train: train.into_iter().map(|(_, s)| s).collect(),
            val: val.into_iter().map(|(_, s)| s).collect(),
        };
        if split.val.is_empty() {
            split.val.push(split.train.pop().expect("at least two samples"));
        }
        Ok(split)
    }
}

fn nonempty(samples: Vec<BiTemporalSample>, dir: &Path) -> Result<Vec<BiTemporalSample>> {
    if samples.is_empty() {
        return Err(Error::Data(format!("no complete samples under {}", dir.display())));
    }
    Ok(samples)
}
