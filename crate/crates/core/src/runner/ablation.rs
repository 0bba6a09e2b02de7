use std::fmt::Write as _;

use super::config::TrainConfig;
use super::eval::evaluate;
use super::trainer::Trainer;
use crate::data::BiTemporalSample;
use crate::error::Result;
use crate::fusion::FusionKind;
use crate::metrics::Metrics;
use crate::module::Module;

/// One row of the component ablation matrix.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AblationVariant {
    pub label: &'static str,
    pub difference: bool,
    pub channel_cross: bool,
    pub dice: bool,
    pub ecr: bool,
}

pub const ABLATION_MATRIX: [AblationVariant; 5] = [
    AblationVariant {
        label: "no-diff",
        difference: false,
        channel_cross: true,
        dice: true,
        ecr: true,
    },
    AblationVariant {
        label: "no-chn",
        difference: true,
        channel_cross: false,
        dice: true,
        ecr: true,
    },
    AblationVariant {
        label: "no-dice",
        difference: true,
        channel_cross: true,
        dice: false,
        ecr: true,
    },
    AblationVariant {
        label: "no-ecr",
        difference: true,
        channel_cross: true,
        dice: true,
        ecr: false,
    },
    AblationVariant {
        label: "full",
        difference: true,
        channel_cross: true,
        dice: true,
        ecr: true,
    },
];

impl AblationVariant {
    /// `base` with this row's components switched off.
    pub fn apply(&self, base: &TrainConfig) -> Result<TrainConfig> {
        let mut cfg = *base;
        if !self.difference {
            cfg.model.decoder.fusions = cfg.model.decoder.fusions.without(FusionKind::Difference)?;
        }
        if !self.channel_cross {
            cfg.model.decoder.fusions = cfg.model.decoder.fusions.without(FusionKind::ChannelCross)?;
        }
        if !self.dice {
            cfg.loss_weights.dice = 0.0;
        }
        cfg.model.decoder.ecr &= self.ecr;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: AblationVariant,
    pub concat_width: usize,
    pub params: usize,
    pub final_loss: f64,
    pub metrics: Metrics,
}

pub const ABLATION_CSV_HEADER: &str =
    "variant,difference,channel_cross,dice,ecr,concat_width,params,final_loss,pre,rec,f1,iou,oa,kc";

/// Parameter count and concat width of `variant` without training it.
pub fn variant_shape(base: &TrainConfig, variant: &AblationVariant) -> Result<(usize, usize)> {
    let cfg = variant.apply(base)?;
    let trainer = Trainer::new(cfg)?;
    Ok((cfg.model.decoder.concat_width(), trainer.model.param_count()))
}

/// Trains and evaluates every row of [`ABLATION_MATRIX`] from the same seed.
pub fn run_ablation(
    base: &TrainConfig,
    train: &[BiTemporalSample],
    val: &[BiTemporalSample],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<Vec<AblationRow>> {
    let mut rows = Vec::with_capacity(ABLATION_MATRIX.len());
    for variant in ABLATION_MATRIX {
        let mut cfg = variant.apply(base)?;
        cfg.eval_every = 0;
        log::info!("ablation row `{}`", variant.label);
        let mut trainer = Trainer::new(cfg)?;
        let report = trainer.run(train, val, None)?;
        let metrics = match report.evals.last() {
            Some(e) => e.metrics.clone(),
            None => evaluate(&trainer.model, val, cfg.batch_size, None)?.metrics,
        };
        let row = AblationRow {
            variant,
            concat_width: cfg.model.decoder.concat_width(),
            params: trainer.model.param_count(),
            final_loss: report.steps.last().map_or(f64::NAN, |s| s.loss),
            metrics,
        };
        on_row(&row);
        rows.push(row);
    }
    Ok(rows)
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from(ABLATION_CSV_HEADER);
    s.push('\n');
    for r in rows {
        let v = &r.variant;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{:.6},{}",
            v.label,
            u8::from(v.difference),
            u8::from(v.channel_cross),
            u8::from(v.dice),
            u8::from(v.ecr),
            r.concat_width,
            r.params,
            r.final_loss,
            r.metrics.csv_row()
        );
    }
    s
}
