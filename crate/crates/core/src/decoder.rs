//! Multi-stage change decoder over two feature pyramids.

use rand::Rng;

use crate::encoder::FeaturePyramid;
use crate::error::{Error, Result};
use crate::fusion::{fold_back, FusionKind, FusionSet};
use crate::mask::BinaryMask;
use crate::module::{join, Module, ParamFn};
use crate::nn::{upsample_bilinear, upsample_nearest, CbamParams, Conv2dParams, DsConv};
use crate::ssm::{SsmConfig, VssBlock};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderConfig {
    /// Channel width of every branch and of the merged stage output.
    pub width: usize,
    pub fusions: FusionSet,
    /// Depthwise-separable branch projection plus attention refinement;
    /// when off, branches use a plain pointwise projection and no attention.
    pub ecr: bool,
    pub cbam_reduction: usize,
    pub cbam_kernel: usize,
    pub ssm: SsmConfig,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        Self {
            width: 128,
            fusions: FusionSet::all(),
            ecr: true,
            cbam_reduction: 16,
            cbam_kernel: 7,
            ssm: SsmConfig::default(),
        }
    }
}

impl DecoderConfig {
    pub fn concat_width(&self) -> usize {
        self.width * self.fusions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 {
            return Err(Error::Config("decoder width must be positive".into()));
        }
        if self.ecr && (self.cbam_reduction == 0 || !self.concat_width().is_multiple_of(self.cbam_reduction)) {
            return Err(Error::Config(format!(
                "attention reduction {} must divide concat width {}",
                self.cbam_reduction,
                self.concat_width()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub enum BranchProjection {
    Separable(DsConv),
    Pointwise(Conv2dParams),
}

impl BranchProjection {
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match self {
            BranchProjection::Separable(p) => p.forward(x),
            BranchProjection::Pointwise(p) => p.forward(x),
        }
    }
}

impl Module for BranchProjection {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        match self {
            BranchProjection::Separable(p) => p.visit_params(prefix, f),
            BranchProjection::Pointwise(p) => p.visit_params(prefix, f),
        }
    }
}

#[derive(Clone, Debug)]
pub struct FusionBranch {
    pub kind: FusionKind,
    pub proj: BranchProjection,
    pub vss: VssBlock,
}

impl FusionBranch {
    pub fn forward(&self, f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
        let fused = self.kind.apply(f1, f2)?;
        let y = self.vss.forward(&self.proj.forward(&fused)?)?;
        if self.kind.doubles_width() {
            fold_back(&y, self.kind)
        } else {
            Ok(y)
        }
    }
}

impl Module for FusionBranch {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        self.proj.visit_params(&join(prefix, "proj"), f);
        self.vss.visit_params(&join(prefix, "vss"), f);
    }
}

/// One decoder stage: every enabled fusion branch, concatenation,
/// optional attention, and a pointwise reduction back to the decoder width.
#[derive(Clone, Debug)]
pub struct StssStage {
    pub branches: Vec<FusionBranch>,
    pub cbam: Option<CbamParams>,
    pub reduce: Conv2dParams,
}

impl StssStage {
    pub fn init<R: Rng + ?Sized>(in_channels: usize, cfg: &DecoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let mut branches = Vec::with_capacity(cfg.fusions.len());
        for kind in cfg.fusions.iter() {
            let cin = in_channels * kind.channel_factor();
            let proj = if cfg.ecr {
                BranchProjection::Separable(DsConv::init(cin, cfg.width, rng)?)
            } else {
                BranchProjection::Pointwise(Conv2dParams::pointwise(cin, cfg.width, true, rng)?)
            };
            let vss = VssBlock::init(cfg.width, &cfg.ssm, rng)?;
            branches.push(FusionBranch { kind, proj, vss });
        }
        let concat = cfg.concat_width();
        let cbam = if cfg.ecr {
            Some(CbamParams::init(concat, cfg.cbam_reduction, cfg.cbam_kernel, rng)?)
        } else {
            None
        };
        let reduce = Conv2dParams::pointwise(concat, cfg.width, true, rng)?;
        Ok(Self { branches, cbam, reduce })
    }

    pub fn width(&self) -> usize {
        self.reduce.out_channels()
    }

    pub fn branch_outputs(&self, f1: &Tensor, f2: &Tensor) -> Result<Vec<Tensor>> {
        let outs = self
            .branches
            .iter()
            .map(|b| b.forward(f1, f2))
            .collect::<Result<Vec<_>>>()?;
        let want = outs[0].dims().to_vec();
        if let Some(bad) = outs.iter().find(|o| o.dims() != want.as_slice()) {
            return Err(Error::Contract(format!(
                "branch outputs disagree in shape: {} vs {}",
                bad.shape(),
                outs[0].shape()
            )));
        }
        Ok(outs)
    }

    pub fn forward(&self, f1: &Tensor, f2: &Tensor) -> Result<Tensor> {
        let outs = self.branch_outputs(f1, f2)?;
        let refs: Vec<&Tensor> = outs.iter().collect();
        let mut p = Tensor::concat(&refs, 1)?;
        if let Some(cbam) = &self.cbam {
            p = cbam.forward(&p)?;
        }
        self.reduce.forward(&p)
    }
}

impl Module for StssStage {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        for b in &mut self.branches {
            b.visit_params(&join(prefix, b.kind.name()), f);
        }
        if let Some(c) = self.cbam.as_mut() {
            c.visit_params(&join(prefix, "cbam"), f);
        }
        self.reduce.visit_params(&join(prefix, "reduce"), f);
    }
}

#[derive(Clone, Debug)]
pub struct Decoder {
    pub stages: Vec<StssStage>,
    pub head: Conv2dParams,
}

impl Decoder {
    pub fn init<R: Rng + ?Sized>(encoder_channels: [usize; 4], cfg: &DecoderConfig, rng: &mut R) -> Result<Self> {
        let stages = encoder_channels
            .iter()
            .map(|&c| StssStage::init(c, cfg, rng))
            .collect::<Result<_>>()?;
        Ok(Self {
            stages,
            head: Conv2dParams::pointwise(cfg.width, 2, true, rng)?,
        })
    }

    /// Deepest stage first; each shallower stage adds the 2x-upsampled
    /// deeper output, then a 2-class head upsampled x4 to image size.
    pub fn decode(&self, p1: &FeaturePyramid, p2: &FeaturePyramid) -> Result<Tensor> {
        if p1.levels.len() != self.stages.len() || p2.levels.len() != self.stages.len() {
            return Err(Error::dim(format!(
                "decoder has {} stages, pyramids have {} and {} levels",
                self.stages.len(),
                p1.levels.len(),
                p2.levels.len()
            )));
        }
        let mut d: Option<Tensor> = None;
        for (i, stage) in self.stages.iter().enumerate().rev() {
            let s = stage.forward(&p1.levels[i], &p2.levels[i])?;
            d = Some(match d {
                None => s,
                Some(deeper) => s.add(&upsample_nearest(&deeper, 2)?)?,
            });
        }
        let d = d.ok_or_else(|| Error::Config("decoder has no stages".into()))?;
        upsample_bilinear(&self.head.forward(&d)?, 4)
    }
}

impl Module for Decoder {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        self.stages.visit_params(&join(prefix, "stage"), f);
        self.head.visit_params(&join(prefix, "head"), f);
    }
}

/// Per-pixel argmax over `(N, 2, H, W)` logits; ties go to no-change.
pub fn predict(logits: &Tensor) -> Result<Vec<BinaryMask>> {
    let (n, c, h, w) = logits.dims4()?;
    if c != 2 {
        return Err(Error::dim(format!("predict expects 2-class logits, got {c} channels")));
    }
    let d = logits.data();
    let hw = h * w;
    Ok((0..n)
        .map(|b| {
            let base = b * 2 * hw;
            BinaryMask::from_fn(h, w, |y, x| {
                let p = y * w + x;
                d[base + hw + p] > d[base + p]
            })
        })
        .collect())
}
