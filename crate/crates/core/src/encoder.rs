//! Shared-weight hierarchical backbone.

use rand::Rng;

use crate::error::{Error, Result};
use crate::module::{join, Module, ParamFn};
use crate::nn::{Conv2dParams, ConvSpec};
use crate::ssm::{SsmConfig, VssBlock};
use crate::tensor::Tensor;

/// Total spatial reduction from image to the deepest stage.
pub const MAX_STRIDE: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderConfig {
    pub channels: [usize; 4],
    pub depths: [usize; 4],
    pub ssm: SsmConfig,
}

impl EncoderConfig {
    pub fn tiny() -> Self {
        Self {
            channels: [16, 32, 64, 128],
            depths: [1, 1, 2, 1],
            ssm: SsmConfig::default(),
        }
    }

    pub fn small() -> Self {
        Self {
            channels: [32, 64, 128, 256],
            depths: [2, 2, 4, 2],
            ssm: SsmConfig::default(),
        }
    }

    pub fn base() -> Self {
        Self {
            channels: [128, 256, 512, 1024],
            depths: [2, 2, 15, 2],
            ssm: SsmConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "encoder channels must be positive: {:?}",
                self.channels
            )));
        }
        if self.channels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::Config(format!(
                "encoder channels must be nondecreasing: {:?}",
                self.channels
            )));
        }
        if self.ssm.d_state == 0 || self.ssm.expand == 0 {
            return Err(Error::Config(
                "encoder state size and expansion must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Per-stage features, shallowest first. Stage `i` has stride `4 * 2^i`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub levels: Vec<Tensor>,
}

#[derive(Clone, Debug)]
pub struct Encoder {
    pub stem: Conv2dParams,
    pub downsample: Vec<Conv2dParams>,
    pub stages: Vec<Vec<VssBlock>>,
}

impl Encoder {
    pub fn init<R: Rng + ?Sized>(cfg: &EncoderConfig, rng: &mut R) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let stem = Conv2dParams::init(
            3,
            c[0],
            4,
            ConvSpec {
                stride: 4,
                ..Default::default()
            },
            true,
            rng,
        )?;
        let downsample = (0..3)
            .map(|i| {
                Conv2dParams::init(
                    c[i],
                    c[i + 1],
                    2,
                    ConvSpec {
                        stride: 2,
                        ..Default::default()
                    },
                    true,
                    rng,
                )
            })
            .collect::<Result<_>>()?;
        let stages = (0..4)
            .map(|i| {
                (0..cfg.depths[i])
                    .map(|_| VssBlock::init(c[i], &cfg.ssm, rng))
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            stem,
            downsample,
            stages,
        })
    }

    pub fn encode(&self, x: &Tensor) -> Result<FeaturePyramid> {
        let (_, ch, h, w) = x.dims4()?;
        if ch != 3 {
            return Err(Error::dim(format!("encoder expects 3-channel images, got {ch}")));
        }
        if h % MAX_STRIDE != 0 || w % MAX_STRIDE != 0 || h == 0 || w == 0 {
            return Err(Error::dim(format!(
                "image extent {h}x{w} must be a positive multiple of {MAX_STRIDE}"
            )));
        }
        let mut levels = Vec::with_capacity(4);
        let mut f = self.stem.forward(x)?;
        for (i, blocks) in self.stages.iter().enumerate() {
            if i > 0 {
                f = self.downsample[i - 1].forward(&f)?;
            }
            for b in blocks {
                f = b.forward(&f)?;
            }
            levels.push(f.clone());
        }
        Ok(FeaturePyramid { levels })
    }

    /// Runs both frames through the same weights.
    pub fn encode_pair(&self, x1: &Tensor, x2: &Tensor) -> Result<(FeaturePyramid, FeaturePyramid)> {
        if x1.shape() != x2.shape() {
            return Err(Error::dim(format!(
                "frame shapes differ: {} vs {}",
                x1.shape(),
                x2.shape()
            )));
        }
        Ok((self.encode(x1)?, self.encode(x2)?))
    }
}

impl Module for Encoder {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        self.stem.visit_params(&join(prefix, "stem"), f);
        self.downsample.visit_params(&join(prefix, "down"), f);
        self.stages.visit_params(&join(prefix, "stage"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fast_tiny() -> EncoderConfig {
        let mut cfg = EncoderConfig::tiny();
        cfg.ssm.d_state = 2;
        cfg
    }

    #[test]
    fn tiny_pyramid_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let enc = Encoder::init(&fast_tiny(), &mut rng).unwrap();
        let x = Tensor::uniform([2, 3, 64, 64], 0.0, 1.0, &mut rng);
        let p = enc.encode(&x).unwrap();
        let dims: Vec<_> = p.levels.iter().map(|t| t.dims().to_vec()).collect();
        assert_eq!(
            dims,
            vec![
                vec![2, 16, 16, 16],
                vec![2, 32, 8, 8],
                vec![2, 64, 4, 4],
                vec![2, 128, 2, 2]
            ]
        );
    }

    #[test]
    fn rejects_indivisible_extent_and_bad_config() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let enc = Encoder::init(&fast_tiny(), &mut rng).unwrap();
        assert!(matches!(
            enc.encode(&Tensor::zeros([1, 3, 48, 64])),
            Err(Error::Dimension(_))
        ));
        let mut bad = fast_tiny();
        bad.channels = [32, 16, 64, 128];
        assert!(matches!(Encoder::init(&bad, &mut rng), Err(Error::Config(_))));
    }

    #[test]
    fn base_widths() {
        assert_eq!(EncoderConfig::base().channels, [128, 256, 512, 1024]);
        assert_eq!(EncoderConfig::base().depths, [2, 2, 15, 2]);
    }

    #[test]
    fn zeroed_residual_branches_leave_a_projection_chain() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut enc = Encoder::init(&fast_tiny(), &mut rng).unwrap();
        for stage in &mut enc.stages {
            for b in stage {
                b.out.zero_();
            }
        }
        let x = Tensor::uniform([1, 3, 32, 32], 0.0, 1.0, &mut rng);
        let p = enc.encode(&x).unwrap();
        let mut f = enc.stem.forward(&x).unwrap();
        assert_eq!(p.levels[0].data(), f.data());
        for i in 0..3 {
            f = enc.downsample[i].forward(&f).unwrap();
            assert_eq!(p.levels[i + 1].data(), f.data());
        }
    }
}
