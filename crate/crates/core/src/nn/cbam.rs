use rand::Rng;

use super::conv::{conv2d, ConvSpec};
use crate::error::{Error, Result};
use crate::module::{join, Module, ParamFn};
use crate::tensor::Tensor;

/// `(avg over H,W; max over H,W)`, each `(N, C, 1, 1)`.
pub fn global_pools(x: &Tensor) -> Result<(Tensor, Tensor)> {
    x.dims4()?;
    Ok((x.mean_axes(&[2, 3])?, x.max_axes(&[2, 3])?))
}

/// `(avg over C; max over C)`, each `(N, 1, H, W)`.
pub fn channel_pools(x: &Tensor) -> Result<(Tensor, Tensor)> {
    x.dims4()?;
    Ok((x.mean_axes(&[1])?, x.max_axes(&[1])?))
}

/// Channel-then-spatial attention masks over an NCHW feature map.
///
/// The channel MLP is shared between the average- and max-pooled
/// descriptors. Both masks are computed from the block input.
#[derive(Clone, Debug)]
pub struct CbamParams {
    /// `(C/r, C, 1, 1)`
    pub mlp_w1: Tensor,
    /// `(C, C/r, 1, 1)`
    pub mlp_w2: Tensor,
    /// `(1, 2, k, k)` over the stacked (avg, max) channel pools.
    pub spatial_kernel: Tensor,
    pub reduction: usize,
}

pub struct CbamMasks {
    /// `(N, C, 1, 1)`
    pub channel: Tensor,
    /// `(N, 1, H, W)`
    pub spatial: Tensor,
}

impl CbamParams {
    pub fn init<R: Rng + ?Sized>(channels: usize, reduction: usize, kernel: usize, rng: &mut R) -> Result<Self> {
        if reduction == 0 || !channels.is_multiple_of(reduction) {
            return Err(Error::Config(format!(
                "CBAM reduction {reduction} must divide {channels} channels"
            )));
        }
        if kernel.is_multiple_of(2) {
            return Err(Error::Config(format!("CBAM spatial kernel must be odd, got {kernel}")));
        }
        let hidden = channels / reduction;
        let b1 = 1.0 / (channels as f64).sqrt();
        let b2 = 1.0 / (hidden as f64).sqrt();
        let bk = 1.0 / ((2 * kernel * kernel) as f64).sqrt();
        Ok(Self {
            mlp_w1: Tensor::uniform([hidden, channels, 1, 1], -b1, b1, rng).into_leaf(true),
            mlp_w2: Tensor::uniform([channels, hidden, 1, 1], -b2, b2, rng).into_leaf(true),
            spatial_kernel: Tensor::uniform([1, 2, kernel, kernel], -bk, bk, rng).into_leaf(true),
            reduction,
        })
    }

    pub fn channels(&self) -> usize {
        self.mlp_w1.dims()[1]
    }

    fn mlp(&self, v: &Tensor) -> Result<Tensor> {
        let hidden = conv2d(v, &self.mlp_w1, None, ConvSpec::default())?.relu()?;
        conv2d(&hidden, &self.mlp_w2, None, ConvSpec::default())
    }

    pub fn masks(&self, x: &Tensor) -> Result<CbamMasks> {
        let (_, c, _, _) = x.dims4()?;
        if c != self.channels() {
            return Err(Error::dim(format!(
                "cbam: input has {c} channels, block built for {}",
                self.channels()
            )));
        }
        let (avg, max) = global_pools(x)?;
        let channel = self.mlp(&avg)?.add(&self.mlp(&max)?)?.sigmoid()?;
        let (cavg, cmax) = channel_pools(x)?;
        let stacked = Tensor::concat(&[&cavg, &cmax], 1)?;
        let k = self.spatial_kernel.dims()[2];
        let spec = ConvSpec {
            stride: 1,
            padding: k / 2,
            groups: 1,
        };
        let spatial = conv2d(&stacked, &self.spatial_kernel, None, spec)?.sigmoid()?;
        Ok(CbamMasks { channel, spatial })
    }

    /// `M_s ⊙ (M_c ⊙ x)`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let m = self.masks(x)?;
        let shape = x.shape().clone();
        m.spatial.expand(shape.clone())?.mul(&m.channel.expand(shape)?.mul(x)?)
    }
}

impl Module for CbamParams {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        f(&join(prefix, "mlp_w1"), &mut self.mlp_w1, true);
        f(&join(prefix, "mlp_w2"), &mut self.mlp_w2, true);
        f(&join(prefix, "spatial"), &mut self.spatial_kernel, true);
    }
}
