//! Convolution, normalization, resampling and attention primitives.

mod cbam;
mod conv;
mod norm;
mod resize;

pub use cbam::{channel_pools, global_pools, CbamMasks, CbamParams};
pub use conv::{conv2d, conv_out_extent, dsconv, Conv2dParams, ConvSpec, DsConv};
pub use norm::{layer_norm, LayerNorm};
pub use resize::{upsample_bilinear, upsample_nearest};
