//! Image I/O, synthetic scenes, on-disk datasets and change-map rendering.

mod dataset;
mod image;
mod synth;

pub use dataset::{
    binarize, flip_sample, load_dataset, mask_image, random_crop, render_change_map, tile_origins, tile_sample,
    write_dataset, LoadReport, LABEL_DIR, LABEL_THRESHOLD, POST_DIR, PRE_DIR,
};
pub use image::{decode_pnm, encode_pnm, is_image_path, quantize, read_image, write_image, Image};
pub use synth::{
    change_label, generate_range, generate_sample, generate_synthetic, render_scene, Shape, ShapeKind, SynthConfig,
};

use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

/// Co-registered pre/post images in `[0, 1]`, each `(3, H, W)`, and the
/// change label.
#[derive(Clone, Debug)]
pub struct BiTemporalSample {
    pub name: String,
    pub pre: Tensor,
    pub post: Tensor,
    pub label: BinaryMask,
}

fn crop_chw(t: &Tensor, y: usize, x: usize, h: usize, w: usize) -> Result<Tensor> {
    let (_, th, tw) = match t.dims() {
        &[c, th, tw] => (c, th, tw),
        _ => return Err(Error::dim(format!("expected (C, H, W), got {}", t.shape()))),
    };
    let mut out = Vec::with_capacity(3 * h * w);
    for c in 0..t.dims()[0] {
        for r in y..y + h {
            let off = (c * th + r) * tw;
            out.extend_from_slice(&t.data()[off + x..off + x + w]);
        }
    }
    Tensor::from_vec(out, [t.dims()[0], h, w])
}

impl BiTemporalSample {
    pub fn height(&self) -> usize {
        self.label.height()
    }

    pub fn width(&self) -> usize {
        self.label.width()
    }

    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        Ok(Self {
            name: self.name.clone(),
            pre: crop_chw(&self.pre, y, x, h, w)?,
            post: crop_chw(&self.post, y, x, h, w)?,
            label: self.label.crop(y, x, h, w)?,
        })
    }
}

/// Stacked model inputs for a batch of same-sized samples.
pub struct Batch {
    /// `(N, 3, H, W)`
    pub pre: Tensor,
    /// `(N, 3, H, W)`
    pub post: Tensor,
    /// `(N, H, W)` of 0.0 / 1.0
    pub target: Tensor,
    pub labels: Vec<BinaryMask>,
}

impl Batch {
    pub fn new(samples: &[&BiTemporalSample]) -> Result<Self> {
        let first = samples.first().ok_or_else(|| Error::Data("empty batch".into()))?;
        let (h, w) = (first.height(), first.width());
        let mut pre = Vec::with_capacity(samples.len() * 3 * h * w);
        let mut post = Vec::with_capacity(samples.len() * 3 * h * w);
        for s in samples {
            if (s.height(), s.width()) != (h, w) {
                return Err(Error::Data(format!(
                    "batch mixes {h}x{w} with {}x{} (`{}`)",
                    s.height(),
                    s.width(),
                    s.name
                )));
            }
            pre.extend_from_slice(s.pre.data());
            post.extend_from_slice(s.post.data());
        }
        let labels: Vec<BinaryMask> = samples.iter().map(|s| s.label.clone()).collect();
        let n = samples.len();
        Ok(Self {
            pre: Tensor::from_vec(pre, [n, 3, h, w])?,
            post: Tensor::from_vec(post, [n, 3, h, w])?,
            target: BinaryMask::stack(&labels)?,
            labels,
        })
    }
}
