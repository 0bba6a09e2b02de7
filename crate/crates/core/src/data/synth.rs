use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BiTemporalSample;
use crate::encoder::MAX_STRIDE;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SynthConfig {
    pub size: usize,
    pub min_shapes: usize,
    pub max_shapes: usize,
    /// Probability of each of `max_shapes / 2` candidate new shapes.
    pub p_add: f64,
    /// Per pre-event shape.
    pub p_remove: f64,
    /// Per surviving pre-event shape: recolor.
    pub p_alter: f64,
    /// Uniform per-pixel noise amplitude added to both frames.
    pub noise: f64,
    /// Global gain/offset range applied to the post-event frame.
    pub illumination: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            size: 64,
            min_shapes: 2,
            max_shapes: 6,
            p_add: 0.5,
            p_remove: 0.25,
            p_alter: 0.2,
            noise: 0.03,
            illumination: 0.1,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || !self.size.is_multiple_of(MAX_STRIDE) {
            return Err(Error::Config(format!(
                "synthetic image size {} must be a positive multiple of {MAX_STRIDE}",
                self.size
            )));
        }
        for (name, p) in [
            ("p_add", self.p_add),
            ("p_remove", self.p_remove),
            ("p_alter", self.p_alter),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} = {p} is not a probability")));
            }
        }
        if self.min_shapes > self.max_shapes {
            return Err(Error::Config("min_shapes exceeds max_shapes".into()));
        }
        if !(self.noise >= 0.0 && self.illumination >= 0.0) {
            return Err(Error::Config("noise and illumination must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShapeKind {
    Rectangle,
    Ellipse,
}

/// Solid axis-aligned shape occupying `[y, y+h) x [x, x+w)`'s footprint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub kind: ShapeKind,
    pub y: usize,
    pub x: usize,
    pub h: usize,
    pub w: usize,
    pub color: [f64; 3],
}

impl Shape {
    pub fn covers(&self, py: usize, px: usize) -> bool {
        if py < self.y || px < self.x || py >= self.y + self.h || px >= self.x + self.w {
            return false;
        }
        match self.kind {
            ShapeKind::Rectangle => true,
            ShapeKind::Ellipse => {
                let ry = self.h as f64 / 2.0;
                let rx = self.w as f64 / 2.0;
                let dy = (py as f64 + 0.5 - self.y as f64 - ry) / ry;
                let dx = (px as f64 + 0.5 - self.x as f64 - rx) / rx;
                dy * dy + dx * dx <= 1.0
            }
        }
    }
}

const PALETTE: [[f64; 3]; 8] = [
    [0.85, 0.15, 0.10],
    [0.10, 0.75, 0.20],
    [0.15, 0.25, 0.85],
    [0.90, 0.85, 0.20],
    [0.92, 0.92, 0.90],
    [0.10, 0.80, 0.85],
    [0.80, 0.20, 0.80],
    [0.05, 0.05, 0.08],
];

/// `(3, H, W)` image of `shapes` painted in order over `background`.
pub fn render_scene(background: &[f64], size: usize, shapes: &[Shape]) -> Vec<f64> {
    let hw = size * size;
    let mut img = background.to_vec();
    for s in shapes {
        for py in s.y..(s.y + s.h).min(size) {
            for px in s.x..(s.x + s.w).min(size) {
                if s.covers(py, px) {
                    for c in 0..3 {
                        img[c * hw + py * size + px] = s.color[c];
                    }
                }
            }
        }
    }
    img
}

/// Pixels whose clean colors differ between the two renders.
pub fn change_label(pre: &[f64], post: &[f64], size: usize) -> BinaryMask {
    let hw = size * size;
    BinaryMask::from_fn(size, size, |y, x| {
        let p = y * size + x;
        (0..3).any(|c| pre[c * hw + p] != post[c * hw + p])
    })
}

fn random_shape<R: Rng>(rng: &mut R, size: usize) -> Shape {
    let lo = (size / 10).max(3);
    let hi = (size / 3).max(lo + 1);
    let h = rng.gen_range(lo..hi);
    let w = rng.gen_range(lo..hi);
    Shape {
        kind: if rng.gen_bool(0.5) {
            ShapeKind::Rectangle
        } else {
            ShapeKind::Ellipse
        },
        y: rng.gen_range(0..=size - h),
        x: rng.gen_range(0..=size - w),
        h,
        w,
        color: PALETTE[rng.gen_range(0..PALETTE.len())],
    }
}

fn background<R: Rng>(rng: &mut R, size: usize) -> Vec<f64> {
    let hw = size * size;
    let base: [f64; 3] = std::array::from_fn(|_| rng.gen_range(0.25..0.45));
    let grad: [f64; 2] = [rng.gen_range(-0.08..0.08), rng.gen_range(-0.08..0.08)];
    let mut bg = vec![0.0; 3 * hw];
    for y in 0..size {
        for x in 0..size {
            let ramp = grad[0] * y as f64 / size as f64 + grad[1] * x as f64 / size as f64;
            let texture = rng.gen_range(-0.04..0.04);
            for c in 0..3 {
                bg[c * hw + y * size + x] = base[c] + ramp + texture;
            }
        }
    }
    bg
}

/// Deterministic sample `index` of the stream defined by `cfg.seed`.
pub fn generate_sample(cfg: &SynthConfig, index: u64) -> Result<BiTemporalSample> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(index);
    let size = cfg.size;
    let bg = background(&mut rng, size);
    let count = rng.gen_range(cfg.min_shapes..=cfg.max_shapes);
    let pre_shapes: Vec<Shape> = (0..count).map(|_| random_shape(&mut rng, size)).collect();
    let mut post_shapes = Vec::with_capacity(count);
    for s in &pre_shapes {
        if rng.gen_bool(cfg.p_remove) {
            continue;
        }
        let mut s = *s;
        if rng.gen_bool(cfg.p_alter) {
            let current = s.color;
            let others: Vec<_> = PALETTE.iter().filter(|&&c| c != current).collect();
            s.color = *others[rng.gen_range(0..others.len())];
        }
        post_shapes.push(s);
    }
    for _ in 0..(cfg.max_shapes / 2).max(1) {
        if rng.gen_bool(cfg.p_add) {
            post_shapes.push(random_shape(&mut rng, size));
        }
    }
    let clean_pre = render_scene(&bg, size, &pre_shapes);
    let clean_post = render_scene(&bg, size, &post_shapes);
    let label = change_label(&clean_pre, &clean_post, size);

    let gain = 1.0 + rng.gen_range(-1.0..=1.0) * cfg.illumination;
    let offset = rng.gen_range(-0.5..=0.5) * cfg.illumination;
    let mut jitter = |v: f64| {
        let n = if cfg.noise > 0.0 {
            rng.gen_range(-cfg.noise..=cfg.noise)
        } else {
            0.0
        };
        (v + n).clamp(0.0, 1.0)
    };
    let pre: Vec<f64> = clean_pre.iter().map(|&v| jitter(v)).collect();
    let post: Vec<f64> = clean_post.iter().map(|&v| jitter(v * gain + offset)).collect();
    Ok(BiTemporalSample {
        name: format!("synth_{index:05}"),
        pre: Tensor::from_vec(pre, [3, size, size])?,
        post: Tensor::from_vec(post, [3, size, size])?,
        label,
    })
}

/// Samples `first..first + n` of the stream.
pub fn generate_range(cfg: &SynthConfig, first: u64, n: usize) -> Result<Vec<BiTemporalSample>> {
    (first..first + n as u64).map(|i| generate_sample(cfg, i)).collect()
}

pub fn generate_synthetic(cfg: &SynthConfig, n: usize) -> Result<Vec<BiTemporalSample>> {
    generate_range(cfg, 0, n)
}
