use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;

use super::image::{is_image_path, quantize, read_image, write_image, Image};
use super::BiTemporalSample;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::tensor::Tensor;

pub const PRE_DIR: &str = "A";
pub const POST_DIR: &str = "B";
pub const LABEL_DIR: &str = "label";
pub const LABEL_THRESHOLD: u8 = 128;

/// Loaded triples plus the names that lacked a counterpart.
#[derive(Debug, Default)]
pub struct LoadReport {
    pub samples: Vec<BiTemporalSample>,
    pub skipped: Vec<String>,
}

fn stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if !is_image_path(&path) {
            continue;
        }
        if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
            out.insert(stem.to_string(), path);
        }
    }
    Ok(out)
}

pub fn binarize(label: &Image) -> BinaryMask {
    let c = label.channels;
    BinaryMask::from_fn(label.height, label.width, |y, x| {
        label.data[(y * label.width + x) * c] >= LABEL_THRESHOLD
    })
}

/// Reads `root/{A,B,label}`, pairing files by stem in sorted order.
pub fn load_dataset(root: &Path) -> Result<LoadReport> {
    let dirs = [PRE_DIR, POST_DIR, LABEL_DIR].map(|d| root.join(d));
    for d in &dirs {
        if !d.is_dir() {
            return Err(Error::Data(format!("missing dataset directory {}", d.display())));
        }
    }
    let [a, b, l] = [stems(&dirs[0])?, stems(&dirs[1])?, stems(&dirs[2])?];
    let mut names: Vec<&String> = a.keys().chain(b.keys()).chain(l.keys()).collect();
    names.sort();
    names.dedup();
    let mut report = LoadReport::default();
    for name in names {
        let (Some(pa), Some(pb), Some(pl)) = (a.get(name), b.get(name), l.get(name)) else {
            log::warn!("skipping `{name}`: missing pre, post or label file");
            report.skipped.push(name.clone());
            continue;
        };
        let (ia, ib, il) = (read_image(pa)?, read_image(pb)?, read_image(pl)?);
        if (ia.width, ia.height) != (ib.width, ib.height) || (ia.width, ia.height) != (il.width, il.height) {
            return Err(Error::Data(format!(
                "`{name}`: sizes differ (pre {}x{}, post {}x{}, label {}x{})",
                ia.width, ia.height, ib.width, ib.height, il.width, il.height
            )));
        }
        report.samples.push(BiTemporalSample {
            name: name.clone(),
            pre: ia.to_tensor(),
            post: ib.to_tensor(),
            label: binarize(&il),
        });
    }
    Ok(report)
}

/// Writes samples as `root/A/<name>.ppm`, `root/B/<name>.ppm`,
/// `root/label/<name>.pgm` (0 / 255).
pub fn write_dataset(root: &Path, samples: &[BiTemporalSample]) -> Result<()> {
    for d in [PRE_DIR, POST_DIR, LABEL_DIR] {
        let dir = root.join(d);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    for s in samples {
        write_image(
            &root.join(PRE_DIR).join(format!("{}.ppm", s.name)),
            &Image::from_tensor(&s.pre)?,
        )?;
        write_image(
            &root.join(POST_DIR).join(format!("{}.ppm", s.name)),
            &Image::from_tensor(&s.post)?,
        )?;
        let label = Image::new(
            s.label.width(),
            s.label.height(),
            1,
            s.label.data().iter().map(|&v| v * 255).collect(),
        )?;
        write_image(&root.join(LABEL_DIR).join(format!("{}.pgm", s.name)), &label)?;
    }
    Ok(())
}

/// Top-left corners of the non-overlapping `tile x tile` grid; a side
/// shorter than `tile` yields a single window spanning it.
pub fn tile_origins(height: usize, width: usize, tile: usize) -> Vec<(usize, usize)> {
    let axis = |extent: usize| -> Vec<usize> {
        if extent <= tile {
            vec![0]
        } else {
            (0..extent / tile).map(|i| i * tile).collect()
        }
    };
    let ys = axis(height);
    let xs = axis(width);
    ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect()
}

pub fn tile_sample(s: &BiTemporalSample, tile: usize) -> Result<Vec<BiTemporalSample>> {
    let (h, w) = (s.height(), s.width());
    let (th, tw) = (tile.min(h), tile.min(w));
    tile_origins(h, w, tile)
        .into_iter()
        .map(|(y, x)| {
            s.crop(y, x, th, tw).map(|mut c| {
                c.name = format!("{}_{y}_{x}", s.name);
                c
            })
        })
        .collect()
}

/// Random `size x size` window (the full image if smaller).
pub fn random_crop<R: Rng + ?Sized>(s: &BiTemporalSample, size: usize, rng: &mut R) -> Result<BiTemporalSample> {
    let (h, w) = (s.height(), s.width());
    let (ch, cw) = (size.min(h), size.min(w));
    let y = rng.gen_range(0..=h - ch);
    let x = rng.gen_range(0..=w - cw);
    s.crop(y, x, ch, cw)
}

/// Mirrors all three planes left-right and/or top-bottom.
pub fn flip_sample(s: &BiTemporalSample, horizontal: bool, vertical: bool) -> Result<BiTemporalSample> {
    let flip = |t: &Tensor| -> Result<Tensor> {
        let t = if horizontal { t.flip(2)? } else { t.clone() };
        if vertical {
            t.flip(1)
        } else {
            Ok(t)
        }
    };
    let (h, w) = (s.height(), s.width());
    let label = BinaryMask::from_fn(h, w, |y, x| {
        let sy = if vertical { h - 1 - y } else { y };
        let sx = if horizontal { w - 1 - x } else { x };
        s.label.get(sy, sx) == 1
    });
    Ok(BiTemporalSample {
        name: s.name.clone(),
        pre: flip(&s.pre)?,
        post: flip(&s.post)?,
        label,
    })
}

/// Image-space rendering of the four outcome classes: true positives
/// white, true negatives black, false positives red, false negatives green.
pub fn render_change_map(pred: &BinaryMask, truth: &BinaryMask) -> Result<Image> {
    if (pred.height(), pred.width()) != (truth.height(), truth.width()) {
        return Err(Error::dim("change map: prediction and truth sizes differ"));
    }
    let mut data = Vec::with_capacity(pred.len() * 3);
    for (&p, &t) in pred.data().iter().zip(truth.data()) {
        data.extend_from_slice(match (p, t) {
            (1, 1) => &[255, 255, 255],
            (1, 0) => &[255, 0, 0],
            (0, 1) => &[0, 255, 0],
            _ => &[0, 0, 0],
        });
    }
    Image::new(pred.width(), pred.height(), 3, data)
}

/// Grayscale 0/255 rendering of a mask.
pub fn mask_image(mask: &BinaryMask) -> Image {
    Image::new(
        mask.width(),
        mask.height(),
        1,
        mask.data().iter().map(|&v| quantize(f64::from(v))).collect(),
    )
    .expect("mask image size")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tiling_arithmetic() {
        assert_eq!(tile_origins(1024, 1024, 256).len(), 16);
        assert_eq!(tile_origins(64, 64, 256), vec![(0, 0)]);
        assert_eq!(tile_origins(600, 300, 256), vec![(0, 0), (256, 0)]);
    }

    #[test]
    fn binarization_threshold() {
        let img = Image::new(4, 1, 1, vec![0, 127, 128, 255]).unwrap();
        assert_eq!(binarize(&img).data(), &[0, 0, 1, 1]);
    }

    #[test]
    fn tiles_reassemble_label() {
        let label = BinaryMask::from_fn(8, 8, |y, x| (y * 3 + x) % 5 == 0);
        let s = BiTemporalSample {
            name: "t".into(),
            pre: Tensor::zeros([3, 8, 8]),
            post: Tensor::zeros([3, 8, 8]),
            label: label.clone(),
        };
        let tiles = tile_sample(&s, 4).unwrap();
        assert_eq!(tiles.len(), 4);
        let mut back = BinaryMask::zeros(8, 8);
        for ((y0, x0), t) in tile_origins(8, 8, 4).into_iter().zip(&tiles) {
            for y in 0..4 {
                for x in 0..4 {
                    back.set(y0 + y, x0 + x, t.label.get(y, x) == 1);
                }
            }
        }
        assert_eq!(back, label);
    }

    #[test]
    fn render_colors() {
        let pred = BinaryMask::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let truth = BinaryMask::new(1, 4, vec![1, 0, 1, 0]).unwrap();
        let img = render_change_map(&pred, &truth).unwrap();
        assert_eq!(img.data, vec![255, 255, 255, 255, 0, 0, 0, 255, 0, 0, 0, 0]);
    }
}
