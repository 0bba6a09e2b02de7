use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// 8-bit interleaved image with 1 (gray) or 3 (RGB) channels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(Error::Data(format!("unsupported channel count {channels}")));
        }
        if data.len() != width * height * channels {
            return Err(Error::Data(format!(
                "{} bytes for a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn pixel(&self, y: usize, x: usize) -> &[u8] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    /// `(3, H, W)` in `[0, 1]`; gray images are replicated across channels.
    pub fn to_tensor(&self) -> Tensor {
        let hw = self.width * self.height;
        let mut out = vec![0.0; 3 * hw];
        for p in 0..hw {
            for c in 0..3 {
                let src = if self.channels == 1 { p } else { p * 3 + c };
                out[c * hw + p] = f64::from(self.data[src]) / 255.0;
            }
        }
        Tensor::from_vec(out, [3, self.height, self.width]).expect("image tensor shape")
    }

    /// Inverse of [`Image::to_tensor`] for a `(3, H, W)` tensor, rounding and
    /// clamping to 8 bits.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (c, h, w) = match t.dims() {
            &[c, h, w] if c == 3 => (c, h, w),
            _ => return Err(Error::dim(format!("expected (3, H, W), got {}", t.shape()))),
        };
        let hw = h * w;
        let mut data = vec![0u8; c * hw];
        for p in 0..hw {
            for ch in 0..3 {
                data[p * 3 + ch] = quantize(t.data()[ch * hw + p]);
            }
        }
        Image::new(w, h, 3, data)
    }
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Binary PGM (`P5`) for 1 channel, PPM (`P6`) for 3.
pub fn encode_pnm(img: &Image) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.data);
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Data("malformed PNM header".into()))
    }
}

pub fn decode_pnm(bytes: &[u8]) -> Result<Image> {
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(Error::Data("not a binary PGM/PPM file".into())),
    };
    let mut h = Header { bytes, pos: 2 };
    let width = h.number()?;
    let height = h.number()?;
    let maxval = h.number()?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Data(format!("unsupported PNM maxval {maxval}")));
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = h.pos + 1;
    let len = width * height * channels;
    let raster = bytes
        .get(start..start + len)
        .ok_or_else(|| Error::Data("truncated PNM raster".into()))?;
    let data = if maxval == 255 {
        raster.to_vec()
    } else {
        raster
            .iter()
            .map(|&v| ((usize::from(v) * 255 + maxval / 2) / maxval) as u8)
            .collect()
    };
    Image::new(width, height, channels, data)
}

fn extension(path: &Path) -> String {
    path.extension()
        .and_then(|e| e.to_str())
        .unwrap_or("")
        .to_ascii_lowercase()
}

pub fn is_image_path(path: &Path) -> bool {
    matches!(extension(path).as_str(), "pgm" | "ppm" | "pnm" | "png")
}

pub fn read_image(path: &Path) -> Result<Image> {
    match extension(path).as_str() {
        "pgm" | "ppm" | "pnm" => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            decode_pnm(&bytes).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
        }
        "png" => read_png(path),
        other => Err(Error::Data(format!(
            "{}: unsupported image format `{other}`",
            path.display()
        ))),
    }
}

/// Writes PGM/PPM by extension (`.png` when built with PNG support).
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    match extension(path).as_str() {
        "png" => write_png(path, img),
        _ => fs::write(path, encode_pnm(img)).map_err(|e| Error::io(path, e)),
    }
}

#[cfg(feature = "png")]
fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img.color().channel_count() {
        1 | 2 => Image::new(w, h, 1, img.into_luma8().into_raw()),
        _ => Image::new(w, h, 3, img.into_rgb8().into_raw()),
    }
}

#[cfg(not(feature = "png"))]
fn read_png(path: &Path) -> Result<Image> {
    Err(Error::Data(format!(
        "{}: PNG support not compiled in (enable the `png` feature)",
        path.display()
    )))
}

#[cfg(feature = "png")]
fn write_png(path: &Path, img: &Image) -> Result<()> {
    let color = if img.channels == 1 {
        image::ExtendedColorType::L8
    } else {
        image::ExtendedColorType::Rgb8
    };
    image::save_buffer(path, &img.data, img.width as u32, img.height as u32, color)
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

#[cfg(not(feature = "png"))]
fn write_png(path: &Path, _img: &Image) -> Result<()> {
    Err(Error::Data(format!(
        "{}: PNG support not compiled in (enable the `png` feature)",
        path.display()
    )))
}
