use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Row-major per-pixel labels in `{0, 1}`; 1 means change.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::dim(format!(
                "mask data has {} values for {height}x{width}",
                data.len()
            )));
        }
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::Data(format!("mask value {v} is not binary")));
        }
        Ok(Self { height, width, data })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let data = (0..height)
            .flat_map(|y| (0..width).map(move |x| (y, x)))
            .map(|(y, x)| u8::from(f(y, x)))
            .collect();
        Self { height, width, data }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: bool) {
        self.data[y * self.width + x] = u8::from(v);
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// Window `[y, y+h) x [x, x+w)`.
    pub fn crop(&self, y: usize, x: usize, h: usize, w: usize) -> Result<Self> {
        if y + h > self.height || x + w > self.width {
            return Err(Error::dim(format!(
                "crop {h}x{w} at ({y}, {x}) exceeds {}x{}",
                self.height, self.width
            )));
        }
        let data = (y..y + h)
            .flat_map(|r| self.data[r * self.width + x..r * self.width + x + w].iter().copied())
            .collect();
        Ok(Self {
            height: h,
            width: w,
            data,
        })
    }

    /// Stacks masks into an `(N, H, W)` tensor of 0.0 / 1.0.
    pub fn stack(masks: &[BinaryMask]) -> Result<Tensor> {
        let first = masks.first().ok_or_else(|| Error::dim("stacking zero masks"))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(masks.len() * h * w);
        for m in masks {
            if (m.height, m.width) != (h, w) {
                return Err(Error::dim("stacked masks differ in size"));
            }
            data.extend(m.data.iter().map(|&v| f64::from(v)));
        }
        Tensor::from_vec(data, [masks.len(), h, w])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary_and_bad_length() {
        assert!(matches!(BinaryMask::new(1, 2, vec![0, 2]), Err(Error::Data(_))));
        assert!(matches!(BinaryMask::new(2, 2, vec![0, 1]), Err(Error::Dimension(_))));
    }

    #[test]
    fn crop_and_stack() {
        let m = BinaryMask::from_fn(3, 4, |y, x| (y + x) % 2 == 0);
        let c = m.crop(1, 1, 2, 2).unwrap();
        assert_eq!(c.data(), &[1, 0, 0, 1]);
        let t = BinaryMask::stack(&[c.clone(), c]).unwrap();
        assert_eq!(t.dims(), &[2, 2, 2]);
        assert!(m.crop(2, 0, 2, 1).is_err());
    }
}
