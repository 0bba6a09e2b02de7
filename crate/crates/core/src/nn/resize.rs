use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

/// Nearest-neighbour upsampling by an integer factor.
pub fn upsample_nearest(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if factor == 0 {
        return Err(Error::dim("upsample factor must be positive"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let mut src = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        for oy in 0..oh {
            let row = plane * h * w + (oy / factor) * w;
            src.extend((0..ow).map(|ox| row + ox / factor));
        }
    }
    x.gather("upsample_nearest", Shape::new([n, c, oh, ow]), src)
}

/// Source taps `(i0, i1, frac)` for half-pixel-centred linear resampling.
fn linear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear upsampling by an integer factor (half-pixel centres, edge clamp).
pub fn upsample_bilinear(x: &Tensor, factor: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if factor == 0 {
        return Err(Error::dim("upsample factor must be positive"));
    }
    let (oh, ow) = (h * factor, w * factor);
    let ty = linear_taps(h, oh);
    let tx = linear_taps(w, ow);
    let xd = x.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let p = &xd[plane * h * w..(plane + 1) * h * w];
        for &(y0, y1, fy) in &ty {
            for &(x0, x1, fx) in &tx {
                let top = p[y0 * w + x0] * (1.0 - fx) + p[y0 * w + x1] * fx;
                let bot = p[y1 * w + x0] * (1.0 - fx) + p[y1 * w + x1] * fx;
                out.push(top * (1.0 - fy) + bot * fy);
            }
        }
    }
    Tensor::from_op("upsample_bilinear", out, Shape::new([n, c, oh, ow]), &[x], move |ctx| {
        let mut g = vec![0.0; n * c * h * w];
        let mut it = ctx.grad.iter();
        for plane in 0..n * c {
            let gp = &mut g[plane * h * w..(plane + 1) * h * w];
            for &(y0, y1, fy) in &ty {
                for &(x0, x1, fx) in &tx {
                    let d = *it.next().expect("grad length");
                    gp[y0 * w + x0] += d * (1.0 - fy) * (1.0 - fx);
                    gp[y0 * w + x1] += d * (1.0 - fy) * fx;
                    gp[y1 * w + x0] += d * fy * (1.0 - fx);
                    gp[y1 * w + x1] += d * fy * fx;
                }
            }
        }
        vec![Some(g)]
    })
}
