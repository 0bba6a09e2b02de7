use crate::error::{Error, Result};
use crate::module::{join, Module, ParamFn};
use crate::tensor::Tensor;

/// Layer normalization over the channel axis of an NCHW tensor, independently
/// at every spatial position.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor, eps: f64) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if gamma.dims() != [c] || beta.dims() != [c] {
        return Err(Error::dim(format!(
            "layer_norm: affine params {} / {} for {c} channels",
            gamma.shape(),
            beta.shape()
        )));
    }
    if eps <= 0.0 {
        return Err(Error::Domain("layer_norm eps must be positive".into()));
    }
    let hw = h * w;
    let xd = x.data();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut out = vec![0.0; xd.len()];
    let mut xhat = vec![0.0; xd.len()];
    let mut rstd = vec![0.0; n * hw];
    let mut mean = vec![0.0; hw];
    let mut var = vec![0.0; hw];
    for b in 0..n {
        let base = b * c * hw;
        mean.fill(0.0);
        var.fill(0.0);
        for ch in 0..c {
            let plane = &xd[base + ch * hw..base + (ch + 1) * hw];
            mean.iter_mut().zip(plane).for_each(|(m, &v)| *m += v);
        }
        mean.iter_mut().for_each(|m| *m /= c as f64);
        for ch in 0..c {
            let plane = &xd[base + ch * hw..base + (ch + 1) * hw];
            var.iter_mut()
                .zip(plane)
                .zip(&mean)
                .for_each(|((s, &v), &m)| *s += (v - m) * (v - m));
        }
        let r = &mut rstd[b * hw..(b + 1) * hw];
        r.iter_mut()
            .zip(&var)
            .for_each(|(r, &v)| *r = 1.0 / (v / c as f64 + eps).sqrt());
        for ch in 0..c {
            let off = base + ch * hw;
            for p in 0..hw {
                let xh = (xd[off + p] - mean[p]) * r[p];
                xhat[off + p] = xh;
                out[off + p] = xh * gd[ch] + bd[ch];
            }
        }
    }
    let gamma_c = gamma.clone();
    Tensor::from_op("layer_norm", out, x.shape().clone(), &[x, gamma, beta], move |ctx| {
        let g = ctx.grad;
        let gd = gamma_c.data();
        let mut gx = ctx.needs[0].then(|| vec![0.0; g.len()]);
        let mut gg = vec![0.0; c];
        let mut gb = vec![0.0; c];
        let mut sum_d = vec![0.0; hw];
        let mut sum_dx = vec![0.0; hw];
        for b in 0..n {
            let base = b * c * hw;
            sum_d.fill(0.0);
            sum_dx.fill(0.0);
            for ch in 0..c {
                let off = base + ch * hw;
                for p in 0..hw {
                    let dy = g[off + p];
                    let xh = xhat[off + p];
                    gg[ch] += dy * xh;
                    gb[ch] += dy;
                    let d = dy * gd[ch];
                    sum_d[p] += d;
                    sum_dx[p] += d * xh;
                }
            }
            if let Some(gx) = gx.as_mut() {
                let r = &rstd[b * hw..(b + 1) * hw];
                let inv_c = 1.0 / c as f64;
                for ch in 0..c {
                    let off = base + ch * hw;
                    for p in 0..hw {
                        let d = g[off + p] * gd[ch];
                        gx[off + p] = r[p] * (d - inv_c * (sum_d[p] + xhat[off + p] * sum_dx[p]));
                    }
                }
            }
        }
        vec![gx, ctx.needs[1].then_some(gg), ctx.needs[2].then_some(gb)]
    })
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f64,
}

impl LayerNorm {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones([channels]).into_leaf(true),
            beta: Tensor::zeros([channels]).into_leaf(true),
            eps: 1e-6,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        layer_norm(x, &self.gamma, &self.beta, self.eps)
    }
}

impl Module for LayerNorm {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        f(&join(prefix, "gamma"), &mut self.gamma, false);
        f(&join(prefix, "beta"), &mut self.beta, false);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::gradcheck::{grad_check_many, GradCheckConfig};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_channels_normalize_to_zero() {
        let x = Tensor::full([1, 4, 2, 2], 3.5);
        let ln = LayerNorm::new(4);
        assert!(ln.forward(&x).unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn moments_follow_affine() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::uniform([2, 5, 3, 3], -2.0, 2.0, &mut rng);
        let gamma = Tensor::full([5], 1.7);
        let beta = Tensor::full([5], -0.4);
        let y = layer_norm(&x, &gamma, &beta, 1e-12).unwrap();
        for b in 0..2 {
            for p in 0..9 {
                let vals: Vec<f64> = (0..5).map(|c| y.data()[(b * 5 + c) * 9 + p]).collect();
                let m = vals.iter().sum::<f64>() / 5.0;
                let v = vals.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 5.0;
                assert!((m + 0.4).abs() < 1e-6);
                assert!((v - 1.7f64.powi(2)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = Tensor::uniform([2, 4, 2, 3], -2.0, 2.0, &mut rng);
        let gamma = Tensor::uniform([4], 0.5, 1.5, &mut rng);
        let beta = Tensor::uniform([4], -0.5, 0.5, &mut rng);
        let proj = Tensor::uniform([2, 4, 2, 3], -1.0, 1.0, &mut rng);
        let r = grad_check_many(
            |v| layer_norm(&v[0], &v[1], &v[2], 1e-5)?.mul(&proj)?.sum_all(),
            &[x, gamma, beta],
            &GradCheckConfig::default(),
        )
        .unwrap();
        assert!(r.passed(), "{r}");
    }
}
