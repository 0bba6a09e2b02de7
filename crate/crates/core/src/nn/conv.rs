use rand::Rng;

use crate::error::{Error, Result};
use crate::module::{join, Module, ParamFn};
use crate::tensor::{Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        Self {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

pub fn conv_out_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    (input + 2 * pad).checked_sub(kernel).map(|span| span / stride + 1)
}

/// Output columns `ox` in `lo..hi` read input column `ox*s + kx - p`
/// inside `0..w`.
fn valid_range(w: usize, ow: usize, s: usize, p: usize, kx: usize) -> (usize, usize) {
    let lo = if p > kx { (p - kx).div_ceil(s) } else { 0 };
    let hi = if w + p > kx {
        ((w - 1 + p - kx) / s + 1).min(ow)
    } else {
        0
    };
    (lo.min(hi), hi)
}

struct Geometry {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    s: usize,
    p: usize,
}

impl Geometry {
    /// Visits every (batch, out channel, in channel, tap) combination with
    /// the flat plane offsets and the kernel weight index.
    fn taps(&self, mut f: impl FnMut(usize, usize, usize, usize, usize, usize)) {
        for b in 0..self.n {
            for oc in 0..self.cout {
                let g = oc / self.cout_g;
                for icg in 0..self.cin_g {
                    let ic = g * self.cin_g + icg;
                    let in_off = (b * self.cin + ic) * self.h * self.w;
                    let out_off = (b * self.cout + oc) * self.oh * self.ow;
                    for ky in 0..self.kh {
                        for kx in 0..self.kw {
                            let widx = ((oc * self.cin_g + icg) * self.kh + ky) * self.kw + kx;
                            f(in_off, out_off, widx, ky, kx, oc);
                        }
                    }
                }
            }
        }
    }

    /// For one tap, visits each valid output row as
    /// `(out row start, in row start, lo, hi)` with columns `lo..hi`.
    fn rows(&self, ky: usize, kx: usize, mut f: impl FnMut(usize, usize, usize, usize)) {
        let (lo, hi) = valid_range(self.w, self.ow, self.s, self.p, kx);
        if lo >= hi {
            return;
        }
        for oy in 0..self.oh {
            let iy = (oy * self.s + ky) as isize - self.p as isize;
            if iy < 0 || iy as usize >= self.h {
                continue;
            }
            f(oy * self.ow, iy as usize * self.w, lo, hi);
        }
    }

    /// Column of the input read by output column `ox` for tap `kx`.
    #[inline]
    fn col(&self, ox: usize, kx: usize) -> usize {
        ox * self.s + kx - self.p
    }
}

/// 2-D cross-correlation over NCHW input with `(Cout, Cin/groups, kH, kW)`
/// weights.
pub fn conv2d(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>, spec: ConvSpec) -> Result<Tensor> {
    let (n, cin, h, w) = x.dims4()?;
    let (cout, cin_g, kh, kw) = weight.dims4()?;
    let ConvSpec {
        stride: s,
        padding: p,
        groups,
    } = spec;
    if groups == 0 || s == 0 || cin % groups != 0 || cout % groups != 0 || cin / groups != cin_g {
        return Err(Error::dim(format!(
            "conv2d: input {} incompatible with weight {} (groups {groups}, stride {s})",
            x.shape(),
            weight.shape()
        )));
    }
    if let Some(b) = bias {
        if b.dims() != [cout] {
            return Err(Error::dim(format!(
                "conv2d: bias shape {} for {cout} outputs",
                b.shape()
            )));
        }
    }
    let (Some(oh), Some(ow)) = (conv_out_extent(h, kh, s, p), conv_out_extent(w, kw, s, p)) else {
        return Err(Error::dim(format!(
            "conv2d: kernel {kh}x{kw} larger than padded input {h}x{w} (pad {p})"
        )));
    };
    let geo = Geometry {
        n,
        cin,
        h,
        w,
        cout,
        cin_g,
        kh,
        kw,
        oh,
        ow,
        s,
        p,
        cout_g: cout / groups,
    };
    let xd = x.data();
    let wd = weight.data();
    let mut out = vec![0.0; n * cout * oh * ow];
    if let Some(b) = bias {
        for (i, plane) in out.chunks_mut(oh * ow).enumerate() {
            plane.fill(b.data()[i % cout]);
        }
    }
    let pointwise = kh == 1 && kw == 1 && s == 1 && p == 0;
    geo.taps(|in_off, out_off, widx, ky, kx, _| {
        let wv = wd[widx];
        if pointwise {
            let src = &xd[in_off..in_off + h * w];
            let dst = &mut out[out_off..out_off + oh * ow];
            dst.iter_mut().zip(src).for_each(|(o, &i)| *o += wv * i);
            return;
        }
        geo.rows(ky, kx, |orow, irow, lo, hi| {
            let dst = &mut out[out_off + orow..out_off + orow + ow];
            let src = &xd[in_off + irow..in_off + irow + w];
            if s == 1 {
                let c0 = geo.col(lo, kx);
                dst[lo..hi]
                    .iter_mut()
                    .zip(&src[c0..c0 + hi - lo])
                    .for_each(|(o, &i)| *o += wv * i);
            } else {
                for ox in lo..hi {
                    dst[ox] += wv * src[geo.col(ox, kx)];
                }
            }
        });
    });

    let mut inputs = vec![x, weight];
    if let Some(b) = bias {
        inputs.push(b);
    }
    let (xc, wc) = (x.clone(), weight.clone());
    let has_bias = bias.is_some();
    Tensor::from_op("conv2d", out, Shape::new([n, cout, oh, ow]), &inputs, move |ctx| {
        let g = ctx.grad;
        let (xd, wd) = (xc.data(), wc.data());
        let mut gx = ctx.needs[0].then(|| vec![0.0; xd.len()]);
        let mut gw = ctx.needs[1].then(|| vec![0.0; wd.len()]);
        geo.taps(|in_off, out_off, widx, ky, kx, _| {
            let wv = wd[widx];
            let mut acc = 0.0;
            if pointwise {
                let go = &g[out_off..out_off + oh * ow];
                if let Some(gx) = gx.as_mut() {
                    gx[in_off..in_off + h * w]
                        .iter_mut()
                        .zip(go)
                        .for_each(|(d, &v)| *d += wv * v);
                }
                if gw.is_some() {
                    acc = go.iter().zip(&xd[in_off..in_off + h * w]).map(|(a, b)| a * b).sum();
                }
            } else {
                geo.rows(ky, kx, |orow, irow, lo, hi| {
                    let go = &g[out_off + orow..out_off + orow + ow];
                    if s == 1 {
                        let c0 = in_off + irow + geo.col(lo, kx);
                        let go = &go[lo..hi];
                        if let Some(gx) = gx.as_mut() {
                            gx[c0..c0 + hi - lo].iter_mut().zip(go).for_each(|(d, &v)| *d += wv * v);
                        }
                        acc += go.iter().zip(&xd[c0..c0 + hi - lo]).map(|(a, b)| a * b).sum::<f64>();
                    } else {
                        for ox in lo..hi {
                            let ix = in_off + irow + geo.col(ox, kx);
                            if let Some(gx) = gx.as_mut() {
                                gx[ix] += wv * go[ox];
                            }
                            acc += go[ox] * xd[ix];
                        }
                    }
                });
            }
            if let Some(gw) = gw.as_mut() {
                gw[widx] += acc;
            }
        });
        let mut grads = vec![gx, gw];
        if has_bias {
            grads.push(ctx.needs[2].then(|| {
                let mut gb = vec![0.0; cout];
                for (i, plane) in g.chunks(oh * ow).enumerate() {
                    gb[i % cout] += plane.iter().sum::<f64>();
                }
                gb
            }));
        }
        grads
    })
}

/// Convolution weights plus geometry.
#[derive(Clone, Debug)]
pub struct Conv2dParams {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub spec: ConvSpec,
}

impl Conv2dParams {
    /// Uniform init in `±1/sqrt(fan_in)` for weight and bias.
    pub fn init<R: Rng + ?Sized>(
        cin: usize,
        cout: usize,
        kernel: usize,
        spec: ConvSpec,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if spec.groups == 0 || !cin.is_multiple_of(spec.groups) || !cout.is_multiple_of(spec.groups) {
            return Err(Error::dim(format!(
                "conv init: {cin}->{cout} not divisible by groups {}",
                spec.groups
            )));
        }
        let cin_g = cin / spec.groups;
        let bound = 1.0 / ((cin_g * kernel * kernel) as f64).sqrt();
        let weight = Tensor::uniform([cout, cin_g, kernel, kernel], -bound, bound, rng).into_leaf(true);
        let bias = bias.then(|| Tensor::uniform([cout], -bound, bound, rng).into_leaf(true));
        Ok(Self { weight, bias, spec })
    }

    pub fn pointwise<R: Rng + ?Sized>(cin: usize, cout: usize, bias: bool, rng: &mut R) -> Result<Self> {
        Self::init(cin, cout, 1, ConvSpec::default(), bias, rng)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        conv2d(x, &self.weight, self.bias.as_ref(), self.spec)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.dims()[0]
    }

    pub fn zero_(&mut self) {
        self.weight = Tensor::zeros(self.weight.shape().clone()).into_leaf(true);
        if let Some(b) = &self.bias {
            self.bias = Some(Tensor::zeros(b.shape().clone()).into_leaf(true));
        }
    }
}

impl Module for Conv2dParams {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        f(&join(prefix, "weight"), &mut self.weight, true);
        if let Some(b) = self.bias.as_mut() {
            f(&join(prefix, "bias"), b, false);
        }
    }
}

/// Depthwise 3x3 (no bias) followed by a biased pointwise projection.
#[derive(Clone, Debug)]
pub struct DsConv {
    pub depthwise: Conv2dParams,
    pub pointwise: Conv2dParams,
}

impl DsConv {
    pub fn init<R: Rng + ?Sized>(cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        let dw_spec = ConvSpec {
            stride: 1,
            padding: 1,
            groups: cin,
        };
        Ok(Self {
            depthwise: Conv2dParams::init(cin, cin, 3, dw_spec, false, rng)?,
            pointwise: Conv2dParams::pointwise(cin, cout, true, rng)?,
        })
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        dsconv(x, &self.depthwise, &self.pointwise)
    }
}

impl Module for DsConv {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        self.depthwise.visit_params(&join(prefix, "dw"), f);
        self.pointwise.visit_params(&join(prefix, "pw"), f);
    }
}

/// `PW(DW3x3(x))`: per-channel spatial filtering, then channel mixing.
pub fn dsconv(x: &Tensor, depthwise: &Conv2dParams, pointwise: &Conv2dParams) -> Result<Tensor> {
    let (_, c, _, _) = x.dims4()?;
    if depthwise.spec.groups != c || depthwise.weight.dims()[2..] != [3, 3] {
        return Err(Error::dim(format!(
            "dsconv: depthwise stage must be 3x3 with groups == {c} channels"
        )));
    }
    pointwise.forward(&depthwise.forward(x)?)
}
