//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use cdfuse_core::decoder::DecoderConfig;
use cdfuse_core::fusion::FusionKind;
use cdfuse_core::metrics::ConfusionCounts;
use cdfuse_core::model::ModelConfig;
use cdfuse_core::ssm::{selective_scan, SsmConfig};
use cdfuse_core::{BinaryMask, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub struct ScanInstance {
    pub n: usize,
    pub d: usize,
    pub s: usize,
    pub l: usize,
    pub u: Vec<f64>,
    pub delta: Vec<f64>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub dsk: Vec<f64>,
}

impl ScanInstance {
    pub fn random(rng: &mut ChaCha8Rng, max_l: usize, max_d: usize, max_s: usize) -> Self {
        let n = rng.gen_range(1..=2);
        let d = rng.gen_range(1..=max_d);
        let s = rng.gen_range(1..=max_s);
        let l = rng.gen_range(1..=max_l);
        let mut v = |k: usize, lo: f64, hi: f64| -> Vec<f64> { (0..k).map(|_| rng.gen_range(lo..hi)).collect() };
        Self {
            u: v(n * d * l, -2.0, 2.0),
            delta: v(n * d * l, 0.01, 1.0),
            a: v(d * s, -3.0, -0.05),
            b: v(n * s * l, -1.5, 1.5),
            c: v(n * s * l, -1.5, 1.5),
            dsk: v(d, -1.0, 1.0),
            n,
            d,
            s,
            l,
        }
    }

    pub fn tensors(&self) -> [Tensor; 6] {
        let (n, d, s, l) = (self.n, self.d, self.s, self.l);
        [
            Tensor::from_vec(self.u.clone(), [n, d, l]).unwrap(),
            Tensor::from_vec(self.delta.clone(), [n, d, l]).unwrap(),
            Tensor::from_vec(self.a.clone(), [d, s]).unwrap(),
            Tensor::from_vec(self.b.clone(), [n, s, l]).unwrap(),
            Tensor::from_vec(self.c.clone(), [n, s, l]).unwrap(),
            Tensor::from_vec(self.dsk.clone(), [d]).unwrap(),
        ]
    }

    pub fn run(&self) -> Vec<f64> {
        let [u, dl, a, b, c, dsk] = self.tensors();
        selective_scan(&u, &dl, &a, &b, &c, &dsk).unwrap().to_vec()
    }

    /// Materializes every discretized matrix and state, then reads out.
    pub fn naive(&self) -> Vec<f64> {
        let (n, d, s, l) = (self.n, self.d, self.s, self.l);
        let mut y = vec![0.0; n * d * l];
        for bi in 0..n {
            for di in 0..d {
                let row = (bi * d + di) * l;
                let mut abar = vec![vec![0.0; s]; l];
                let mut bbar = vec![vec![0.0; s]; l];
                for t in 0..l {
                    for k in 0..s {
                        abar[t][k] = (self.delta[row + t] * self.a[di * s + k]).exp();
                        bbar[t][k] = self.delta[row + t] * self.b[(bi * s + k) * l + t];
                    }
                }
                let mut states = vec![vec![0.0; s]; l + 1];
                for t in 0..l {
                    for k in 0..s {
                        states[t + 1][k] = abar[t][k] * states[t][k] + bbar[t][k] * self.u[row + t];
                    }
                }
                for t in 0..l {
                    let mut acc = 0.0;
                    for k in 0..s {
                        acc += self.c[(bi * s + k) * l + t] * states[t + 1][k];
                    }
                    y[row + t] = acc + self.dsk[di] * self.u[row + t];
                }
            }
        }
        y
    }

    /// Unrolled convolution form: h_t = sum_k (prod_{j=k+1..t} abar_j) bbar_k x_k.
    pub fn closed_form(&self) -> Vec<f64> {
        let (n, d, s, l) = (self.n, self.d, self.s, self.l);
        let mut y = vec![0.0; n * d * l];
        for bi in 0..n {
            for di in 0..d {
                let row = (bi * d + di) * l;
                for t in 0..l {
                    let mut acc = self.dsk[di] * self.u[row + t];
                    for st in 0..s {
                        let a = self.a[di * s + st];
                        let mut h = 0.0;
                        for k in 0..=t {
                            let log_decay: f64 = (k + 1..=t).map(|j| self.delta[row + j] * a).sum();
                            h +=
                                log_decay.exp() * self.delta[row + k] * self.b[(bi * s + st) * l + k] * self.u[row + k];
                        }
                        acc += self.c[(bi * s + st) * l + t] * h;
                    }
                    y[row + t] = acc;
                }
            }
        }
        y
    }
}

/// Linearity of the scan in its input with every other operand frozen:
/// worst relative deviation of `scan(alpha * u)` from `alpha * scan(u)`.
pub fn scan_linearity_error(inst: &ScanInstance, alphas: &[f64]) -> f64 {
    let base = inst.run();
    let mut worst = 0.0f64;
    for &alpha in alphas {
        let scaled = ScanInstance {
            u: inst.u.iter().map(|v| alpha * v).collect(),
            delta: inst.delta.clone(),
            a: inst.a.clone(),
            b: inst.b.clone(),
            c: inst.c.clone(),
            dsk: inst.dsk.clone(),
            ..*inst
        };
        for (g, b) in scaled.run().iter().zip(&base) {
            worst = worst.max((g - alpha * b).abs() / (alpha * b).abs().max(1.0));
        }
    }
    worst
}

pub fn random_mask(rng: &mut ChaCha8Rng, h: usize, w: usize, p: f64) -> BinaryMask {
    BinaryMask::from_fn(h, w, |_, _| rng.gen_bool(p))
}

/// Per-pixel tally written without the library's counting code.
pub fn brute_counts(pred: &BinaryMask, truth: &BinaryMask) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for y in 0..pred.height() {
        for x in 0..pred.width() {
            match (pred.get(y, x) == 1, truth.get(y, x) == 1) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
    }
    c
}

/// `[pre, rec, f1, iou, oa, kc]` from the textbook definitions.
pub fn brute_metrics(c: &ConfusionCounts) -> [f64; 6] {
    let (tp, fp, fn_, tn) = (c.tp as f64, c.fp as f64, c.fn_ as f64, c.tn as f64);
    let n = tp + fp + fn_ + tn;
    let div = |a: f64, b: f64| if b == 0.0 { 0.0 } else { a / b };
    let pre = div(tp, tp + fp);
    let rec = div(tp, tp + fn_);
    let f1 = div(2.0 * pre * rec, pre + rec);
    let iou = div(tp, tp + fp + fn_);
    let oa = (tp + tn) / n;
    let pe = ((tp + fp) * (tp + fn_) + (fn_ + tn) * (fp + tn)) / (n * n);
    let kc = div(oa - pe, 1.0 - pe);
    [pre, rec, f1, iou, oa, kc]
}

/// Jaccard loss of a set of mispredicted pixels: `|M| / |truth ∪ M|`.
pub fn jaccard_set_loss(mispredicted: &[bool], truth: &[f64]) -> f64 {
    let m = mispredicted.iter().filter(|&&b| b).count() as f64;
    let union = mispredicted
        .iter()
        .zip(truth)
        .filter(|(&mi, &t)| mi || t == 1.0)
        .count() as f64;
    if union == 0.0 {
        0.0
    } else {
        m / union
    }
}

/// Lovász extension evaluated from its definition as an average over all
/// level sets: integral over `t` of `J({e > t})`, for errors in `[0, 1]`.
pub fn lovasz_by_level_sets(errors: &[f64], truth: &[f64]) -> f64 {
    let mut levels: Vec<f64> = errors.iter().copied().filter(|&e| e > 0.0).collect();
    levels.push(0.0);
    levels.sort_by(f64::total_cmp);
    levels.dedup();
    let mut total = 0.0;
    for w in levels.windows(2) {
        let set: Vec<bool> = errors.iter().map(|&e| e >= w[1]).collect();
        total += (w[1] - w[0]) * jaccard_set_loss(&set, truth);
    }
    total
}

pub fn tensor(data: Vec<f64>, shape: &[usize]) -> Tensor {
    Tensor::from_vec(data, shape.to_vec()).unwrap()
}

/// Recovers both frames from a fused layout by index arithmetic alone.
/// `dims` is the per-frame `(N, C, H, W)`.
pub fn unfuse(kind: FusionKind, y: &[f64], dims: [usize; 4]) -> (Vec<f64>, Vec<f64>) {
    use FusionKind::*;
    let [n, c, h, w] = dims;
    let mut f1 = Vec::with_capacity(n * c * h * w);
    let mut f2 = Vec::with_capacity(n * c * h * w);
    for b in 0..n {
        for ch in 0..c {
            for r in 0..h {
                for x in 0..w {
                    let (i1, i2) = match kind {
                        Sequential => {
                            let row = ((b * c + ch) * h + r) * 2 * w;
                            (row + x, row + w + x)
                        }
                        Cross => {
                            let row = ((b * c + ch) * h + r) * 2 * w;
                            (row + 2 * x, row + 2 * x + 1)
                        }
                        Parallel => {
                            let plane = |cc: usize| ((b * 2 * c + cc) * h + r) * w + x;
                            (plane(ch), plane(c + ch))
                        }
                        ChannelCross => {
                            let plane = |cc: usize| ((b * 2 * c + cc) * h + r) * w + x;
                            (plane(2 * ch), plane(2 * ch + 1))
                        }
                        Difference => unreachable!("difference is not invertible"),
                    };
                    f1.push(y[i1]);
                    f2.push(y[i2]);
                }
            }
        }
    }
    (f1, f2)
}

fn conv(cin: usize, cout: usize, k: usize, groups: usize, bias: bool) -> usize {
    cout * (cin / groups) * k * k + if bias { cout } else { 0 }
}

fn vss_params(c: usize, s: &SsmConfig) -> usize {
    let inner = c * s.expand;
    let r = s.dt_rank.unwrap_or(inner.div_ceil(16)).max(1);
    let scan = (r + 2 * s.d_state) * inner + inner * r + inner + inner * s.d_state + inner;
    2 * c
        + conv(c, inner, 1, 1, false)
        + conv(inner, inner, 3, inner, true)
        + conv(c, inner, 1, 1, false)
        + 4 * scan
        + conv(inner, c, 1, 1, false)
}

fn stage_params(cin: usize, d: &DecoderConfig) -> usize {
    let mut n = 0;
    for kind in d.fusions.iter() {
        let bin = cin
            * if matches!(kind, FusionKind::Parallel | FusionKind::ChannelCross) {
                2
            } else {
                1
            };
        n += if d.ecr {
            conv(bin, bin, 3, bin, false) + conv(bin, d.width, 1, 1, true)
        } else {
            conv(bin, d.width, 1, 1, true)
        };
        n += vss_params(d.width, &d.ssm);
    }
    let concat = d.width * d.fusions.len();
    if d.ecr {
        n += 2 * concat * (concat / d.cbam_reduction) + 2 * d.cbam_kernel * d.cbam_kernel;
    }
    n + conv(concat, d.width, 1, 1, true)
}

/// Trainable parameter count of a model, from layer shapes alone.
pub fn expected_params(m: &ModelConfig) -> usize {
    let (c, e) = (m.encoder.channels, &m.encoder);
    let mut n = conv(3, c[0], 4, 1, true);
    for i in 0..3 {
        n += conv(c[i], c[i + 1], 2, 1, true);
    }
    for i in 0..4 {
        n += e.depths[i] * vss_params(c[i], &e.ssm);
        n += stage_params(c[i], &m.decoder);
    }
    n + conv(m.decoder.width, 2, 1, 1, true)
}
