use std::cell::Cell;

use rand::Rng;

use crate::error::{Error, Result};
use crate::module::{join, Module, ParamFn};
use crate::nn::{conv2d, ConvSpec};
use crate::tensor::{grad_enabled, Shape, Tensor};

thread_local! {
    static STATE_UPDATES: Cell<u64> = const { Cell::new(0) };
}

/// Number of per-state recurrence updates executed by forward scans on this
/// thread since the last [`reset_state_updates`].
pub fn state_updates() -> u64 {
    STATE_UPDATES.with(Cell::get)
}

pub fn reset_state_updates() {
    STATE_UPDATES.with(|c| c.set(0));
}

/// `(N, S, L)` -> `(N, L, S)` so a token's state vector is contiguous.
fn to_token_major(src: &[f64], n: usize, s: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        for si in 0..s {
            for t in 0..l {
                out[(b * l + t) * s + si] = src[(b * s + si) * l + t];
            }
        }
    }
    out
}

fn to_state_major(src: &[f64], n: usize, s: usize, l: usize) -> Vec<f64> {
    let mut out = vec![0.0; src.len()];
    for b in 0..n {
        for t in 0..l {
            for si in 0..s {
                out[(b * s + si) * l + t] = src[(b * l + t) * s + si];
            }
        }
    }
    out
}

/// Selective state-space scan with per-token discretization.
///
/// Shapes: `u`, `delta`: `(N, D, L)`; `a`: `(D, S)`; `b`, `c`: `(N, S, L)`;
/// `d_skip`: `(D)`. For each channel `d` and state `s`:
///
/// ```text
/// h_t = exp(delta_t * a) * h_{t-1} + (delta_t * b_t) * u_t,   h_{-1} = 0
/// y_t = sum_s c_t * h_t + d_skip * u_t
/// ```
pub fn selective_scan(
    u: &Tensor,
    delta: &Tensor,
    a: &Tensor,
    b: &Tensor,
    c: &Tensor,
    d_skip: &Tensor,
) -> Result<Tensor> {
    let (n, d, l) = match u.dims() {
        &[n, d, l] => (n, d, l),
        _ => return Err(Error::dim(format!("scan input must be (N, D, L), got {}", u.shape()))),
    };
    if l == 0 {
        return Err(Error::dim("scan over an empty sequence"));
    }
    let s = match a.dims() {
        &[ad, s] if ad == d => s,
        _ => return Err(Error::dim(format!("scan A must be ({d}, S), got {}", a.shape()))),
    };
    if delta.shape() != u.shape() || b.dims() != [n, s, l] || c.dims() != [n, s, l] || d_skip.dims() != [d] {
        return Err(Error::dim(format!(
            "scan shapes: u {} delta {} B {} C {} D {}",
            u.shape(),
            delta.shape(),
            b.shape(),
            c.shape(),
            d_skip.shape()
        )));
    }
    for (name, t) in [("u", u), ("delta", delta), ("A", a), ("B", b), ("C", c), ("D", d_skip)] {
        if !t.all_finite() {
            return Err(Error::Domain(format!("scan parameter {name} is not finite")));
        }
    }

    let (ud, dd, ad, sd) = (u.data(), delta.data(), a.data(), d_skip.data());
    let bt = to_token_major(b.data(), n, s, l);
    let ct = to_token_major(c.data(), n, s, l);
    let track = grad_enabled() && [u, delta, a, b, c, d_skip].iter().any(|t| t.requires_grad());
    // Per-step decays and states, kept for the backward pass.
    let keep = if track { n * d * l * s } else { 0 };
    let mut decays = vec![0.0; keep];
    let mut states = vec![0.0; keep];
    let mut out = vec![0.0; n * d * l];
    let mut h = vec![0.0; s];
    for bi in 0..n {
        for di in 0..d {
            h.fill(0.0);
            let row = (bi * d + di) * l;
            let arow = &ad[di * s..(di + 1) * s];
            for t in 0..l {
                let (dt, x) = (dd[row + t], ud[row + t]);
                let tok = (bi * l + t) * s;
                let (bv, cv) = (&bt[tok..tok + s], &ct[tok..tok + s]);
                let mut y = 0.0;
                for si in 0..s {
                    let decay = (dt * arow[si]).exp();
                    h[si] = decay * h[si] + (dt * bv[si]) * x;
                    y += cv[si] * h[si];
                    if track {
                        decays[(row + t) * s + si] = decay;
                    }
                }
                out[row + t] = y + sd[di] * x;
                if track {
                    states[(row + t) * s..(row + t + 1) * s].copy_from_slice(&h);
                }
            }
        }
    }
    STATE_UPDATES.with(|c| c.set(c.get() + (n * d * l * s) as u64));

    let saved = [u.clone(), delta.clone(), a.clone(), d_skip.clone()];
    Tensor::from_op(
        "selective_scan",
        out,
        Shape::new([n, d, l]),
        &[u, delta, a, b, c, d_skip],
        move |ctx| {
            let [u, delta, a, d_skip] = &saved;
            let (ud, dd, ad, sd) = (u.data(), delta.data(), a.data(), d_skip.data());
            let g = ctx.grad;
            let mut gu = vec![0.0; ud.len()];
            let mut gdelta = vec![0.0; dd.len()];
            let mut ga = vec![0.0; ad.len()];
            let mut gb = vec![0.0; bt.len()];
            let mut gc = vec![0.0; ct.len()];
            let mut gd = vec![0.0; sd.len()];
            let mut dh = vec![0.0; s];
            for bi in 0..n {
                for di in 0..d {
                    let row = (bi * d + di) * l;
                    let arow = &ad[di * s..(di + 1) * s];
                    dh.fill(0.0);
                    for t in (0..l).rev() {
                        let (dt, x) = (dd[row + t], ud[row + t]);
                        let gy = g[row + t];
                        let tok = (bi * l + t) * s;
                        let k = (row + t) * s;
                        gd[di] += gy * x;
                        let mut gx = gy * sd[di];
                        let mut gdt = 0.0;
                        for si in 0..s {
                            gc[tok + si] += gy * states[k + si];
                            let gh = dh[si] + gy * ct[tok + si];
                            let decay = decays[k + si];
                            let prev = if t > 0 { states[k - s + si] } else { 0.0 };
                            let gdecay = gh * prev * decay;
                            gdt += gdecay * arow[si] + gh * bt[tok + si] * x;
                            ga[di * s + si] += gdecay * dt;
                            gb[tok + si] += gh * dt * x;
                            gx += gh * dt * bt[tok + si];
                            dh[si] = gh * decay;
                        }
                        gu[row + t] += gx;
                        gdelta[row + t] = gdt;
                    }
                }
            }
            vec![
                Some(gu),
                Some(gdelta),
                Some(ga),
                Some(to_state_major(&gb, n, s, l)),
                Some(to_state_major(&gc, n, s, l)),
                Some(gd),
            ]
        },
    )
}

/// Inverse softplus.
fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SsmConfig {
    pub d_state: usize,
    pub expand: usize,
    /// Rank of the step-size projection; `None` means `ceil(C/16)`.
    pub dt_rank: Option<usize>,
    pub dt_min: f64,
    pub dt_max: f64,
}

impl Default for SsmConfig {
    fn default() -> Self {
        Self {
            d_state: 16,
            expand: 2,
            dt_rank: None,
            dt_min: 0.01,
            dt_max: 0.1,
        }
    }
}

impl SsmConfig {
    pub fn dt_rank_for(&self, channels: usize) -> usize {
        self.dt_rank.unwrap_or_else(|| channels.div_ceil(16)).max(1)
    }
}

/// Projections producing the per-token step size, input and output maps
/// for one scan direction, plus the state matrix and skip term.
#[derive(Clone, Debug)]
pub struct ScanParams {
    /// `(R + 2S, D, 1, 1)`: token -> (step rank features, B, C).
    pub x_proj: Tensor,
    /// `(D, R, 1, 1)`
    pub dt_proj: Tensor,
    /// `(D)`
    pub dt_bias: Tensor,
    /// `(D, S)`; the state matrix is `-exp(a_log)`.
    pub a_log: Tensor,
    /// `(D)`
    pub d_skip: Tensor,
}

impl ScanParams {
    pub fn init<R: Rng + ?Sized>(channels: usize, cfg: &SsmConfig, rng: &mut R) -> Self {
        let (d, s) = (channels, cfg.d_state);
        let r = cfg.dt_rank_for(channels);
        let bx = 1.0 / (d as f64).sqrt();
        let br = 1.0 / (r as f64).sqrt();
        let dt_bias = (0..d)
            .map(|_| {
                let log_dt = rng.gen_range(cfg.dt_min.ln()..=cfg.dt_max.ln());
                softplus_inv(log_dt.exp())
            })
            .collect();
        let a_log = (0..d).flat_map(|_| (1..=s).map(|k| (k as f64).ln())).collect();
        Self {
            x_proj: Tensor::uniform([r + 2 * s, d, 1, 1], -bx, bx, rng).into_leaf(true),
            dt_proj: Tensor::uniform([d, r, 1, 1], -br, br, rng).into_leaf(true),
            dt_bias: Tensor::from_vec(dt_bias, [d]).expect("shape").into_leaf(true),
            a_log: Tensor::from_vec(a_log, [d, s]).expect("shape").into_leaf(true),
            d_skip: Tensor::ones([d]).into_leaf(true),
        }
    }

    pub fn channels(&self) -> usize {
        self.a_log.dims()[0]
    }

    pub fn d_state(&self) -> usize {
        self.a_log.dims()[1]
    }

    pub fn dt_rank(&self) -> usize {
        self.dt_proj.dims()[1]
    }

    /// Scans a `(N, D, L)` sequence, deriving step size, B and C from each
    /// token.
    pub fn forward_seq(&self, x: &Tensor) -> Result<Tensor> {
        let (n, d, l) = match x.dims() {
            &[n, d, l] if d == self.channels() => (n, d, l),
            _ => {
                return Err(Error::dim(format!(
                    "scan expects (N, {}, L), got {}",
                    self.channels(),
                    x.shape()
                )))
            }
        };
        let (r, s) = (self.dt_rank(), self.d_state());
        let x4 = x.reshape([n, d, l, 1])?;
        let proj = conv2d(&x4, &self.x_proj, None, ConvSpec::default())?;
        let dt_low = proj.narrow(1, 0, r)?;
        let b = proj.narrow(1, r, s)?.reshape([n, s, l])?;
        let c = proj.narrow(1, r + s, s)?.reshape([n, s, l])?;
        let delta = conv2d(&dt_low, &self.dt_proj, Some(&self.dt_bias), ConvSpec::default())?
            .softplus()?
            .reshape([n, d, l])?;
        let a = self.a_log.exp()?.neg()?;
        selective_scan(x, &delta, &a, &b, &c, &self.d_skip)
    }
}

impl Module for ScanParams {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        f(&join(prefix, "x_proj"), &mut self.x_proj, true);
        f(&join(prefix, "dt_proj"), &mut self.dt_proj, true);
        f(&join(prefix, "dt_bias"), &mut self.dt_bias, false);
        f(&join(prefix, "a_log"), &mut self.a_log, false);
        f(&join(prefix, "d_skip"), &mut self.d_skip, false);
    }
}

/// The four raster orders used by the 2-D scan.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ScanDirection {
    RowForward,
    RowBackward,
    ColumnForward,
    ColumnBackward,
}

impl ScanDirection {
    pub const ALL: [ScanDirection; 4] = [
        ScanDirection::RowForward,
        ScanDirection::RowBackward,
        ScanDirection::ColumnForward,
        ScanDirection::ColumnBackward,
    ];

    /// Pixel index (row-major) visited at each step of this direction.
    pub fn order(self, h: usize, w: usize) -> Vec<usize> {
        let hw = h * w;
        let column = |t: usize| (t % h) * w + t / h;
        match self {
            ScanDirection::RowForward => (0..hw).collect(),
            ScanDirection::RowBackward => (0..hw).rev().collect(),
            ScanDirection::ColumnForward => (0..hw).map(column).collect(),
            ScanDirection::ColumnBackward => (0..hw).rev().map(column).collect(),
        }
    }

    /// `(N, D, H, W)` -> `(N, D, H*W)` in this direction's token order.
    pub fn flatten(self, x: &Tensor) -> Result<Tensor> {
        let (n, d, h, w) = x.dims4()?;
        let order = self.order(h, w);
        let hw = h * w;
        let mut src = Vec::with_capacity(n * d * hw);
        for plane in 0..n * d {
            src.extend(order.iter().map(|&p| plane * hw + p));
        }
        x.gather("scan_flatten", Shape::new([n, d, hw]), src)
    }

    /// Inverse of [`ScanDirection::flatten`].
    pub fn unflatten(self, y: &Tensor, h: usize, w: usize) -> Result<Tensor> {
        let (n, d, hw) = match y.dims() {
            &[n, d, l] if l == h * w => (n, d, l),
            _ => return Err(Error::dim(format!("cannot unflatten {} to {h}x{w}", y.shape()))),
        };
        let mut step_of = vec![0; hw];
        for (t, p) in self.order(h, w).into_iter().enumerate() {
            step_of[p] = t;
        }
        let mut src = Vec::with_capacity(n * d * hw);
        for plane in 0..n * d {
            src.extend(step_of.iter().map(|&t| plane * hw + t));
        }
        y.gather("scan_unflatten", Shape::new([n, d, h, w]), src)
    }
}

/// Runs one selective scan per direction and sums the re-rastered outputs.
pub fn cross_scan_2d(x: &Tensor, params: &[ScanParams]) -> Result<Tensor> {
    let (_, _, h, w) = x.dims4()?;
    if params.len() != 4 {
        return Err(Error::Config(format!(
            "cross scan needs 4 direction parameter sets, got {}",
            params.len()
        )));
    }
    let mut acc: Option<Tensor> = None;
    for (dir, p) in ScanDirection::ALL.iter().zip(params) {
        let y = dir.unflatten(&p.forward_seq(&dir.flatten(x)?)?, h, w)?;
        acc = Some(match acc {
            None => y,
            Some(a) => a.add(&y)?,
        });
    }
    Ok(acc.expect("four directions"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(v: &[f64], shape: &[usize]) -> Tensor {
        Tensor::from_vec(v.to_vec(), shape).unwrap()
    }

    #[test]
    fn frozen_scalar_two_steps() {
        // A = ln(0.5), delta = 1 -> decay 0.5; B = 1 -> B-bar = 1.
        let y = selective_scan(
            &t(&[1.0, 1.0], &[1, 1, 2]),
            &t(&[1.0, 1.0], &[1, 1, 2]),
            &t(&[0.5f64.ln()], &[1, 1]),
            &t(&[1.0, 1.0], &[1, 1, 2]),
            &t(&[1.0, 1.0], &[1, 1, 2]),
            &t(&[0.0], &[1]),
        )
        .unwrap();
        assert_eq!(y.data()[0], 1.0);
        assert!((y.data()[1] - 1.5).abs() < 1e-15);
    }

    #[test]
    fn zero_input_zero_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = ScanParams::init(
            4,
            &SsmConfig {
                d_state: 3,
                ..Default::default()
            },
            &mut rng,
        );
        let y = p.forward_seq(&Tensor::zeros([2, 4, 7])).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn counts_state_updates() {
        reset_state_updates();
        let u = Tensor::zeros([2, 3, 5]);
        let b = Tensor::zeros([2, 4, 5]);
        selective_scan(&u, &u, &Tensor::zeros([3, 4]), &b, &b, &Tensor::zeros([3])).unwrap();
        assert_eq!(state_updates(), 2 * 3 * 5 * 4);
    }

    #[test]
    fn rejects_bad_shapes_and_values() {
        let u = Tensor::zeros([1, 2, 3]);
        let b = Tensor::zeros([1, 4, 3]);
        let a = Tensor::zeros([2, 4]);
        let dsk = Tensor::zeros([2]);
        assert!(matches!(
            selective_scan(&u, &u, &Tensor::zeros([3, 4]), &b, &b, &dsk),
            Err(Error::Dimension(_))
        ));
        let nan_a = Tensor::full([2, 4], f64::NAN);
        assert!(matches!(
            selective_scan(&u, &u, &nan_a, &b, &b, &dsk),
            Err(Error::Domain(_))
        ));
        assert!(selective_scan(&u, &u, &a, &b, &b, &dsk).is_ok());
    }

    #[test]
    fn directions_round_trip() {
        let x = Tensor::from_vec((0..24).map(f64::from).collect(), [1, 2, 3, 4]).unwrap();
        for dir in ScanDirection::ALL {
            let back = dir.unflatten(&dir.flatten(&x).unwrap(), 3, 4).unwrap();
            assert_eq!(back.data(), x.data());
        }
        let col = ScanDirection::ColumnForward.flatten(&x).unwrap();
        assert_eq!(&col.data()[..4], &[0.0, 4.0, 8.0, 1.0]);
    }

    #[test]
    fn dt_bias_inverts_softplus() {
        for y in [0.001, 0.01, 0.1] {
            let x = softplus_inv(y);
            assert!((crate::tensor::Tensor::scalar(x).softplus().unwrap().item().unwrap() - y).abs() < 1e-15);
        }
    }
}
