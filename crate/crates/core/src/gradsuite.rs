//! Finite-difference gradient checks over every differentiable op, the
//! scan, the losses and the assembled model.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fusion::{fold_back, FusionKind};
use crate::loss::{cross_entropy, dice_loss, lovasz_hinge, score_difference, total_loss, LossWeights, LovaszReduction};
use crate::model::{ChangeDetector, ModelConfig, Preset};
use crate::module::Module;
use crate::nn::{
    channel_pools, conv2d, global_pools, layer_norm, upsample_bilinear, upsample_nearest, CbamParams, ConvSpec, DsConv,
};
use crate::ssm::{cross_scan_2d, selective_scan, ScanDirection, ScanParams, SsmConfig, VssBlock};
use crate::tensor::gradcheck::{grad_check_many, GradCheckConfig, GradCheckReport};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CheckGroup {
    Tensor,
    Ssm,
    Loss,
    Model,
}

impl CheckGroup {
    pub const ALL: [CheckGroup; 4] = [CheckGroup::Tensor, CheckGroup::Ssm, CheckGroup::Loss, CheckGroup::Model];

    pub fn name(self) -> &'static str {
        match self {
            CheckGroup::Tensor => "tensor",
            CheckGroup::Ssm => "ssm",
            CheckGroup::Loss => "loss",
            CheckGroup::Model => "model",
        }
    }

    /// Tolerance the group is held to.
    pub fn rtol(self) -> f64 {
        match self {
            CheckGroup::Model => 1e-3,
            _ => 1e-4,
        }
    }
}

impl fmt::Display for CheckGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses `all` or a single group name.
pub fn parse_groups(s: &str) -> Result<Vec<CheckGroup>> {
    if s == "all" {
        return Ok(CheckGroup::ALL.to_vec());
    }
    Ok(vec![s.parse()?])
}

impl FromStr for CheckGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CheckGroup::ALL
            .into_iter()
            .find(|g| g.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown check group `{s}` (all|tensor|ssm|loss|model)")))
    }
}

#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub group: CheckGroup,
    pub name: &'static str,
    pub report: GradCheckReport,
}

type CheckFn = fn(&mut ChaCha8Rng, &GradCheckConfig) -> Result<GradCheckReport>;

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::randn(shape.to_vec(), 1.0, rng)
}

fn positive(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::uniform(shape.to_vec(), 0.5, 2.0, rng)
}

/// `sum(y * r)` with a fixed random `r`, so every output entry carries a
/// distinct upstream gradient.
fn probe(y: &Tensor, seed: u64) -> Result<Tensor> {
    let r = Tensor::randn(y.shape().clone(), 1.0, &mut ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5));
    y.mul(&r)?.sum_all()
}

fn check<F>(inputs: &[Tensor], cfg: &GradCheckConfig, f: F) -> Result<GradCheckReport>
where
    F: Fn(&[Tensor]) -> Result<Tensor>,
{
    grad_check_many(|x| probe(&f(x)?, 7), inputs, cfg)
}

/// Checks `f(module)` against every parameter of `module`.
pub fn module_grad_check<M, F>(module: &M, f: F, cfg: &GradCheckConfig) -> Result<GradCheckReport>
where
    M: Module,
    F: Fn(&M) -> Result<Tensor>,
{
    let params: Vec<Tensor> = module.named_params().into_iter().map(|(_, t, _)| t).collect();
    grad_check_many(
        |xs| {
            let mut m = module.clone();
            let mut it = xs.iter();
            m.visit_params("", &mut |_, t, _| {
                *t = it.next().expect("one input per parameter").clone()
            });
            f(&m)
        },
        &params,
        cfg,
    )
}

fn unary(
    rng: &mut ChaCha8Rng,
    cfg: &GradCheckConfig,
    op: fn(&Tensor) -> Result<Tensor>,
    pos: bool,
) -> Result<GradCheckReport> {
    let x = if pos {
        positive(rng, &[2, 3, 4])
    } else {
        randn(rng, &[2, 3, 4])
    };
    check(&[x], cfg, |x| op(&x[0]))
}

fn binary(
    rng: &mut ChaCha8Rng,
    cfg: &GradCheckConfig,
    op: fn(&Tensor, &Tensor) -> Result<Tensor>,
) -> Result<GradCheckReport> {
    // The second operand is expanded along the middle axis, plus a scalar.
    let a = positive(rng, &[2, 3, 4]);
    let b = positive(rng, &[2, 1, 4]);
    let s = positive(rng, &[1]);
    check(&[a, b, s], cfg, |x| {
        let y = op(&x[0], &x[1].expand([2, 3, 4])?)?;
        op(&y, &x[2])
    })
}

const TENSOR_CHECKS: &[(&str, CheckFn)] = &[
    ("neg", |r, c| unary(r, c, Tensor::neg, false)),
    ("abs", |r, c| unary(r, c, Tensor::abs, false)),
    ("exp", |r, c| unary(r, c, Tensor::exp, false)),
    ("log", |r, c| unary(r, c, Tensor::log, true)),
    ("sigmoid", |r, c| unary(r, c, Tensor::sigmoid, false)),
    ("relu", |r, c| unary(r, c, Tensor::relu, false)),
    ("silu", |r, c| unary(r, c, Tensor::silu, false)),
    ("softplus", |r, c| unary(r, c, Tensor::softplus, false)),
    ("sqrt", |r, c| unary(r, c, Tensor::sqrt, true)),
    ("clamp", |r, c| unary(r, c, |x| x.clamp(-0.5, 0.5), false)),
    ("scalar_ops", |r, c| {
        unary(
            r,
            c,
            |x| x.mul_scalar(1.5)?.add_scalar(0.3)?.rsub_scalar(2.0)?.powf(3.0),
            false,
        )
    }),
    ("add", |r, c| binary(r, c, Tensor::add)),
    ("sub", |r, c| binary(r, c, Tensor::sub)),
    ("mul", |r, c| binary(r, c, Tensor::mul)),
    ("div", |r, c| binary(r, c, Tensor::div)),
    ("pow", |r, c| binary(r, c, Tensor::pow)),
    ("sum_mean_axes", |r, c| {
        let x = randn(r, &[2, 3, 4]);
        check(&[x], c, |x| x[0].sum_axes(&[1])?.add(&x[0].mean_axes(&[1])?))
    }),
    ("max_axes", |r, c| {
        let x = randn(r, &[2, 3, 4]);
        check(&[x], c, |x| x[0].max_axes(&[2]))
    }),
    ("mean_all", |r, c| {
        let x = randn(r, &[3, 4]);
        check(&[x], c, |x| x[0].powf(2.0)?.mean_all())
    }),
    ("expand", |r, c| {
        let x = randn(r, &[2, 1, 3]);
        check(&[x], c, |x| x[0].expand([2, 4, 3]))
    }),
    ("reshape_permute", |r, c| {
        let x = randn(r, &[2, 3, 4]);
        check(&[x], c, |x| x[0].reshape([6, 4])?.permute(&[1, 0]))
    }),
    ("narrow_flip", |r, c| {
        let x = randn(r, &[2, 3, 7]);
        check(&[x], c, |x| x[0].narrow_strided(2, 1, 3, 2)?.flip(1))
    }),
    ("concat", |r, c| {
        let (a, b) = (randn(r, &[2, 3, 2]), randn(r, &[2, 1, 2]));
        check(&[a, b], c, |x| Tensor::concat(&[&x[0], &x[1]], 1))
    }),
    ("interleave", |r, c| {
        let (a, b) = (randn(r, &[2, 3, 2]), randn(r, &[2, 3, 2]));
        check(&[a, b], c, |x| {
            let y = Tensor::interleave(&x[0], &x[1], 2)?;
            let (p, q) = y.deinterleave(2)?;
            y.sum_axes(&[2])?.add(&p.mul(&q)?.sum_axes(&[2])?)
        })
    }),
    ("conv2d", |r, c| {
        let (x, w, b) = (randn(r, &[2, 3, 5, 5]), randn(r, &[4, 3, 3, 3]), randn(r, &[4]));
        let spec = ConvSpec {
            stride: 1,
            padding: 1,
            groups: 1,
        };
        check(&[x, w, b], c, |x| conv2d(&x[0], &x[1], Some(&x[2]), spec))
    }),
    ("conv2d_strided", |r, c| {
        let (x, w) = (randn(r, &[1, 2, 8, 8]), randn(r, &[3, 2, 2, 2]));
        let spec = ConvSpec {
            stride: 2,
            padding: 0,
            groups: 1,
        };
        check(&[x, w], c, |x| conv2d(&x[0], &x[1], None, spec))
    }),
    ("conv2d_grouped", |r, c| {
        let (x, w) = (randn(r, &[2, 4, 5, 5]), randn(r, &[4, 1, 3, 3]));
        let spec = ConvSpec {
            stride: 1,
            padding: 1,
            groups: 4,
        };
        check(&[x, w], c, |x| conv2d(&x[0], &x[1], None, spec))
    }),
    ("conv2d_pointwise", |r, c| {
        let (x, w, b) = (randn(r, &[2, 3, 4, 4]), randn(r, &[5, 3, 1, 1]), randn(r, &[5]));
        check(&[x, w, b], c, |x| {
            conv2d(&x[0], &x[1], Some(&x[2]), ConvSpec::default())
        })
    }),
    ("dsconv", |r, c| {
        let m = DsConv::init(3, 4, r)?;
        let x = randn(r, &[1, 3, 5, 5]);
        let mut inputs = vec![x];
        inputs.extend(m.named_params().into_iter().map(|(_, t, _)| t));
        check(&inputs, c, |x| {
            crate::nn::dsconv(
                &x[0],
                &with_weights(&m.depthwise, &x[1..2]),
                &with_weights(&m.pointwise, &x[2..4]),
            )
        })
    }),
    ("layer_norm", |r, c| {
        let (x, g, b) = (randn(r, &[2, 4, 3, 3]), randn(r, &[4]), randn(r, &[4]));
        check(&[x, g, b], c, |x| layer_norm(&x[0], &x[1], &x[2], 1e-5))
    }),
    ("upsample_nearest", |r, c| {
        let x = randn(r, &[1, 2, 3, 3]);
        check(&[x], c, |x| upsample_nearest(&x[0], 2))
    }),
    ("upsample_bilinear", |r, c| {
        let x = randn(r, &[1, 2, 3, 3]);
        check(&[x], c, |x| upsample_bilinear(&x[0], 4))
    }),
    ("pools", |r, c| {
        let x = randn(r, &[2, 3, 3, 3]);
        check(&[x], c, |x| {
            let (a, m) = global_pools(&x[0])?;
            let (ca, cm) = channel_pools(&x[0])?;
            probe(&a.add(&m)?, 1)?.add(&probe(&ca.add(&cm)?, 2)?)
        })
    }),
    ("cbam", |r, c| {
        let cb = CbamParams::init(4, 2, 3, r)?;
        let x = randn(r, &[2, 4, 4, 4]);
        let mut inputs = vec![x];
        inputs.extend([cb.mlp_w1.clone(), cb.mlp_w2.clone(), cb.spatial_kernel.clone()]);
        check(&inputs, c, |x| {
            let m = CbamParams {
                mlp_w1: x[1].clone(),
                mlp_w2: x[2].clone(),
                spatial_kernel: x[3].clone(),
                reduction: cb.reduction,
            };
            m.forward(&x[0])
        })
    }),
    ("fusions", |r, c| {
        let (a, b) = (randn(r, &[1, 2, 3, 2]), randn(r, &[1, 2, 3, 2]));
        check(&[a, b], c, |x| {
            let mut acc = Tensor::scalar(0.0);
            for (i, k) in FusionKind::ALL.into_iter().enumerate() {
                let mut y = k.apply(&x[0], &x[1])?;
                if k.doubles_width() {
                    y = fold_back(&y.mul(&y)?, k)?;
                }
                acc = acc.add(&probe(&y, i as u64)?)?;
            }
            Ok(acc)
        })
    }),
];

fn with_weights(p: &crate::nn::Conv2dParams, ws: &[Tensor]) -> crate::nn::Conv2dParams {
    let mut q = p.clone();
    q.weight = ws[0].clone();
    if q.bias.is_some() {
        q.bias = Some(ws[1].clone());
    }
    q
}

fn scan_instance(r: &mut ChaCha8Rng) -> [Tensor; 6] {
    let (n, d, l, s) = (2, 3, 5, 2);
    [
        randn(r, &[n, d, l]),
        Tensor::uniform([n, d, l], 0.05, 0.5, r),
        Tensor::uniform([d, s], -1.5, -0.2, r),
        randn(r, &[n, s, l]),
        randn(r, &[n, s, l]),
        randn(r, &[d]),
    ]
}

const SSM_CHECKS: &[(&str, CheckFn)] = &[
    ("selective_scan", |r, c| {
        let inputs = scan_instance(r);
        check(&inputs, c, |x| selective_scan(&x[0], &x[1], &x[2], &x[3], &x[4], &x[5]))
    }),
    ("scan_projections", |r, c| {
        let p = ScanParams::init(
            4,
            &SsmConfig {
                d_state: 3,
                ..Default::default()
            },
            r,
        );
        let x = randn(r, &[1, 4, 6]);
        module_grad_check(&p, |p| probe(&p.forward_seq(&x)?, 3), c)
    }),
    ("scan_directions", |r, c| {
        let x = randn(r, &[1, 2, 3, 4]);
        check(&[x], c, |x| {
            let mut acc = Tensor::scalar(0.0);
            for (i, d) in ScanDirection::ALL.into_iter().enumerate() {
                let seq = d.flatten(&x[0])?;
                acc = acc.add(&probe(&d.unflatten(&seq.mul(&seq)?, 3, 4)?, i as u64)?)?;
            }
            Ok(acc)
        })
    }),
    ("cross_scan_2d", |r, c| {
        let cfg = SsmConfig {
            d_state: 2,
            ..Default::default()
        };
        let params: Vec<ScanParams> = (0..4).map(|_| ScanParams::init(2, &cfg, r)).collect();
        let x = randn(r, &[1, 2, 3, 3]);
        check(&[x], c, |x| cross_scan_2d(&x[0], &params))
    }),
    ("vss_block", |r, c| {
        let block = VssBlock::init(
            4,
            &SsmConfig {
                d_state: 2,
                ..Default::default()
            },
            r,
        )?;
        let x = randn(r, &[1, 4, 3, 3]);
        let loose = GradCheckConfig {
            rtol: c.rtol.max(1e-3),
            ..c.clone()
        };
        module_grad_check(&block, |b| probe(&b.forward(&x)?, 4), &loose)
    }),
];

fn loss_inputs(r: &mut ChaCha8Rng) -> (Tensor, Tensor) {
    let logits = Tensor::randn([2, 2, 3, 4], 1.5, r);
    let target: Vec<f64> = (0..24).map(|_| f64::from(r.gen_bool(0.4))).collect();
    (logits, Tensor::from_vec(target, [2, 3, 4]).expect("target shape"))
}

const LOSS_CHECKS: &[(&str, CheckFn)] = &[
    ("cross_entropy", |r, c| {
        let (l, t) = loss_inputs(r);
        grad_check_many(|x| cross_entropy(&x[0], &t), &[l], c)
    }),
    ("dice", |r, c| {
        let (_, t) = loss_inputs(r);
        let scores = randn(r, &[2, 3, 4]);
        grad_check_many(|x| dice_loss(&x[0].sigmoid()?, &t, 1e-6), &[scores], c)
    }),
    ("lovasz_per_image", |r, c| {
        let (l, t) = loss_inputs(r);
        grad_check_many(
            |x| lovasz_hinge(&score_difference(&x[0])?, &t, LovaszReduction::PerImage),
            &[l],
            c,
        )
    }),
    ("lovasz_batch", |r, c| {
        let (l, t) = loss_inputs(r);
        grad_check_many(
            |x| lovasz_hinge(&score_difference(&x[0])?, &t, LovaszReduction::Batch),
            &[l],
            c,
        )
    }),
    ("total_loss", |r, c| {
        let (l, t) = loss_inputs(r);
        grad_check_many(
            |x| Ok(total_loss(&x[0], &t, &LossWeights::default(), LovaszReduction::PerImage)?.total),
            &[l],
            c,
        )
    }),
];

/// Full tiny network at 32x32 with respect to both images and a sample of
/// entries from every parameter tensor.
fn model_check(r: &mut ChaCha8Rng, c: &GradCheckConfig) -> Result<GradCheckReport> {
    let model = ChangeDetector::init(ModelConfig::preset(Preset::Tiny), r)?;
    let pre = Tensor::uniform([1, 3, 32, 32], 0.0, 1.0, r);
    let post = Tensor::uniform([1, 3, 32, 32], 0.0, 1.0, r);
    let target: Vec<f64> = (0..32 * 32).map(|i| f64::from((i / 32 + i % 32) % 7 < 3)).collect();
    let target = Tensor::from_vec(target, [1, 32, 32])?;
    let mut inputs = vec![pre, post];
    inputs.extend(model.named_params().into_iter().map(|(_, t, _)| t));
    let cfg = GradCheckConfig {
        max_entries_per_input: Some(c.max_entries_per_input.unwrap_or(2)),
        ..c.clone()
    };
    grad_check_many(
        |x| {
            let mut m = model.clone();
            let mut it = x[2..].iter();
            m.visit_params("", &mut |_, t, _| *t = it.next().expect("parameter").clone());
            let logits = m.forward(&x[0], &x[1])?;
            Ok(total_loss(&logits, &target, &LossWeights::default(), LovaszReduction::PerImage)?.total)
        },
        &inputs,
        &cfg,
    )
}

/// Runs the checks of `groups`, reporting each outcome as it completes.
pub fn run_grad_suite(
    groups: &[CheckGroup],
    seed: u64,
    mut on_result: impl FnMut(&CheckOutcome),
) -> Result<Vec<CheckOutcome>> {
    let mut out = Vec::new();
    for &group in groups {
        let cfg = GradCheckConfig {
            seed,
            ..GradCheckConfig::with_rtol(group.rtol())
        };
        let cases: Vec<(&'static str, CheckFn)> = match group {
            CheckGroup::Tensor => TENSOR_CHECKS.to_vec(),
            CheckGroup::Ssm => SSM_CHECKS.to_vec(),
            CheckGroup::Loss => LOSS_CHECKS.to_vec(),
            CheckGroup::Model => vec![("tiny_model", model_check as CheckFn)],
        };
        for (i, (name, f)) in cases.into_iter().enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let report = f(&mut rng, &cfg)?;
            let outcome = CheckOutcome { group, name, report };
            on_result(&outcome);
            out.push(outcome);
        }
    }
    Ok(out)
}
