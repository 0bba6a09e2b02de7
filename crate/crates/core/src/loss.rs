//! Segmentation losses over 2-class change logits.

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

pub const PROB_EPS: f64 = 1e-7;
pub const DICE_SMOOTH: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub ce: f64,
    pub lovasz: f64,
    pub dice: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            ce: 1.0,
            lovasz: 0.5,
            dice: 0.35,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if [self.ce, self.lovasz, self.dice]
            .iter()
            .any(|w| !(w.is_finite() && *w >= 0.0))
        {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum LovaszReduction {
    #[default]
    PerImage,
    Batch,
}

/// `(N, 2, H, W)` logits -> `(N, H, W)` score difference `l1 - l0`.
pub fn score_difference(logits: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = logits.dims4()?;
    if c != 2 {
        return Err(Error::dim(format!("expected 2-class logits, got {c} channels")));
    }
    logits
        .narrow(1, 1, 1)?
        .sub(&logits.narrow(1, 0, 1)?)?
        .reshape([n, h, w])
}

/// Two-way softmax probability of the change class, `(N, H, W)`.
pub fn change_probability(logits: &Tensor) -> Result<Tensor> {
    score_difference(logits)?.sigmoid()
}

fn check_targets(pred: &Tensor, target: &Tensor) -> Result<()> {
    if pred.shape() != target.shape() {
        return Err(Error::dim(format!(
            "prediction {} and target {} differ",
            pred.shape(),
            target.shape()
        )));
    }
    if target.data().iter().any(|&v| v != 0.0 && v != 1.0) {
        return Err(Error::Data("targets must be 0 or 1".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy of the change probability, clamped to
/// `[PROB_EPS, 1 - PROB_EPS]`.
pub fn cross_entropy(logits: &Tensor, target: &Tensor) -> Result<Tensor> {
    let p = change_probability(logits)?.clamp(PROB_EPS, 1.0 - PROB_EPS)?;
    check_targets(&p, target)?;
    let pos = target.mul(&p.log()?)?;
    let neg = target.rsub_scalar(1.0)?.mul(&p.rsub_scalar(1.0)?.log()?)?;
    pos.add(&neg)?.mean_all()?.neg()
}

/// `1 - (2 sum(y p) + smooth) / (sum(y) + sum(p) + smooth)` over the batch.
pub fn dice_loss(prob: &Tensor, target: &Tensor, smooth: f64) -> Result<Tensor> {
    check_targets(prob, target)?;
    if smooth < 0.0 {
        return Err(Error::Domain(format!("dice smoothing must be >= 0, got {smooth}")));
    }
    let inter = prob.mul(target)?.sum_all()?.mul_scalar(2.0)?.add_scalar(smooth)?;
    let denom = prob.sum_all()?.add_scalar(target.data().iter().sum::<f64>() + smooth)?;
    inter.div(&denom)?.rsub_scalar(1.0)
}

/// Lovász extension weights for ground truth ordered by decreasing error.
fn jaccard_weights(sorted_gt: &[f64]) -> Vec<f64> {
    let total: f64 = sorted_gt.iter().sum();
    let mut cum_pos = 0.0;
    let mut cum_neg = 0.0;
    let mut prev = 0.0;
    sorted_gt
        .iter()
        .map(|&y| {
            cum_pos += y;
            cum_neg += 1.0 - y;
            let jac = 1.0 - (total - cum_pos) / (total + cum_neg);
            let g = jac - prev;
            prev = jac;
            g
        })
        .collect()
}

/// Hinge errors, their descending order (ties by index) and Lovász weights
/// per sorted position, for one group of pixels.
fn lovasz_group(scores: &[f64], gt: &[f64]) -> (f64, Vec<f64>) {
    let errors: Vec<f64> = scores
        .iter()
        .zip(gt)
        .map(|(&s, &y)| 1.0 - s * (2.0 * y - 1.0))
        .collect();
    let mut order: Vec<usize> = (0..errors.len()).collect();
    order.sort_by(|&a, &b| errors[b].total_cmp(&errors[a]).then(a.cmp(&b)));
    let sorted_gt: Vec<f64> = order.iter().map(|&i| gt[i]).collect();
    let weights = jaccard_weights(&sorted_gt);
    let mut loss = 0.0;
    // d loss / d score per pixel.
    let mut grad = vec![0.0; errors.len()];
    for (&i, &g) in order.iter().zip(&weights) {
        if errors[i] > 0.0 {
            loss += errors[i] * g;
            grad[i] = -g * (2.0 * gt[i] - 1.0);
        }
    }
    (loss, grad)
}

/// Binary Lovász hinge on `(N, H, W)` scores. Groups with no positive
/// pixel contribute 0.
pub fn lovasz_hinge(scores: &Tensor, target: &Tensor, reduction: LovaszReduction) -> Result<Tensor> {
    check_targets(scores, target)?;
    let n = scores.dims().first().copied().unwrap_or(1).max(1);
    let groups = match reduction {
        LovaszReduction::PerImage => n,
        LovaszReduction::Batch => 1,
    };
    let size = scores.numel() / groups;
    let (sd, td) = (scores.data(), target.data());
    let mut total = 0.0;
    let mut grad = vec![0.0; scores.numel()];
    for g in 0..groups {
        let range = g * size..(g + 1) * size;
        if td[range.clone()].iter().all(|&y| y == 0.0) {
            continue;
        }
        let (l, gr) = lovasz_group(&sd[range.clone()], &td[range.clone()]);
        total += l;
        grad[range].copy_from_slice(&gr);
    }
    let scale = 1.0 / groups as f64;
    Tensor::from_op(
        "lovasz_hinge",
        vec![total * scale],
        Shape::new([]),
        &[scores],
        move |ctx| {
            let up = ctx.grad[0] * scale;
            vec![Some(grad.iter().map(|g| g * up).collect())]
        },
    )
}

#[derive(Clone, Debug)]
pub struct LossBreakdown {
    pub total: Tensor,
    pub ce: f64,
    pub lovasz: f64,
    pub dice: f64,
}

/// Weighted sum of the three losses. Zero-weighted terms are left out of
/// the graph entirely; their values are still reported.
pub fn total_loss(
    logits: &Tensor,
    target: &Tensor,
    weights: &LossWeights,
    reduction: LovaszReduction,
) -> Result<LossBreakdown> {
    weights.validate()?;
    let ce = cross_entropy(logits, target)?;
    let lovasz = lovasz_hinge(&score_difference(logits)?, target, reduction)?;
    let dice = dice_loss(&change_probability(logits)?, target, DICE_SMOOTH)?;
    let mut total: Option<Tensor> = None;
    for (w, term) in [(weights.ce, &ce), (weights.lovasz, &lovasz), (weights.dice, &dice)] {
        if w == 0.0 {
            continue;
        }
        let t = if w == 1.0 { term.clone() } else { term.mul_scalar(w)? };
        total = Some(match total {
            None => t,
            Some(acc) => acc.add(&t)?,
        });
    }
    let total = total.unwrap_or_else(|| Tensor::scalar(0.0));
    Ok(LossBreakdown {
        total,
        ce: ce.item()?,
        lovasz: lovasz.item()?,
        dice: dice.item()?,
    })
}
