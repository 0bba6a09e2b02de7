use std::path::Path;

use crate::data::{render_change_map, write_image, BiTemporalSample};
use crate::decoder::predict;
use crate::encoder::MAX_STRIDE;
use crate::error::{Error, Result};
use crate::mask::BinaryMask;
use crate::metrics::{confusion, ConfusionCounts, Metrics};
use crate::model::ChangeDetector;
use crate::tensor::{no_grad, Tensor};

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub counts: ConfusionCounts,
    pub metrics: Metrics,
    pub per_sample: Vec<(String, ConfusionCounts)>,
}

/// Edge-replicates `(N, C, H, W)` to `(N, C, ph, pw)`.
fn pad_edges(x: &Tensor, ph: usize, pw: usize) -> Result<Tensor> {
    let (n, c, h, w) = x.dims4()?;
    if (ph, pw) == (h, w) {
        return Ok(x.clone());
    }
    let src = x.data();
    let mut out = Vec::with_capacity(n * c * ph * pw);
    for plane in 0..n * c {
        let base = plane * h * w;
        for y in 0..ph {
            let row = base + y.min(h - 1) * w;
            out.extend_from_slice(&src[row..row + w]);
            out.extend(std::iter::repeat_n(src[row + w - 1], pw - w));
        }
    }
    Tensor::from_vec(out, [n, c, ph, pw])
}

/// Change masks for a stack of same-sized pairs `(N, 3, H, W)` at full
/// resolution. Sides that are not a multiple of the encoder stride are
/// padded by edge replication and the prediction cropped back.
pub fn predict_masks(model: &ChangeDetector, pre: &Tensor, post: &Tensor) -> Result<Vec<BinaryMask>> {
    let _guard = no_grad();
    let (_, _, h, w) = pre.dims4()?;
    if h == 0 || w == 0 {
        return Err(Error::Data("cannot predict on an empty image".into()));
    }
    let ph = h.next_multiple_of(MAX_STRIDE);
    let pw = w.next_multiple_of(MAX_STRIDE);
    let logits = model.forward(&pad_edges(pre, ph, pw)?, &pad_edges(post, ph, pw)?)?;
    let masks = predict(&logits)?;
    if (ph, pw) == (h, w) {
        return Ok(masks);
    }
    masks.iter().map(|m| m.crop(0, 0, h, w)).collect()
}

fn stack(samples: &[&BiTemporalSample], pick: impl Fn(&BiTemporalSample) -> &Tensor) -> Result<Tensor> {
    let dims = pick(samples[0]).dims().to_vec();
    let mut data = Vec::with_capacity(samples.len() * dims.iter().product::<usize>());
    for s in samples {
        data.extend_from_slice(pick(s).data());
    }
    let mut shape = vec![samples.len()];
    shape.extend(dims);
    Tensor::from_vec(data, shape)
}

/// Full-image inference over `samples`, accumulating dataset-level counts.
/// With `render`, writes one change map per sample as `<name>.ppm`.
pub fn evaluate(
    model: &ChangeDetector,
    samples: &[BiTemporalSample],
    batch_size: usize,
    render: Option<&Path>,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("evaluation set is empty".into()));
    }
    if let Some(dir) = render {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut counts = ConfusionCounts::default();
    let mut per_sample = Vec::with_capacity(samples.len());
    let mut start = 0;
    while start < samples.len() {
        let size = (samples[start].height(), samples[start].width());
        let mut end = start + 1;
        while end < samples.len()
            && end - start < batch_size.max(1)
            && (samples[end].height(), samples[end].width()) == size
        {
            end += 1;
        }
        let group: Vec<&BiTemporalSample> = samples[start..end].iter().collect();
        let masks = predict_masks(model, &stack(&group, |s| &s.pre)?, &stack(&group, |s| &s.post)?)?;
        for (s, m) in group.iter().zip(&masks) {
            let c = confusion(m, &s.label)?;
            counts += c;
            per_sample.push((s.name.clone(), c));
            if let Some(dir) = render {
                write_image(&dir.join(format!("{}.ppm", s.name)), &render_change_map(m, &s.label)?)?;
            }
        }
        start = end;
    }
    Ok(EvalReport {
        counts,
        metrics: Metrics::from_counts(&counts)?,
        per_sample,
    })
}
