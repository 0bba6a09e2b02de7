use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// Calls `f(flat_index, multi_index)` for every element of `dims` in
/// row-major order.
fn for_each_index(dims: &[usize], mut f: impl FnMut(&[usize])) {
    let n: usize = dims.iter().product();
    let mut idx = vec![0usize; dims.len()];
    for _ in 0..n {
        f(&idx);
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            if idx[k] < dims[k] {
                break;
            }
            idx[k] = 0;
        }
    }
}

impl Tensor {
    /// Output element `i` is input element `src[i]`; the backward pass
    /// scatter-adds. Every pure data-movement op is expressed through this.
    pub(crate) fn gather(&self, op: &'static str, shape: Shape, src: Vec<usize>) -> Result<Tensor> {
        debug_assert_eq!(shape.numel(), src.len());
        let input = self.data();
        let data = src.iter().map(|&i| input[i]).collect();
        let n = self.numel();
        Tensor::from_op(op, data, shape, &[self], move |ctx| {
            let mut g = vec![0.0; n];
            for (&i, &v) in src.iter().zip(ctx.grad) {
                g[i] += v;
            }
            vec![Some(g)]
        })
    }

    pub fn reshape(&self, shape: impl Into<Shape>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.numel() != self.numel() {
            return Err(Error::dim(format!("cannot reshape {} into {}", self.shape(), shape)));
        }
        let data = self.to_vec();
        Tensor::from_op("reshape", data, shape, &[self], |ctx| vec![Some(ctx.grad.to_vec())])
    }

    /// Reorders axes: output axis `k` is input axis `perm[k]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor> {
        let r = self.rank();
        let mut seen = vec![false; r];
        if perm.len() != r || perm.iter().any(|&p| p >= r || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::dim(format!("invalid permutation {perm:?} for rank {r}")));
        }
        let in_strides = self.shape().strides();
        let out_dims: Vec<usize> = perm.iter().map(|&p| self.dims()[p]).collect();
        let mut src = Vec::with_capacity(self.numel());
        for_each_index(&out_dims, |idx| {
            src.push(idx.iter().zip(perm).map(|(&i, &p)| i * in_strides[p]).sum());
        });
        self.gather("permute", Shape::new(out_dims), src)
    }

    /// Elements `start, start+step, …` (`len` of them) along `axis`.
    pub fn narrow_strided(&self, axis: usize, start: usize, len: usize, step: usize) -> Result<Tensor> {
        if axis >= self.rank() || step == 0 {
            return Err(Error::dim(format!("narrow: bad axis {axis} or step {step}")));
        }
        let extent = self.dims()[axis];
        if len > 0 && start + (len - 1) * step >= extent {
            return Err(Error::dim(format!(
                "narrow: range {start}+{len}x{step} exceeds extent {extent} on axis {axis}"
            )));
        }
        let strides = self.shape().strides();
        let mut out_dims = self.dims().to_vec();
        out_dims[axis] = len;
        let mut src = Vec::with_capacity(out_dims.iter().product());
        for_each_index(&out_dims, |idx| {
            src.push(
                idx.iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        if k == axis {
                            (start + i * step) * strides[k]
                        } else {
                            i * strides[k]
                        }
                    })
                    .sum(),
            );
        });
        self.gather("narrow", Shape::new(out_dims), src)
    }

    pub fn narrow(&self, axis: usize, start: usize, len: usize) -> Result<Tensor> {
        self.narrow_strided(axis, start, len, 1)
    }

    /// Reverses the order of elements along `axis`.
    pub fn flip(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::dim(format!("flip: axis {axis} out of range")));
        }
        let strides = self.shape().strides();
        let dims = self.dims().to_vec();
        let mut src = Vec::with_capacity(self.numel());
        for_each_index(&dims, |idx| {
            src.push(
                idx.iter()
                    .enumerate()
                    .map(|(k, &i)| {
                        if k == axis {
                            (dims[k] - 1 - i) * strides[k]
                        } else {
                            i * strides[k]
                        }
                    })
                    .sum(),
            );
        });
        self.gather("flip", Shape::new(dims), src)
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(tensors: &[&Tensor], axis: usize) -> Result<Tensor> {
        let first = tensors.first().ok_or_else(|| Error::dim("concat of an empty list"))?;
        if axis >= first.rank() {
            return Err(Error::dim(format!("concat: axis {axis} out of range")));
        }
        for t in &tensors[1..] {
            let ok = t.rank() == first.rank()
                && t.dims()
                    .iter()
                    .zip(first.dims())
                    .enumerate()
                    .all(|(k, (a, b))| k == axis || a == b);
            if !ok {
                return Err(Error::dim(format!(
                    "concat on axis {axis}: {} vs {}",
                    first.shape(),
                    t.shape()
                )));
            }
        }
        let outer: usize = first.dims()[..axis].iter().product();
        let inner: usize = first.dims()[axis + 1..].iter().product();
        let extents: Vec<usize> = tensors.iter().map(|t| t.dims()[axis]).collect();
        let total: usize = extents.iter().sum();
        let mut out_dims = first.dims().to_vec();
        out_dims[axis] = total;
        let mut data = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (t, &e) in tensors.iter().zip(&extents) {
                data.extend_from_slice(&t.data()[o * e * inner..(o + 1) * e * inner]);
            }
        }
        Tensor::from_op("concat", data, Shape::new(out_dims), tensors, move |ctx| {
            let mut grads: Vec<Vec<f64>> = extents.iter().map(|&e| Vec::with_capacity(outer * e * inner)).collect();
            let mut pos = 0;
            for _ in 0..outer {
                for (g, &e) in grads.iter_mut().zip(&extents) {
                    g.extend_from_slice(&ctx.grad[pos..pos + e * inner]);
                    pos += e * inner;
                }
            }
            grads
                .into_iter()
                .zip(ctx.needs)
                .map(|(g, &need)| need.then_some(g))
                .collect()
        })
    }

    /// Zips two equal-shape tensors along `axis`: output index `2k` is
    /// `a[k]`, `2k+1` is `b[k]`.
    pub fn interleave(a: &Tensor, b: &Tensor, axis: usize) -> Result<Tensor> {
        a.expect_same_shape(b, "interleave")?;
        if axis >= a.rank() {
            return Err(Error::dim(format!("interleave: axis {axis} out of range")));
        }
        let stacked = Tensor::concat(&[a, b], axis)?;
        let dims = a.dims();
        let extent = dims[axis];
        let inner: usize = dims[axis + 1..].iter().product();
        let outer: usize = dims[..axis].iter().product();
        let mut out_dims = dims.to_vec();
        out_dims[axis] = 2 * extent;
        let mut src = Vec::with_capacity(stacked.numel());
        for o in 0..outer {
            let base = o * 2 * extent * inner;
            for k in 0..extent {
                for which in 0..2 {
                    let row = base + (which * extent + k) * inner;
                    src.extend(row..row + inner);
                }
            }
        }
        stacked.gather("interleave", Shape::new(out_dims), src)
    }

    /// Inverse of [`Tensor::interleave`]: (even-index slice, odd-index slice).
    pub fn deinterleave(&self, axis: usize) -> Result<(Tensor, Tensor)> {
        if axis >= self.rank() || !self.dims()[axis].is_multiple_of(2) {
            return Err(Error::dim(format!(
                "deinterleave needs an even extent on axis {axis}, shape {}",
                self.shape()
            )));
        }
        let half = self.dims()[axis] / 2;
        Ok((
            self.narrow_strided(axis, 0, half, 2)?,
            self.narrow_strided(axis, 1, half, 2)?,
        ))
    }
}
