use super::{Shape, Tensor};
use crate::error::{Error, Result};

/// For every input element, the flat index of the element it reduces into
/// when `axes` collapse to extent 1.
fn reduction_map(dims: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_dims: Vec<usize> = dims
        .iter()
        .enumerate()
        .map(|(i, &d)| if axes.contains(&i) { 1 } else { d })
        .collect();
    let out_strides = Shape::new(out_dims.clone()).strides();
    let kept_strides: Vec<usize> = (0..dims.len())
        .map(|i| if axes.contains(&i) { 0 } else { out_strides[i] })
        .collect();
    let n: usize = dims.iter().product();
    let mut map = Vec::with_capacity(n);
    let mut idx = vec![0usize; dims.len()];
    let mut o = 0usize;
    for _ in 0..n {
        map.push(o);
        for k in (0..dims.len()).rev() {
            idx[k] += 1;
            o += kept_strides[k];
            if idx[k] < dims[k] {
                break;
            }
            o -= kept_strides[k] * idx[k];
            idx[k] = 0;
        }
    }
    (map, out_dims)
}

fn check_axes(t: &Tensor, axes: &[usize], op: &str) -> Result<()> {
    for &a in axes {
        if a >= t.rank() {
            return Err(Error::dim(format!(
                "{op}: axis {a} out of range for shape {}",
                t.shape()
            )));
        }
        if t.dims()[a] == 0 {
            return Err(Error::dim(format!("{op}: empty extent on axis {a}")));
        }
    }
    Ok(())
}

impl Tensor {
    pub fn sum_all(&self) -> Result<Tensor> {
        let s: f64 = self.data().iter().sum();
        let n = self.numel();
        Tensor::from_op("sum_all", vec![s], Shape::new(Vec::new()), &[self], move |ctx| {
            vec![Some(vec![ctx.grad[0]; n])]
        })
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        if self.numel() == 0 {
            return Err(Error::dim("mean of an empty tensor"));
        }
        let n = self.numel();
        self.sum_all()?.mul_scalar(1.0 / n as f64)
    }

    /// Sums over `axes`, keeping them as extent-1 dimensions.
    pub fn sum_axes(&self, axes: &[usize]) -> Result<Tensor> {
        check_axes(self, axes, "sum_axes")?;
        let (map, out_dims) = reduction_map(self.dims(), axes);
        let out_shape = Shape::new(out_dims);
        let mut out = vec![0.0; out_shape.numel()];
        for (&o, &v) in map.iter().zip(self.data()) {
            out[o] += v;
        }
        Tensor::from_op("sum_axes", out, out_shape, &[self], move |ctx| {
            vec![Some(map.iter().map(|&o| ctx.grad[o]).collect())]
        })
    }

    pub fn mean_axes(&self, axes: &[usize]) -> Result<Tensor> {
        check_axes(self, axes, "mean_axes")?;
        let count: usize = axes.iter().map(|&a| self.dims()[a]).product();
        self.sum_axes(axes)?.mul_scalar(1.0 / count as f64)
    }

    /// Maximum over `axes` (kept as extent 1). The gradient is routed to the
    /// first maximal element in row-major order.
    pub fn max_axes(&self, axes: &[usize]) -> Result<Tensor> {
        check_axes(self, axes, "max_axes")?;
        let (map, out_dims) = reduction_map(self.dims(), axes);
        let out_shape = Shape::new(out_dims);
        let m = out_shape.numel();
        let mut out = vec![f64::NEG_INFINITY; m];
        let mut arg = vec![usize::MAX; m];
        for (i, (&o, &v)) in map.iter().zip(self.data()).enumerate() {
            if arg[o] == usize::MAX || v > out[o] {
                out[o] = v;
                arg[o] = i;
            }
        }
        let n = self.numel();
        Tensor::from_op("max_axes", out, out_shape, &[self], move |ctx| {
            let mut g = vec![0.0; n];
            for (o, &i) in arg.iter().enumerate() {
                g[i] += ctx.grad[o];
            }
            vec![Some(g)]
        })
    }

    /// Broadcasts extent-1 dimensions up to `shape` (same rank).
    pub fn expand(&self, shape: impl Into<Shape>) -> Result<Tensor> {
        let shape = shape.into();
        if shape.rank() != self.rank() || self.dims().iter().zip(shape.dims()).any(|(&s, &t)| s != t && s != 1) {
            return Err(Error::dim(format!("cannot expand {} to {}", self.shape(), shape)));
        }
        if &shape == self.shape() {
            return Ok(self.clone());
        }
        let axes: Vec<usize> = (0..shape.rank())
            .filter(|&i| self.dims()[i] == 1 && shape.dims()[i] != 1)
            .collect();
        // Each output element reads the source element it reduces onto.
        let (map, _) = reduction_map(shape.dims(), &axes);
        let src = self.data();
        let data = map.iter().map(|&o| src[o]).collect();
        let n = self.numel();
        Tensor::from_op("expand", data, shape, &[self], move |ctx| {
            let mut g = vec![0.0; n];
            for (&o, &v) in map.iter().zip(ctx.grad) {
                g[o] += v;
            }
            vec![Some(g)]
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_axes_keeps_dims() {
        let x = Tensor::from_vec((0..24).map(f64::from).collect(), [2, 3, 4]).unwrap();
        let s = x.sum_axes(&[1]).unwrap();
        assert_eq!(s.dims(), &[2, 1, 4]);
        assert_eq!(s.data()[0], 0.0 + 4.0 + 8.0);
        let s = x.sum_axes(&[0, 2]).unwrap();
        assert_eq!(s.dims(), &[1, 3, 1]);
        assert_eq!(s.data()[1], (4..8).chain(16..20).map(f64::from).sum::<f64>());
    }

    #[test]
    fn global_pools_on_small_plane() {
        let x = Tensor::from_vec(vec![1.0, 2.0, 3.0, 4.0], [1, 1, 2, 2]).unwrap();
        assert_eq!(x.mean_axes(&[2, 3]).unwrap().data(), &[2.5]);
        assert_eq!(x.max_axes(&[2, 3]).unwrap().data(), &[4.0]);
    }

    #[test]
    fn max_routes_to_first_tie() {
        let x = Tensor::param(vec![3.0, 1.0, 3.0], [1, 3]).unwrap();
        let g = x.max_axes(&[1]).unwrap().sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[1.0, 0.0, 0.0]);
    }

    #[test]
    fn expand_then_backward_sums() {
        let x = Tensor::param(vec![1.0, 2.0], [2, 1]).unwrap();
        let e = x.expand([2, 3]).unwrap();
        assert_eq!(e.data(), &[1.0, 1.0, 1.0, 2.0, 2.0, 2.0]);
        let g = e.sum_all().unwrap().backward().unwrap();
        assert_eq!(g.get(&x).unwrap(), &[3.0, 3.0]);
    }

    #[test]
    fn empty_extent_is_rejected() {
        let x = Tensor::zeros([1, 0, 2]);
        assert!(x.max_axes(&[1]).is_err());
    }
}
