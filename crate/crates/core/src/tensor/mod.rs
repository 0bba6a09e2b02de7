//! Dense row-major `f64` tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, reference-counted value. Operations that
//! consume at least one gradient-tracking input record a backward rule on the
//! produced tensor; [`Tensor::backward`] walks those records in reverse
//! topological order and returns a [`GradStore`].

mod autograd;
mod elementwise;
pub mod gradcheck;
mod reduce;
mod shape_ops;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

pub(crate) use autograd::grad_enabled;
pub use autograd::{no_grad, GradStore, NoGradGuard, Tape};
pub use elementwise::{BinaryKind, UnaryKind};

use crate::error::{Error, Result};

/// Unique identity of a tensor value, used to key gradients.
pub type TensorId = u64;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn next_id() -> TensorId {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Extents of a tensor, outermost first.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Self {
        Shape(dims.into())
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// Row-major strides.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }

    pub fn dim(&self, axis: usize) -> usize {
        self.0[axis]
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, d) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{d}")?;
        }
        write!(f, ")")
    }
}

impl From<&[usize]> for Shape {
    fn from(d: &[usize]) -> Self {
        Shape(d.to_vec())
    }
}

impl From<Vec<usize>> for Shape {
    fn from(d: Vec<usize>) -> Self {
        Shape(d)
    }
}

impl<const N: usize> From<[usize; N]> for Shape {
    fn from(d: [usize; N]) -> Self {
        Shape(d.to_vec())
    }
}

/// Per-input gradient contributions returned by a backward rule.
pub(crate) type InputGrads = Vec<Option<Vec<f64>>>;

/// Arguments handed to a backward rule.
pub(crate) struct GradCtx<'a> {
    /// Forward output values.
    pub out: &'a [f64],
    /// Gradient of the loss with respect to the output.
    pub grad: &'a [f64],
    /// Which inputs need a gradient.
    pub needs: &'a [bool],
}

pub(crate) type BackwardFn = Box<dyn Fn(&GradCtx<'_>) -> InputGrads + Send + Sync>;

pub(crate) struct Node {
    pub op: &'static str,
    pub inputs: Vec<Tensor>,
    pub backward: BackwardFn,
}

struct Inner {
    id: TensorId,
    shape: Shape,
    data: Vec<f64>,
    requires_grad: bool,
    node: Option<Node>,
}

/// Dense N-dimensional array of `f64`, optionally tracked for gradients.
#[derive(Clone)]
pub struct Tensor(Arc<Inner>);

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.0.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .field("op", &self.0.node.as_ref().map(|n| n.op))
            .field("data", &preview)
            .finish()
    }
}

impl Tensor {
    /// Constant tensor (no gradient tracking).
    pub fn from_vec(data: Vec<f64>, shape: impl Into<Shape>) -> Result<Self> {
        let shape = shape.into();
        if shape.numel() != data.len() {
            return Err(Error::dim(format!(
                "shape {shape} holds {} elements but {} were supplied",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Self::raw(data, shape, false, None))
    }

    /// Gradient-tracking leaf.
    pub fn param(data: Vec<f64>, shape: impl Into<Shape>) -> Result<Self> {
        Ok(Self::from_vec(data, shape)?.into_leaf(true))
    }

    pub fn scalar(v: f64) -> Self {
        Self::raw(vec![v], Shape::new(Vec::new()), false, None)
    }

    pub fn zeros(shape: impl Into<Shape>) -> Self {
        let shape = shape.into();
        Self::raw(vec![0.0; shape.numel()], shape, false, None)
    }

    pub fn full(shape: impl Into<Shape>, v: f64) -> Self {
        let shape = shape.into();
        Self::raw(vec![v; shape.numel()], shape, false, None)
    }

    pub fn ones(shape: impl Into<Shape>) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn randn<R: Rng + ?Sized>(shape: impl Into<Shape>, std: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                z * std
            })
            .collect();
        Self::raw(data, shape, false, None)
    }

    pub fn uniform<R: Rng + ?Sized>(shape: impl Into<Shape>, lo: f64, hi: f64, rng: &mut R) -> Self {
        let shape = shape.into();
        let data = (0..shape.numel()).map(|_| rng.gen_range(lo..hi)).collect();
        Self::raw(data, shape, false, None)
    }

    fn raw(data: Vec<f64>, shape: Shape, requires_grad: bool, node: Option<Node>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor(Arc::new(Inner {
            id: next_id(),
            shape,
            data,
            requires_grad,
            node,
        }))
    }

    /// Fresh leaf with the same values, detached from any graph.
    pub fn detach(&self) -> Tensor {
        Self::raw(self.0.data.clone(), self.0.shape.clone(), false, None)
    }

    /// Fresh leaf with the same values and the given tracking flag.
    pub fn into_leaf(self, requires_grad: bool) -> Tensor {
        match Arc::try_unwrap(self.0) {
            Ok(inner) => Self::raw(inner.data, inner.shape, requires_grad, None),
            Err(shared) => Self::raw(shared.data.clone(), shared.shape.clone(), requires_grad, None),
        }
    }

    /// Leaf with the same shape and new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Tensor> {
        Ok(Tensor::from_vec(data, self.shape().clone())?.into_leaf(self.requires_grad()))
    }

    pub fn id(&self) -> TensorId {
        self.0.id
    }

    pub fn shape(&self) -> &Shape {
        &self.0.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.0.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.0.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.0.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.0.data
    }

    pub fn to_vec(&self) -> Vec<f64> {
        self.0.data.clone()
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.node.is_none()
    }

    /// Name of the op that produced this tensor, if recorded.
    pub fn op_name(&self) -> Option<&'static str> {
        self.0.node.as_ref().map(|n| n.op)
    }

    pub(crate) fn node(&self) -> Option<&Node> {
        self.0.node.as_ref()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!("item() on tensor of shape {}", self.shape())));
        }
        Ok(self.0.data[0])
    }

    /// `(n, c, h, w)` of a rank-4 tensor.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match self.dims() {
            &[n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::dim(format!(
                "expected an NCHW tensor, got shape {}",
                self.shape()
            ))),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.0.data.iter().all(|v| v.is_finite())
    }

    /// Records `op` if gradients are enabled and any input tracks them;
    /// otherwise returns a plain constant.
    pub(crate) fn from_op<F>(
        op: &'static str,
        data: Vec<f64>,
        shape: Shape,
        inputs: &[&Tensor],
        backward: F,
    ) -> Result<Tensor>
    where
        F: Fn(&GradCtx<'_>) -> InputGrads + Send + Sync + 'static,
    {
        if cfg!(debug_assertions) && inputs.iter().all(|t| t.all_finite()) && data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "op `{op}` produced a non-finite value from finite inputs"
            )));
        }
        let tracked = autograd::grad_enabled() && inputs.iter().any(|t| t.requires_grad());
        let node = tracked.then(|| Node {
            op,
            inputs: inputs.iter().map(|t| (*t).clone()).collect(),
            backward: Box::new(backward),
        });
        Ok(Self::raw(data, shape, tracked, node))
    }

    pub(crate) fn expect_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(format!(
                "{op}: shape mismatch {} vs {}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(())
    }

    /// Runs reverse-mode differentiation from this scalar.
    pub fn backward(&self) -> Result<GradStore> {
        Tape::record(self)?.backward(self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strides_are_row_major() {
        assert_eq!(Shape::new([2, 3, 4]).strides(), vec![12, 4, 1]);
        assert_eq!(Shape::new(Vec::new()).strides(), Vec::<usize>::new());
    }

    #[test]
    fn from_vec_rejects_wrong_length() {
        assert!(matches!(
            Tensor::from_vec(vec![1.0; 5], [2, 3]),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn ids_are_unique() {
        let a = Tensor::zeros([2]);
        let b = a.detach();
        assert_ne!(a.id(), b.id());
    }
}
