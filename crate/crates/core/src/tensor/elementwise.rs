use super::{InputGrads, Shape, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UnaryKind {
    Neg,
    Abs,
    Exp,
    Log,
    Sigmoid,
    Relu,
    Silu,
    Softplus,
    Sqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    if x > 20.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

impl UnaryKind {
    fn name(self) -> &'static str {
        match self {
            UnaryKind::Neg => "neg",
            UnaryKind::Abs => "abs",
            UnaryKind::Exp => "exp",
            UnaryKind::Log => "log",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Relu => "relu",
            UnaryKind::Silu => "silu",
            UnaryKind::Softplus => "softplus",
            UnaryKind::Sqrt => "sqrt",
        }
    }

    fn apply(self, x: f64) -> f64 {
        match self {
            UnaryKind::Neg => -x,
            UnaryKind::Abs => x.abs(),
            UnaryKind::Exp => x.exp(),
            UnaryKind::Log => x.ln(),
            UnaryKind::Sigmoid => sigmoid(x),
            UnaryKind::Relu => x.max(0.0),
            UnaryKind::Silu => x * sigmoid(x),
            UnaryKind::Softplus => softplus(x),
            UnaryKind::Sqrt => x.sqrt(),
        }
    }

    /// d out / d x given the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            UnaryKind::Neg => -1.0,
            // Subgradient 0 at the kink.
            UnaryKind::Abs => {
                if x > 0.0 {
                    1.0
                } else if x < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Exp => y,
            UnaryKind::Log => 1.0 / x,
            UnaryKind::Sigmoid => y * (1.0 - y),
            UnaryKind::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            UnaryKind::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            UnaryKind::Softplus => sigmoid(x),
            UnaryKind::Sqrt => 0.5 / y,
        }
    }
}

impl BinaryKind {
    fn name(self) -> &'static str {
        match self {
            BinaryKind::Add => "add",
            BinaryKind::Sub => "sub",
            BinaryKind::Mul => "mul",
            BinaryKind::Div => "div",
            BinaryKind::Pow => "pow",
        }
    }

    fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
            BinaryKind::Pow => a.powf(b),
        }
    }

    /// (d out/d a, d out/d b).
    fn partials(self, a: f64, b: f64, y: f64) -> (f64, f64) {
        match self {
            BinaryKind::Add => (1.0, 1.0),
            BinaryKind::Sub => (1.0, -1.0),
            BinaryKind::Mul => (b, a),
            BinaryKind::Div => (1.0 / b, -a / (b * b)),
            BinaryKind::Pow => {
                let da = if b == 0.0 { 0.0 } else { b * a.powf(b - 1.0) };
                let db = if a > 0.0 { y * a.ln() } else { 0.0 };
                (da, db)
            }
        }
    }
}

impl Tensor {
    pub fn unary(&self, kind: UnaryKind) -> Result<Tensor> {
        if cfg!(debug_assertions) {
            let bad = match kind {
                UnaryKind::Log => self.data().iter().any(|&v| v <= 0.0),
                UnaryKind::Sqrt => self.data().iter().any(|&v| v < 0.0),
                _ => false,
            };
            if bad {
                return Err(Error::Domain(format!(
                    "{} applied to an out-of-domain operand",
                    kind.name()
                )));
            }
        }
        let data: Vec<f64> = self.data().iter().map(|&x| kind.apply(x)).collect();
        let input = self.clone();
        Tensor::from_op(
            kind.name(),
            data,
            self.shape().clone(),
            &[self],
            move |ctx| -> InputGrads {
                let g = input
                    .data()
                    .iter()
                    .zip(ctx.out)
                    .zip(ctx.grad)
                    .map(|((&x, &y), &g)| g * kind.derivative(x, y))
                    .collect();
                vec![Some(g)]
            },
        )
    }

    /// Equal shapes, or one operand holding a single element.
    pub fn binary(&self, kind: BinaryKind, other: &Tensor) -> Result<Tensor> {
        let (na, nb) = (self.numel(), other.numel());
        let shape: Shape = if self.shape() == other.shape() || nb == 1 {
            self.shape().clone()
        } else if na == 1 {
            other.shape().clone()
        } else {
            return Err(Error::dim(format!(
                "{}: shapes {} and {} do not broadcast",
                kind.name(),
                self.shape(),
                other.shape()
            )));
        };
        if cfg!(debug_assertions) && kind == BinaryKind::Div && other.data().contains(&0.0) {
            return Err(Error::Domain("division by zero".into()));
        }
        let n = shape.numel();
        let (a, b) = (self.data(), other.data());
        let ia = move |i: usize| if na == 1 { 0 } else { i };
        let ib = move |i: usize| if nb == 1 { 0 } else { i };
        let data: Vec<f64> = if na == n && nb == n {
            a.iter().zip(b).map(|(&x, &y)| kind.apply(x, y)).collect()
        } else {
            (0..n).map(|i| kind.apply(a[ia(i)], b[ib(i)])).collect()
        };
        let (lhs, rhs) = (self.clone(), other.clone());
        Tensor::from_op(kind.name(), data, shape, &[self, other], move |ctx| {
            let (a, b) = (lhs.data(), rhs.data());
            let mut ga = ctx.needs[0].then(|| vec![0.0; na]);
            let mut gb = ctx.needs[1].then(|| vec![0.0; nb]);
            for i in 0..ctx.grad.len() {
                let (x, y) = (a[ia(i)], b[ib(i)]);
                let (da, db) = kind.partials(x, y, ctx.out[i]);
                if let Some(ga) = ga.as_mut() {
                    ga[ia(i)] += ctx.grad[i] * da;
                }
                if let Some(gb) = gb.as_mut() {
                    gb[ib(i)] += ctx.grad[i] * db;
                }
            }
            vec![ga, gb]
        })
    }

    pub fn add(&self, o: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Add, o)
    }

    pub fn sub(&self, o: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Sub, o)
    }

    pub fn mul(&self, o: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Mul, o)
    }

    pub fn div(&self, o: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Div, o)
    }

    pub fn pow(&self, o: &Tensor) -> Result<Tensor> {
        self.binary(BinaryKind::Pow, o)
    }

    /// `self ∘ s` with a constant scalar operand.
    pub fn binary_scalar(&self, kind: BinaryKind, s: f64) -> Result<Tensor> {
        self.binary(kind, &Tensor::scalar(s))
    }

    pub fn add_scalar(&self, s: f64) -> Result<Tensor> {
        self.binary_scalar(BinaryKind::Add, s)
    }

    pub fn mul_scalar(&self, s: f64) -> Result<Tensor> {
        self.binary_scalar(BinaryKind::Mul, s)
    }

    pub fn powf(&self, p: f64) -> Result<Tensor> {
        self.binary_scalar(BinaryKind::Pow, p)
    }

    /// `s - self`.
    pub fn rsub_scalar(&self, s: f64) -> Result<Tensor> {
        Tensor::scalar(s).sub(self)
    }

    pub fn neg(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Neg)
    }

    pub fn abs(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Abs)
    }

    pub fn exp(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Exp)
    }

    pub fn log(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Log)
    }

    pub fn sigmoid(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sigmoid)
    }

    pub fn relu(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Relu)
    }

    pub fn silu(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Silu)
    }

    pub fn softplus(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Softplus)
    }

    pub fn sqrt(&self) -> Result<Tensor> {
        self.unary(UnaryKind::Sqrt)
    }

    /// Clamps into `[lo, hi]`; gradient is zero where clamping is active.
    pub fn clamp(&self, lo: f64, hi: f64) -> Result<Tensor> {
        let data = self.data().iter().map(|&x| x.clamp(lo, hi)).collect();
        let input = self.clone();
        Tensor::from_op("clamp", data, self.shape().clone(), &[self], move |ctx| {
            let g = input
                .data()
                .iter()
                .zip(ctx.grad)
                .map(|(&x, &g)| if x >= lo && x <= hi { g } else { 0.0 })
                .collect();
            vec![Some(g)]
        })
    }
}
