use crate::error::{Error, Result};
use crate::module::Module;
use crate::tensor::{GradStore, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            weight_decay: 5e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamWConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::Config("betas must lie in [0, 1)".into()));
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config("eps must be positive".into()));
        }
        Ok(())
    }
}

/// Adam with decoupled weight decay. Moment buffers follow the model's
/// parameter visiting order.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new<M: Module>(config: AdamWConfig, model: &M) -> Self {
        let sizes: Vec<usize> = model.named_params().iter().map(|(_, t, _)| t.numel()).collect();
        Self {
            config,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    /// Applies one update to every parameter. Parameters without a
    /// gradient are treated as having a zero gradient.
    pub fn step<M: Module>(&mut self, model: &mut M, grads: &GradStore) -> Result<()> {
        let AdamWConfig {
            lr,
            weight_decay,
            beta1,
            beta2,
            eps,
        } = self.config;
        self.step += 1;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        let mut idx = 0;
        let mut failure = None;
        let (ms, vs) = (&mut self.m, &mut self.v);
        model.visit_params("", &mut |name, t, decay| {
            if failure.is_some() {
                return;
            }
            let (Some(m), Some(v)) = (ms.get_mut(idx), vs.get_mut(idx)) else {
                failure = Some(Error::Contract(format!("optimizer has no state for `{name}`")));
                return;
            };
            idx += 1;
            let g = grads.get(t);
            if m.len() != t.numel() || g.is_some_and(|g| g.len() != t.numel()) {
                failure = Some(Error::dim(format!(
                    "optimizer state / gradient size mismatch for `{name}`"
                )));
                return;
            }
            let shrink = if decay { 1.0 - lr * weight_decay } else { 1.0 };
            let mut p = t.to_vec();
            for i in 0..p.len() {
                let gi = g.map_or(0.0, |g| g[i]);
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p[i] = p[i] * shrink - lr * mhat / (vhat.sqrt() + eps);
            }
            *t = Tensor::param(p, t.shape().clone()).expect("same shape");
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if idx != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, model has {idx}",
                self.m.len()
            )));
        }
        Ok(())
    }
}
