//! Parameter traversal shared by every trainable component.

use crate::tensor::Tensor;

/// Callback receiving `(qualified name, parameter, apply weight decay)`.
pub type ParamFn<'a> = dyn FnMut(&str, &mut Tensor, bool) + 'a;

/// A component owning trainable tensors.
///
/// `visit_params` must enumerate parameters in a fixed order; checkpoints
/// and optimizer state rely on it.
pub trait Module: Clone {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>);

    /// Snapshot of `(name, tensor, decay)` in visiting order.
    fn named_params(&self) -> Vec<(String, Tensor, bool)> {
        let mut out = Vec::new();
        let mut copy = self.clone();
        copy.visit_params("", &mut |name, t, decay| out.push((name.to_string(), t.clone(), decay)));
        out
    }

    fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t, _)| t.numel()).sum()
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl<M: Module> Module for Vec<M> {
    fn visit_params(&mut self, prefix: &str, f: &mut ParamFn<'_>) {
        for (i, m) in self.iter_mut().enumerate() {
            m.visit_params(&join(prefix, &i.to_string()), f);
        }
    }
}
