use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use super::{GradCtx, Tensor, TensorId};
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

pub(crate) fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Disables graph recording on this thread until dropped.
pub struct NoGradGuard {
    prev: bool,
}

impl Drop for NoGradGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.prev));
    }
}

pub fn no_grad() -> NoGradGuard {
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    NoGradGuard { prev }
}

/// Gradients keyed by tensor identity.
#[derive(Default, Debug)]
pub struct GradStore {
    grads: HashMap<TensorId, Vec<f64>>,
}

impl GradStore {
    pub fn get(&self, t: &Tensor) -> Option<&[f64]> {
        self.grads.get(&t.id()).map(Vec::as_slice)
    }

    pub fn get_by_id(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(&id).map(Vec::as_slice)
    }

    /// Gradient of `t`, or zeros when `t` did not influence the loss.
    pub fn get_or_zeros(&self, t: &Tensor) -> Vec<f64> {
        self.get(t).map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

/// The recorded operations reachable from a loss, in topological order
/// (inputs before the ops that consume them).
pub struct Tape {
    nodes: Vec<Tensor>,
}

impl Tape {
    pub fn record(loss: &Tensor) -> Result<Tape> {
        let mut order = Vec::new();
        if !loss.requires_grad() {
            return Ok(Tape { nodes: order });
        }
        let mut visited: HashSet<TensorId> = HashSet::new();
        // Iterative post-order DFS; deep graphs would overflow the stack.
        let mut stack: Vec<(Tensor, usize)> = vec![(loss.clone(), 0)];
        visited.insert(loss.id());
        while let Some((t, next_child)) = stack.pop() {
            let inputs = t.node().map(|n| n.inputs.as_slice()).unwrap_or(&[]);
            if next_child < inputs.len() {
                let child = inputs[next_child].clone();
                stack.push((t, next_child + 1));
                if child.requires_grad() && visited.insert(child.id()) {
                    stack.push((child, 0));
                }
            } else {
                order.push(t);
            }
        }
        Ok(Tape { nodes: order })
    }

    /// Number of recorded (non-leaf) operations.
    pub fn len(&self) -> usize {
        self.nodes.iter().filter(|t| !t.is_leaf()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Op names in recording order.
    pub fn op_names(&self) -> Vec<&'static str> {
        self.nodes.iter().filter_map(|t| t.op_name()).collect()
    }

    /// All tensors on the tape, leaves included, in topological order.
    pub fn nodes(&self) -> &[Tensor] {
        &self.nodes
    }

    /// Leaves reachable from the loss that track gradients.
    pub fn leaves(&self) -> Vec<Tensor> {
        self.nodes.iter().filter(|t| t.is_leaf()).cloned().collect()
    }

    pub fn backward(&self, loss: &Tensor) -> Result<GradStore> {
        if loss.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {}",
                loss.shape()
            )));
        }
        let mut grads: HashMap<TensorId, Vec<f64>> = HashMap::new();
        if !loss.requires_grad() {
            return Ok(GradStore { grads });
        }
        grads.insert(loss.id(), vec![1.0]);
        for t in self.nodes.iter().rev() {
            let Some(node) = t.node() else { continue };
            let Some(g) = grads.remove(&t.id()) else { continue };
            let needs: Vec<bool> = node.inputs.iter().map(Tensor::requires_grad).collect();
            let ctx = GradCtx {
                out: t.data(),
                grad: &g,
                needs: &needs,
            };
            let input_grads = (node.backward)(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "op {}", node.op);
            for (input, ig) in node.inputs.iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !input.requires_grad() {
                    continue;
                }
                debug_assert_eq!(ig.len(), input.numel(), "op {}", node.op);
                match grads.get_mut(&input.id()) {
                    Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, b)| *a += b),
                    None => {
                        grads.insert(input.id(), ig);
                    }
                }
            }
        }
        Ok(GradStore { grads })
    }
}
