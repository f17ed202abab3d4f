use std::collections::{HashMap, HashSet};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(u64);

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

impl NodeId {
    fn fresh() -> Self {
        NodeId(NEXT_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// Vector-Jacobian product of one recorded operation.
pub trait Backward<T: Real>: Send + Sync {
    fn name(&self) -> &'static str;

    /// Returns one entry per input, in input order. Inputs that do not
    /// require gradients may be given `None`.
    fn backward(&self, grad_out: &[T], inputs: &[Tensor<T>]) -> Vec<Option<Vec<T>>>;
}

pub(crate) struct Node<T: Real> {
    pub(crate) id: NodeId,
    inputs: Vec<Tensor<T>>,
    op: Option<Box<dyn Backward<T>>>,
}

impl<T: Real> Node<T> {
    pub(crate) fn leaf() -> Self {
        Self {
            id: NodeId::fresh(),
            inputs: Vec::new(),
            op: None,
        }
    }

    pub(crate) fn op(inputs: Vec<Tensor<T>>, op: Box<dyn Backward<T>>) -> Self {
        Self {
            id: NodeId::fresh(),
            inputs,
            op: Some(op),
        }
    }

    pub(crate) fn is_leaf(&self) -> bool {
        self.op.is_none()
    }
}

/// Leaf gradients produced by one backward pass.
#[derive(Debug, Default)]
pub struct Gradients<T: Real = f32> {
    grads: HashMap<NodeId, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&[T]> {
        t.id().and_then(|id| self.grads.get(&id)).map(Vec::as_slice)
    }

    /// Gradient of `t`, or zeros when the loss does not reach it.
    pub fn get_or_zeros(&self, t: &Tensor<T>) -> Vec<T> {
        self.get(t)
            .map(<[T]>::to_vec)
            .unwrap_or_else(|| vec![T::zero(); t.numel()])
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

fn topo_order<T: Real>(root: &Arc<Node<T>>) -> Vec<Arc<Node<T>>> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (node, children pushed?)
    let mut stack = vec![(Arc::clone(root), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !seen.insert(node.id) {
            continue;
        }
        stack.push((Arc::clone(&node), true));
        for input in &node.inputs {
            if let Some(child) = input.node() {
                if !seen.contains(&child.id) {
                    stack.push((Arc::clone(child), false));
                }
            }
        }
    }
    order
}

pub(crate) fn backward<T: Real>(loss: &Tensor<T>) -> Result<Gradients<T>> {
    if loss.numel() != 1 {
        return Err(TensorError::NonScalarLoss(loss.shape().to_vec()));
    }
    let Some(root) = loss.node() else {
        return Ok(Gradients::default());
    };
    let order = topo_order(root);
    let mut pending: HashMap<NodeId, Vec<T>> = HashMap::new();
    pending.insert(root.id, vec![T::one()]);
    let mut out = Gradients::default();

    for node in order.iter().rev() {
        let Some(grad) = pending.remove(&node.id) else {
            continue;
        };
        let Some(op) = &node.op else {
            out.grads.insert(node.id, grad);
            continue;
        };
        let input_grads = op.backward(&grad, &node.inputs);
        debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", op.name());
        for (input, g) in node.inputs.iter().zip(input_grads) {
            let (Some(child), Some(g)) = (input.node(), g) else {
                continue;
            };
            debug_assert_eq!(g.len(), input.numel(), "{}", op.name());
            match pending.get_mut(&child.id) {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                None => {
                    pending.insert(child.id, g);
                }
            }
        }
    }
    Ok(out)
}
