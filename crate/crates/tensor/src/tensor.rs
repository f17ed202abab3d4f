use std::fmt;
use std::sync::Arc;

use crate::autograd::{self, Backward, Gradients, Node, NodeId};
use crate::error::{Result, TensorError};
use crate::real::Real;

/// Dense row-major tensor.
///
/// Cloning is cheap: the element buffer is shared. A tensor carries a graph
/// node when it is a gradient leaf or was produced from one.
#[derive(Clone)]
pub struct Tensor<T: Real = f32> {
    shape: Vec<usize>,
    data: Arc<Vec<T>>,
    node: Option<Arc<Node<T>>>,
}

impl<T: Real> Tensor<T> {
    pub fn new(data: Vec<T>, shape: &[usize]) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::DataLength {
                op: "tensor",
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self::from_parts(data, shape.to_vec()))
    }

    pub(crate) fn from_parts(data: Vec<T>, shape: Vec<usize>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            shape,
            data: Arc::new(data),
            node: None,
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let n = shape.iter().product();
        Self::from_parts(vec![value; n], shape.to_vec())
    }

    pub fn scalar(value: T) -> Self {
        Self::from_parts(vec![value], Vec::new())
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self::from_parts((0..n).map(&mut f).collect(), shape.to_vec())
    }

    /// Builds the output of a differentiable operation. A backward node is
    /// recorded only when some input requires gradients.
    pub fn from_op<B: Backward<T> + 'static>(
        data: Vec<T>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        op: B,
    ) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        let node = if inputs.iter().any(Tensor::requires_grad) {
            Some(Arc::new(Node::op(inputs, Box::new(op))))
        } else {
            None
        };
        Self {
            shape,
            data: Arc::new(data),
            node,
        }
    }

    /// Same values, registered as a fresh gradient leaf.
    pub fn into_leaf(self) -> Self {
        Self {
            node: Some(Arc::new(Node::leaf())),
            ..self
        }
    }

    /// Same values with no graph attached.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: Arc::clone(&self.data),
            node: None,
        }
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    pub fn is_leaf(&self) -> bool {
        self.node.as_ref().is_some_and(|n| n.is_leaf())
    }

    pub fn id(&self) -> Option<NodeId> {
        self.node.as_ref().map(|n| n.id)
    }

    pub(crate) fn node(&self) -> Option<&Arc<Node<T>>> {
        self.node.as_ref()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.data.as_ref().clone()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Option<T> {
        (self.data.len() == 1).then(|| self.data[0])
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| {
                debug_assert!(i < n);
                acc * n + i
            })
    }

    pub fn at(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m })
    }

    /// Detached copy in another precision.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor::from_parts(
            self.data
                .iter()
                .map(|v| U::from_f64(v.as_f64()).unwrap_or(U::nan()))
                .collect(),
            self.shape.clone(),
        )
    }

    /// Reverse-mode pass from a scalar loss.
    pub fn backward(&self) -> Result<Gradients<T>> {
        autograd::backward(self)
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut s = f.debug_struct("Tensor");
        s.field("shape", &self.shape);
        if self.data.len() <= 16 {
            s.field("data", &self.data);
        }
        s.field("requires_grad", &self.requires_grad()).finish()
    }
}
