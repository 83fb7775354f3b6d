//! Minimal reverse-mode automatic differentiation.
//!
//! The engine provides exactly the operations the frontends and the
//! classifier need: broadcast elementwise arithmetic, matmul, 1-D/2-D
//! convolution, batch normalization, ReLU/dropout/pooling, softmax
//! cross-entropy, an Adam optimizer and a central finite-difference
//! gradient checker.
//!
//! Tensors are handles (`Rc`) onto graph nodes. Applying an operation
//! records a node holding its parents and a backward closure; calling
//! [`Tensor::backward`] on a scalar loss walks the graph in reverse
//! topological order exactly once and accumulates gradients into every
//! reachable tensor that requires them. Operations whose inputs all have
//! `requires_grad == false` are pruned to constants, so forward-only use
//! retains no graph.
//!
//! Training runs in `f32`; gradient checking instantiates the same code
//! with `f64` ("checking mode"), where domain violations (log/sqrt of
//! negatives) panic instead of silently producing NaN.

mod adam;
mod conv;
mod gradcheck;
mod loss;
mod norm;
mod ops;

pub use adam::{Adam, AdamConfig, AdamState};
pub use conv::{conv1d, conv1d_padded, conv2d, depthwise_conv1d};
pub use gradcheck::{gradient_check, CoordSelection, GradCheckReport};
pub use loss::softmax_cross_entropy;
pub use norm::BatchNorm2d;

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

/// Train/eval switch for dropout, batchnorm and the model forward pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Element type of the engine. `f32` is the training dtype, `f64` the
/// checking dtype (`CHECKING == true` enables domain panics).
pub trait Scalar:
    Copy
    + PartialOrd
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
    + rand::distributions::uniform::SampleUniform
    + rustfft::FftNum
    + num_traits::Float
{
    const CHECKING: bool;

    fn of(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const CHECKING: bool = false;

    fn of(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const CHECKING: bool = true;

    fn of(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackwardFn<T> = Box<dyn Fn(&[T])>;

struct Inner<T: Scalar> {
    id: u64,
    shape: Vec<usize>,
    values: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    /// Graph edges for reverse traversal. Empty for leaves and constants.
    parents: Vec<Tensor<T>>,
    /// Accumulates parent gradients given this node's output gradient.
    backward: Option<BackwardFn<T>>,
}

/// A shaped array of scalars, optionally recorded on the autodiff graph.
pub struct Tensor<T: Scalar = f32> {
    inner: Rc<Inner<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

impl<T: Scalar> Tensor<T> {
    fn new_leaf(shape: &[usize], values: Vec<T>, requires_grad: bool) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            values.len(),
            "shape {:?} does not match value count {}",
            shape,
            values.len()
        );
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape: shape.to_vec(),
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad,
                parents: Vec::new(),
                backward: None,
            }),
        }
    }

    /// A constant tensor outside the graph.
    pub fn from_vec(shape: &[usize], values: Vec<T>) -> Self {
        Self::new_leaf(shape, values, false)
    }

    /// A trainable leaf: gradients accumulate here during backward passes.
    pub fn param(shape: &[usize], values: Vec<T>) -> Self {
        Self::new_leaf(shape, values, true)
    }

    pub fn scalar(v: T) -> Self {
        Self::from_vec(&[1], vec![v])
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::from_vec(shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        Self::from_vec(shape, vec![v; shape.iter().product()])
    }

    /// Records an operation node. If no parent requires gradients the graph
    /// is pruned and a plain constant is returned.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        values: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        assert_eq!(shape.iter().product::<usize>(), values.len());
        if !parents.iter().any(|p| p.requires_grad()) {
            return Self::from_vec(&shape, values);
        }
        Tensor {
            inner: Rc::new(Inner {
                id: next_id(),
                shape,
                values: RefCell::new(values),
                grad: RefCell::new(None),
                requires_grad: true,
                parents,
                backward: Some(backward),
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn values(&self) -> std::cell::Ref<'_, Vec<T>> {
        self.inner.values.borrow()
    }

    /// Mutable access to a leaf's values (optimizer steps, clamping,
    /// finite-difference perturbation). Not allowed on recorded op outputs:
    /// their values would diverge from what backward closures assume.
    pub fn values_mut(&self) -> std::cell::RefMut<'_, Vec<T>> {
        assert!(
            self.inner.backward.is_none(),
            "cannot mutate values of a recorded operation output"
        );
        self.inner.values.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.values.borrow().clone()
    }

    /// The single value of a scalar tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.len(), 1, "item() requires a scalar tensor");
        self.inner.values.borrow()[0]
    }

    /// A constant copy detached from the graph.
    pub fn detach(&self) -> Tensor<T> {
        Tensor::from_vec(&self.inner.shape, self.to_vec())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub(crate) fn accumulate_grad(&self, contribution: &[T]) {
        if !self.inner.requires_grad {
            return;
        }
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, &ci) in g.iter_mut().zip(contribution) {
                    *gi = *gi + ci;
                }
            }
            None => *slot = Some(contribution.to_vec()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.inner.values.borrow().iter().all(|v| v.is_finite())
    }

    /// Reverse pass from a scalar loss. Visits each recorded operation
    /// exactly once and populates the gradient of every `requires_grad`
    /// tensor reachable from this node.
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward() requires a scalar loss");
        assert!(
            self.all_finite(),
            "backward() called on a non-finite loss value"
        );
        let order = self.topo_order();
        self.accumulate_grad(&[T::one()]);
        for node in order.iter().rev() {
            if let Some(back) = &node.inner.backward {
                let grad = node
                    .inner
                    .grad
                    .borrow()
                    .clone()
                    .unwrap_or_else(|| vec![T::zero(); node.len()]);
                back(&grad);
            }
        }
    }

    /// Post-order over the recorded subgraph rooted at `self`.
    fn topo_order(&self) -> Vec<Tensor<T>> {
        let mut order = Vec::new();
        let mut visited: HashSet<u64> = HashSet::new();
        // Iterative DFS: (node, next child index to visit).
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.inner.id);
        while let Some((node, child)) = stack.pop() {
            if child < node.inner.parents.len() {
                let next = node.inner.parents[child].clone();
                stack.push((node, child + 1));
                if next.inner.backward.is_some() && visited.insert(next.inner.id) {
                    stack.push((next, 0));
                }
            } else {
                order.push(node);
            }
        }
        order
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constants_record_no_graph() {
        let a = Tensor::from_vec(&[2], vec![1.0f64, 2.0]);
        let b = Tensor::from_vec(&[2], vec![3.0f64, 4.0]);
        let c = a.add(&b);
        assert!(!c.requires_grad());
        assert_eq!(c.to_vec(), vec![4.0, 6.0]);
    }

    #[test]
    fn product_rule_backward() {
        let x = Tensor::param(&[1], vec![2.0f64]);
        let y = Tensor::param(&[1], vec![3.0f64]);
        let z = x.mul(&y);
        z.backward();
        assert_eq!(x.grad().unwrap(), vec![3.0]);
        assert_eq!(y.grad().unwrap(), vec![2.0]);
    }

    #[test]
    fn grads_accumulate_across_backwards() {
        let x = Tensor::param(&[1], vec![2.0f64]);
        let y1 = x.mul(&x);
        y1.backward();
        let y2 = x.mul(&x);
        y2.backward();
        assert_eq!(x.grad().unwrap(), vec![8.0]); // 4.0 twice
    }

    #[test]
    fn diamond_graph_visits_once() {
        // z = (x*x) + (x*x) reusing the same intermediate node
        let x = Tensor::param(&[1], vec![3.0f64]);
        let sq = x.mul(&x);
        let z = sq.add(&sq);
        z.backward();
        // dz/dx = 2 * 2x = 12
        assert_eq!(x.grad().unwrap(), vec![12.0]);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_requires_scalar() {
        let x = Tensor::param(&[2], vec![1.0f64, 2.0]);
        let y = x.add(&x);
        y.backward();
    }

    #[test]
    #[should_panic(expected = "cannot mutate")]
    fn op_outputs_are_immutable() {
        let x = Tensor::param(&[1], vec![1.0f64]);
        let y = x.exp();
        y.values_mut()[0] = 0.0;
    }
}
