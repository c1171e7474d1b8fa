//! A small reverse-mode automatic differentiation engine.
//!
//! Tensors are reference-counted nodes of a dynamically built graph. Every
//! operation records its inputs and a backward rule; calling
//! [`Tensor::backward`] on a scalar walks the graph in reverse creation order
//! and accumulates gradients into every leaf that requires them.
//!
//! Image tensors use the NHWC layout throughout.

mod conv;
mod norm;
mod ops;
mod real;

use std::cell::{Cell, Ref, RefCell};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

pub use norm::BatchStats;
pub use real::Real;
pub(crate) use real::gemm;

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn next_id() -> u64 {
    NEXT_ID.with(|id| {
        let v = id.get();
        id.set(v + 1);
        v
    })
}

/// Whether operations currently record a backward graph.
pub fn grad_enabled() -> bool {
    GRAD_ENABLED.with(Cell::get)
}

struct GradModeGuard(bool);

impl Drop for GradModeGuard {
    fn drop(&mut self) {
        GRAD_ENABLED.with(|g| g.set(self.0));
    }
}

/// Runs `f` without recording gradients; every tensor it creates is a
/// constant.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    let _guard = GradModeGuard(GRAD_ENABLED.with(|g| g.replace(false)));
    f()
}

/// Backward rule of one recorded operation.
///
/// Returns one optional gradient per input, in input order. `None` means the
/// input receives no contribution.
pub(crate) trait Op<T: Real> {
    fn backward(&self, inputs: &[Tensor<T>], output: &[T], grad: &[T]) -> Vec<Option<Vec<T>>>;
}

struct Node<T: Real> {
    id: u64,
    value: RefCell<Vec<T>>,
    shape: Vec<usize>,
    grad: RefCell<Option<Vec<T>>>,
    requires_grad: bool,
    inputs: Vec<Tensor<T>>,
    op: Option<Box<dyn Op<T>>>,
}

/// A dense n-dimensional array participating in the autodiff graph.
pub struct Tensor<T: Real = f32>(Rc<Node<T>>);

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor(Rc::clone(&self.0))
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.0.shape)
            .field("requires_grad", &self.0.requires_grad)
            .finish()
    }
}

fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Real> Tensor<T> {
    fn make(
        value: Vec<T>,
        shape: Vec<usize>,
        requires_grad: bool,
        inputs: Vec<Tensor<T>>,
        op: Option<Box<dyn Op<T>>>,
    ) -> Self {
        assert_eq!(
            value.len(),
            numel(&shape),
            "tensor data length does not match shape {shape:?}"
        );
        Tensor(Rc::new(Node {
            id: next_id(),
            value: RefCell::new(value),
            shape,
            grad: RefCell::new(None),
            requires_grad,
            inputs,
            op,
        }))
    }

    /// A constant tensor (never receives gradients).
    pub fn new(data: Vec<T>, shape: &[usize]) -> Self {
        Self::make(data, shape.to_vec(), false, Vec::new(), None)
    }

    /// A trainable leaf. Gradients accumulate into it across backward passes
    /// until [`Tensor::zero_grad`] is called.
    pub fn parameter(data: Vec<T>, shape: &[usize]) -> Self {
        Self::make(data, shape.to_vec(), true, Vec::new(), None)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::new(vec![T::zero(); numel(shape)], shape)
    }

    pub fn scalar(v: T) -> Self {
        Self::new(vec![v], &[])
    }

    pub fn from_f32(data: &[f32], shape: &[usize]) -> Self {
        Self::new(data.iter().map(|&v| T::from_f32(v).unwrap()).collect(), shape)
    }

    /// Records the result of an operation. The backward rule is kept only when
    /// gradient recording is enabled and some input requires a gradient.
    pub(crate) fn from_op(
        value: Vec<T>,
        shape: Vec<usize>,
        inputs: Vec<Tensor<T>>,
        op: impl Op<T> + 'static,
    ) -> Self {
        let requires = grad_enabled() && inputs.iter().any(Tensor::requires_grad);
        if requires {
            Self::make(value, shape, true, inputs, Some(Box::new(op)))
        } else {
            Self::make(value, shape, false, Vec::new(), None)
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.0.shape
    }

    pub fn rank(&self) -> usize {
        self.0.shape.len()
    }

    pub fn len(&self) -> usize {
        numel(&self.0.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn requires_grad(&self) -> bool {
        self.0.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.0.op.is_none()
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.0.value.borrow()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.0.value.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        let v = self.0.value.borrow();
        assert_eq!(v.len(), 1, "item() on a tensor with {} elements", v.len());
        v[0]
    }

    /// Overwrites the values of a leaf in place (used by optimizers).
    pub fn update_data(&self, f: impl FnOnce(&mut [T])) {
        assert!(self.is_leaf(), "only leaves can be updated in place");
        f(&mut self.0.value.borrow_mut());
    }

    pub fn set_data(&self, data: &[T]) {
        self.update_data(|v| {
            assert_eq!(v.len(), data.len(), "set_data: size mismatch");
            v.copy_from_slice(data)
        });
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.0.grad.borrow().clone()
    }

    pub fn with_grad<R>(&self, f: impl FnOnce(Option<&[T]>) -> R) -> R {
        f(self.0.grad.borrow().as_deref())
    }

    pub fn zero_grad(&self) {
        self.0.grad.borrow_mut().take();
    }

    /// A constant copy of this tensor cut off from the graph.
    pub fn detach(&self) -> Self {
        Self::new(self.to_vec(), self.shape())
    }

    fn accumulate(&self, g: Vec<T>) {
        let mut slot = self.0.grad.borrow_mut();
        match slot.as_mut() {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => *slot = Some(g),
        }
    }

    /// Back-propagates from this scalar into every reachable leaf.
    pub fn backward(&self) {
        assert_eq!(self.len(), 1, "backward() requires a scalar output");
        if !self.requires_grad() {
            return;
        }
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack = vec![self.clone()];
        while let Some(t) = stack.pop() {
            if !seen.insert(t.0.id) {
                continue;
            }
            for inp in &t.0.inputs {
                if inp.requires_grad() && !seen.contains(&inp.0.id) {
                    stack.push(inp.clone());
                }
            }
            if !t.is_leaf() {
                order.push(t);
            }
        }
        // Inputs always predate their outputs, so decreasing ids is a valid
        // reverse topological order.
        order.sort_unstable_by_key(|n| std::cmp::Reverse(n.0.id));
        self.accumulate(vec![T::one()]);
        for node in order {
            let Some(g) = node.0.grad.borrow_mut().take() else {
                continue;
            };
            let op = node.0.op.as_ref().expect("interior node has an op");
            let value = node.0.value.borrow();
            let grads = op.backward(&node.0.inputs, &value, &g);
            debug_assert_eq!(grads.len(), node.0.inputs.len());
            for (inp, gi) in node.0.inputs.iter().zip(grads) {
                if let Some(gi) = gi {
                    if inp.requires_grad() {
                        debug_assert_eq!(gi.len(), inp.len());
                        inp.accumulate(gi);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests;
