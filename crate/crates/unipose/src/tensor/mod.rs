//! Minimal dense-tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are 4-D `(N, C, H, W)`, row-major with `W` fastest, and immutable
//! once created; the only interior mutability is gradient accumulation during
//! a backward pass. Ops that see a gradient-requiring input record a node on
//! the implicit tape; [`Tensor::backward`] walks the recorded graph in reverse
//! topological order and sums gradient contributions into every
//! `requires_grad` leaf.
//!
//! The element type is generic over [`Element`] (`f32` or `f64`). The pipeline
//! runs in `f32`; gradient checking instantiates the same code in `f64`, where
//! central finite differences are trustworthy.

mod conv;
mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, grad_check_multi, GradCheckReport};
pub use ops::{concat_channels, stack_batch};

use std::cell::RefCell;
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Element type of a tensor: `f32` for the standard pipeline, `f64` for
/// gradient-check mode.
pub trait Element:
    num_traits::Float + num_traits::NumAssign + std::iter::Sum + fmt::Debug + fmt::Display + Default + 'static
{
    const PRECISION: Precision;
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    const PRECISION: Precision = Precision::Standard32;
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    const PRECISION: Precision = Precision::Check64;
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Numeric mode of a computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Precision {
    /// 32-bit, the default for training and inference.
    Standard32,
    /// 64-bit, required for finite-difference gradient checks.
    Check64,
}

/// `(N, C, H, W)` dimensions of a tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    pub fn numel(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Linear index of `(n, c, h, w)` in the row-major buffer.
    #[inline]
    pub fn idx(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// A node recorded on the tape. `backward` receives the upstream gradient and
/// accumulates contributions into the node's parents.
pub(crate) trait GradFn<E: Element> {
    fn parents(&self) -> Vec<Tensor<E>>;
    fn backward(&self, grad_out: &[E]);
}

struct Inner<E: Element> {
    shape: Shape,
    data: Vec<E>,
    requires_grad: bool,
    grad: RefCell<Option<Vec<E>>>,
    grad_fn: RefCell<Option<Box<dyn GradFn<E>>>>,
}

impl<E: Element> Drop for Inner<E> {
    // Naive drop would recurse through the whole recorded graph and blow the
    // stack on long op chains. Instead, steal the grad_fn of every node that
    // is about to die and let the collected boxes drop flat, at this level.
    fn drop(&mut self) {
        let mut queue: Vec<Box<dyn GradFn<E>>> = Vec::new();
        if let Some(f) = self.grad_fn.get_mut().take() {
            queue.push(f);
        }
        let mut i = 0;
        while i < queue.len() {
            for p in queue[i].parents() {
                // Two handles means this clone plus the field inside the
                // queued box: the node dies when the queue drops.
                if Rc::strong_count(&p.inner) == 2 {
                    if let Some(f) = p.inner.grad_fn.borrow_mut().take() {
                        queue.push(f);
                    }
                }
            }
            i += 1;
        }
    }
}

/// Dense `(N, C, H, W)` tensor handle. Cloning is cheap and shares storage.
pub struct Tensor<E: Element = f32> {
    inner: Rc<Inner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<E: Element> fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

impl<E: Element> Tensor<E> {
    /// Leaf tensor from a row-major buffer.
    pub fn new(shape: Shape, data: Vec<E>) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::shape(
                "Tensor::new",
                format!("{} elements for shape {shape}", shape.numel()),
                format!("{} elements", data.len()),
            ));
        }
        Ok(Self::leaf(shape, data, false))
    }

    /// Leaf tensor that participates in gradient accumulation.
    pub fn new_param(shape: Shape, data: Vec<E>) -> Result<Self> {
        let t = Self::new(shape, data)?;
        Ok(Self::leaf(t.inner.shape, t.inner.data.clone(), true))
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::leaf(shape, vec![E::zero(); shape.numel()], false)
    }

    pub fn full(shape: Shape, value: E) -> Self {
        Self::leaf(shape, vec![value; shape.numel()], false)
    }

    fn leaf(shape: Shape, data: Vec<E>, requires_grad: bool) -> Self {
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                grad_fn: RefCell::new(None),
            }),
        }
    }

    pub(crate) fn from_op(shape: Shape, data: Vec<E>, grad_fn: Box<dyn GradFn<E>>) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        let requires_grad = grad_fn.parents().iter().any(|p| p.requires_grad());
        if requires_grad {
            Tensor {
                inner: Rc::new(Inner {
                    shape,
                    data,
                    requires_grad: true,
                    grad: RefCell::new(None),
                    grad_fn: RefCell::new(Some(grad_fn)),
                }),
            }
        } else {
            Self::leaf(shape, data, false)
        }
    }

    pub fn shape(&self) -> Shape {
        self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.numel()
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    /// Value at `(n, c, h, w)`. Convenience accessor for tests and decoding;
    /// hot paths index the raw slice.
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> E {
        self.inner.data[self.inner.shape.idx(n, c, h, w)]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Copy of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow().clone()
    }

    /// Take the accumulated gradient, leaving none behind.
    pub fn take_grad(&self) -> Option<Vec<E>> {
        self.inner.grad.borrow_mut().take()
    }

    pub fn clear_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// New leaf with the same data, cut off from the recorded graph.
    pub fn detach(&self) -> Tensor<E> {
        Self::leaf(self.inner.shape, self.inner.data.clone(), false)
    }

    /// Same data as a fresh gradient-requiring leaf.
    pub fn detach_as_param(&self) -> Tensor<E> {
        Self::leaf(self.inner.shape, self.inner.data.clone(), true)
    }

    pub(crate) fn accumulate_grad(&self, contrib: &[E]) {
        debug_assert_eq!(contrib.len(), self.numel());
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, ci) in g.iter_mut().zip(contrib) {
                    *gi += *ci;
                }
            }
            None => *slot = Some(contrib.to_vec()),
        }
    }

    fn node_id(&self) -> usize {
        Rc::as_ptr(&self.inner) as usize
    }

    /// Reverse-mode backward pass from a scalar loss. Gradients sum into every
    /// reachable `requires_grad` tensor; call [`Tensor::take_grad`] or
    /// [`Tensor::clear_grad`] on leaves to reset between steps.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarLoss(self.numel()));
        }
        if !self.requires_grad() {
            return Err(Error::InvalidArgument(
                "backward on a tensor that does not require gradients".into(),
            ));
        }
        self.accumulate_grad(&[E::one()]);

        // Iterative post-order DFS, then reversed, gives a topological order
        // with the loss first.
        let mut order: Vec<Tensor<E>> = Vec::new();
        let mut seen: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<E>, bool)> = vec![(self.clone(), false)];
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                order.push(node);
                continue;
            }
            if !seen.insert(node.node_id()) {
                continue;
            }
            let parents = node
                .inner
                .grad_fn
                .borrow()
                .as_ref()
                .map(|f| f.parents())
                .unwrap_or_default();
            stack.push((node, true));
            for p in parents {
                if p.requires_grad() && !seen.contains(&p.node_id()) {
                    stack.push((p, false));
                }
            }
        }

        for node in order.iter().rev() {
            let grad_fn = node.inner.grad_fn.borrow();
            if let Some(grad_fn) = grad_fn.as_ref() {
                let grad = node.inner.grad.borrow().clone();
                if let Some(g) = grad {
                    grad_fn.backward(&g);
                }
            }
        }
        Ok(())
    }
}
