//! Reverse-mode autodiff over dense row-major tensors of rank 1..=4.
//!
//! A `Tensor` is an immutable value plus an optional edge back into the
//! expression graph that produced it. Graphs are built eagerly by the op
//! functions; `backward` on a scalar root walks the graph once in reverse
//! topological order and accumulates gradients into the leaf tensors that
//! were created with `requires_grad` (parameters). Intermediate gradients
//! live only for the duration of the walk.
//!
//! Everything is single threaded and loop-order deterministic: two identical
//! programs produce bitwise identical values and gradients.

mod conv;
mod elementwise;
mod matmul;
mod norm;
mod resize;
mod shapeops;
mod shuffle;
mod softmax;

pub use conv::{conv2d, pad2d, Conv2dSpec, PadMode, PadSpec};
pub use norm::layer_norm_channels;
pub use shapeops::concat;

use alloc::boxed::Box;
use alloc::collections::BTreeMap;
use alloc::rc::Rc;
use alloc::vec;
use alloc::vec::Vec;
use core::cell::RefCell;
use core::sync::atomic::{AtomicU64, Ordering};

use num_traits::{Float, FromPrimitive};

use crate::error::{Error, Result};
use crate::shape::Shape;

/// Element type of a tensor. The two implementors are `f32` (compute dtype)
/// and `f64` (oracle and finite-difference dtype).
pub trait Scalar:
    Float + FromPrimitive + core::ops::AddAssign + core::fmt::Debug + core::fmt::Display + 'static
{
    /// Tag byte used by the checkpoint encoding.
    const DTYPE_TAG: u8;
    /// Branch-free widening for f64 accumulators in hot loops.
    fn to64(self) -> f64;
    fn from64(v: f64) -> Self;
}

impl Scalar for f32 {
    const DTYPE_TAG: u8 = 0;
    #[inline(always)]
    fn to64(self) -> f64 {
        self as f64
    }
    #[inline(always)]
    fn from64(v: f64) -> Self {
        v as f32
    }
}
impl Scalar for f64 {
    const DTYPE_TAG: u8 = 1;
    #[inline(always)]
    fn to64(self) -> f64 {
        self
    }
    #[inline(always)]
    fn from64(v: f64) -> Self {
        v
    }
}

/// Shorthand for constant conversion into the element type.
pub(crate) fn c<T: Scalar>(v: f64) -> T {
    T::from64(v)
}

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Per-node backward pass: reads the incoming gradient from `ctx` and
/// scatters contributions into the parents' entries of the grad map.
type BackFn<T> = Box<dyn Fn(&BackCtx<'_, T>, &mut GradMap<T>)>;

pub(crate) struct BackCtx<'a, T: Scalar> {
    pub grad: &'a [T],
    pub value: &'a [T],
    pub parents: &'a [Tensor<T>],
}

/// Transient gradient storage keyed by node id. BTreeMap keeps the walk
/// allocation-deterministic; ids are monotone so ordering is creation order.
pub(crate) struct GradMap<T: Scalar> {
    map: BTreeMap<u64, Vec<T>>,
}

impl<T: Scalar> GradMap<T> {
    fn new() -> Self {
        GradMap {
            map: BTreeMap::new(),
        }
    }

    /// Gradient buffer for `t`, zero-initialised on first touch. Returns
    /// `None` for parents that do not require grad so callers can skip work.
    pub(crate) fn accum(&mut self, t: &Tensor<T>) -> Option<&mut [T]> {
        if !t.requires_grad() {
            return None;
        }
        Some(
            self.map
                .entry(t.id())
                .or_insert_with(|| vec![T::zero(); t.numel()])
                .as_mut_slice(),
        )
    }

    fn take(&mut self, id: u64) -> Option<Vec<T>> {
        self.map.remove(&id)
    }
}

struct Node<T: Scalar> {
    id: u64,
    shape: Shape,
    data: Vec<T>,
    requires_grad: bool,
    /// Accumulated gradient; populated by `backward` for grad-requiring
    /// leaves only, additive across calls.
    grad: RefCell<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    backward: Option<BackFn<T>>,
}

#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    inner: Rc<Node<T>>,
}

impl<T: Scalar> Tensor<T> {
    fn make(
        shape: Shape,
        data: Vec<T>,
        requires_grad: bool,
        parents: Vec<Tensor<T>>,
        backward: Option<BackFn<T>>,
    ) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor {
            inner: Rc::new(Node {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: RefCell::new(None),
                parents,
                backward,
            }),
        }
    }

    /// Plain value leaf; gradients do not flow into it.
    pub fn from_vec(op: &'static str, data: Vec<T>, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(op, dims)?;
        if shape.numel() != data.len() {
            return Err(Error::ShapeMismatch {
                op,
                axis: 0,
                expected: shape.numel(),
                found: data.len(),
            });
        }
        Ok(Tensor::make(shape, data, false, Vec::new(), None))
    }

    /// Leaf that participates in backward: a parameter.
    pub fn var(op: &'static str, data: Vec<T>, dims: &[usize]) -> Result<Self> {
        let t = Tensor::from_vec(op, data, dims)?;
        Ok(Tensor::make(
            t.inner.shape.clone(),
            t.inner.data.clone(),
            true,
            Vec::new(),
            None,
        ))
    }

    pub fn full(value: T, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new("full", dims)?;
        let n = shape.numel();
        Ok(Tensor::make(shape, vec![value; n], false, Vec::new(), None))
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Tensor::full(T::zero(), dims)
    }

    pub fn scalar(value: T) -> Self {
        Tensor::full(value, &[1]).expect("scalar shape is valid")
    }

    /// Internal op constructor. Grad tracking is dropped entirely when no
    /// parent requires it, so inference graphs carry no closures.
    ///
    /// Debug builds scan the fresh buffer for non-finite values here, which
    /// puts a fail-fast check under every op in the crate.
    pub(crate) fn from_op(
        op: &'static str,
        data: Vec<T>,
        dims: &[usize],
        parents: Vec<Tensor<T>>,
        backward: BackFn<T>,
    ) -> Result<Self> {
        let shape = Shape::new(op, dims)?;
        debug_assert_eq!(shape.numel(), data.len(), "{op}: bad output buffer");
        #[cfg(debug_assertions)]
        {
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op });
            }
        }
        let requires_grad = parents.iter().any(|p| p.requires_grad());
        if requires_grad {
            Ok(Tensor::make(shape, data, true, parents, Some(backward)))
        } else {
            Ok(Tensor::make(shape, data, false, Vec::new(), None))
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &Shape {
        &self.inner.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.inner.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.rank()
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.numel()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<T> {
        if self.numel() != 1 {
            return Err(Error::NonScalarRoot {
                numel: self.numel(),
            });
        }
        Ok(self.inner.data[0])
    }

    /// Accumulated gradient of a grad-requiring leaf, if backward has
    /// deposited one.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    fn accumulate_leaf_grad(&self, g: &[T]) {
        let mut slot = self.inner.grad.borrow_mut();
        match slot.as_mut() {
            Some(buf) => {
                for (b, &v) in buf.iter_mut().zip(g) {
                    *b += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Reverse-mode sweep from a scalar root. Gradients accumulate into the
    /// grad slots of reachable grad-requiring leaves; calling twice without
    /// `zero_grad` doubles them. Non-scalar roots are rejected.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::NonScalarRoot {
                numel: self.numel(),
            });
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS over grad-requiring parents. Reversed it
        // yields a topological order: every node before all of its inputs.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: alloc::collections::BTreeSet<u64> = alloc::collections::BTreeSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.id());
        while let Some((node, pi)) = stack.pop() {
            if pi < node.inner.parents.len() {
                stack.push((node.clone(), pi + 1));
                let p = node.inner.parents[pi].clone();
                if p.requires_grad() && visited.insert(p.id()) {
                    stack.push((p, 0));
                }
            } else {
                order.push(node);
            }
        }

        let mut grads = GradMap::new();
        grads.map.insert(self.id(), vec![T::one()]);

        for node in order.iter().rev() {
            let g = match grads.take(node.id()) {
                Some(g) => g,
                None => continue,
            };
            match &node.inner.backward {
                Some(back) => {
                    let ctx = BackCtx {
                        grad: &g,
                        value: &node.inner.data,
                        parents: &node.inner.parents,
                    };
                    back(&ctx, &mut grads);
                }
                None => node.accumulate_leaf_grad(&g),
            }
        }
        Ok(())
    }
}

impl<T: Scalar> core::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

/// Two tensors must agree exactly in shape; names the first differing axis.
pub(crate) fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.rank() != b.rank() {
        return Err(Error::RankMismatch {
            op,
            expected: a.rank(),
            found: b.rank(),
        });
    }
    for (axis, (&da, &db)) in a.dims().iter().zip(b.dims()).enumerate() {
        if da != db {
            return Err(Error::ShapeMismatch {
                op,
                axis,
                expected: da,
                found: db,
            });
        }
    }
    Ok(())
}
