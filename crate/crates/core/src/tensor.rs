//! Dense N-d tensors with optional gradient buffers and autograd lineage.
//!
//! Layout is always contiguous row-major; 5-d activations use N,C,D,H,W.
//! A tensor's data is immutable after creation — only the gradient buffer
//! is written to, during `backward`. Handles are cheap to clone (`Arc`).

use std::fmt;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use thiserror::Error;

/// Scalar element type: 32-bit for training, 64-bit for gradient checking.
pub trait Element:
    num_traits::Float + fmt::Debug + fmt::Display + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch on axis {axis}: expected {expected}, got {got} ({context})")]
    ShapeMismatch {
        axis: usize,
        expected: usize,
        got: usize,
        context: String,
    },
    #[error("rank mismatch: expected {expected}-d, got {got}-d ({context})")]
    RankMismatch {
        expected: usize,
        got: usize,
        context: String,
    },
    #[error("extent {extent} on axis {axis} is not divisible by {divisor} ({context})")]
    Indivisible {
        axis: usize,
        extent: usize,
        divisor: usize,
        context: String,
    },
    #[error("backward requires a scalar, got {numel} elements")]
    NonScalarBackward { numel: usize },
    #[error("backward on a tensor with no recorded lineage")]
    NoLineage,
    #[error("backward called twice on the same tensor without reset")]
    BackwardConsumed,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<V> = std::result::Result<V, TensorError>;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

pub(crate) type BackwardFn<T> =
    Box<dyn Fn(&[T], &[T], &[bool]) -> Vec<Option<Vec<T>>> + Send + Sync>;

/// One recorded operation: the parent tensors plus a closure mapping
/// (output data, output grad, per-parent needs mask) to per-parent grads.
pub(crate) struct Lineage<T: Element> {
    pub parents: Vec<Tensor<T>>,
    pub backward: BackwardFn<T>,
}

pub(crate) struct Inner<T: Element> {
    pub id: u64,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
    pub requires_grad: bool,
    pub grad: Mutex<Option<Vec<T>>>,
    pub lineage: Option<Lineage<T>>,
    pub backward_consumed: AtomicBool,
}

/// Handle to an immutable N-d array, optionally carrying a grad buffer and
/// the lineage needed to backpropagate through the op that produced it.
pub struct Tensor<T: Element = f32> {
    pub(crate) inner: Arc<Inner<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor(id={}, shape={:?}, requires_grad={})",
            self.inner.id, self.inner.shape, self.inner.requires_grad
        )
    }
}

impl<T: Element> Tensor<T> {
    /// Leaf tensor from raw data. Panics if `data.len() != product(shape)`.
    pub fn from_vec(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(
            numel,
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                lineage: None,
                backward_consumed: AtomicBool::new(false),
            }),
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![T::zero(); numel], false)
    }

    pub fn full(shape: Vec<usize>, value: T) -> Self {
        let numel = shape.iter().product();
        Tensor::from_vec(shape, vec![value; numel], false)
    }

    pub fn scalar(value: T) -> Self {
        Tensor::from_vec(vec![1], vec![value], false)
    }

    /// Output of a recorded op. Lineage is kept only when some parent
    /// participates in gradient computation; otherwise the result is a
    /// plain constant and the closure is dropped.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        let track = parents
            .iter()
            .any(|p| p.inner.requires_grad || p.inner.lineage.is_some());
        let numel: usize = shape.iter().product();
        debug_assert_eq!(numel, data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad: false,
                grad: Mutex::new(None),
                lineage: if track {
                    Some(Lineage { parents, backward })
                } else {
                    None
                },
                backward_consumed: AtomicBool::new(false),
            }),
        }
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.inner.data
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub(crate) fn has_lineage(&self) -> bool {
        self.inner.lineage.is_some()
    }

    /// Whether this tensor needs a gradient during backward, either for
    /// itself or to keep propagating to ancestors.
    pub(crate) fn on_grad_path(&self) -> bool {
        self.inner.requires_grad || self.inner.lineage.is_some()
    }

    /// Snapshot of the accumulated gradient, if any.
    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().clone()
    }

    /// Take the gradient out, leaving none (the "zero grads" step).
    pub fn take_grad(&self) -> Option<Vec<T>> {
        self.inner.grad.lock().unwrap().take()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().unwrap() = None;
    }

    pub(crate) fn accumulate_grad(&self, delta: &[T]) {
        let mut guard = self.inner.grad.lock().unwrap();
        match guard.as_mut() {
            Some(g) => {
                for (gi, &di) in g.iter_mut().zip(delta) {
                    *gi = *gi + di;
                }
            }
            None => *guard = Some(delta.to_vec()),
        }
    }

    /// Scalar value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.numel(), 1, "item() on tensor with {} elements", self.numel());
        self.inner.data[0]
    }

    /// Same data reinterpreted under a new shape (no copy of lineage; the
    /// result is a leaf view used for shape bookkeeping on constants).
    pub fn reshaped(&self, shape: Vec<usize>) -> Result<Tensor<T>> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(TensorError::Invalid(format!(
                "cannot reshape {} elements into {:?}",
                self.numel(),
                shape
            )));
        }
        Ok(Tensor::from_vec(shape, self.inner.data.clone(), false))
    }

    /// Detached copy: same data, no lineage, optionally trainable.
    pub fn detached(&self, requires_grad: bool) -> Tensor<T> {
        Tensor::from_vec(self.inner.shape.clone(), self.inner.data.clone(), requires_grad)
    }

    pub fn as_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|v| v.as_f64()).collect()
    }
}

/// Checks that two shapes agree exactly, naming the first offending axis.
pub fn check_same_shape<T: Element>(a: &Tensor<T>, b: &Tensor<T>, context: &str) -> Result<()> {
    if a.shape().len() != b.shape().len() {
        return Err(TensorError::RankMismatch {
            expected: a.shape().len(),
            got: b.shape().len(),
            context: context.to_string(),
        });
    }
    for (axis, (&ea, &eb)) in a.shape().iter().zip(b.shape()).enumerate() {
        if ea != eb {
            return Err(TensorError::ShapeMismatch {
                axis,
                expected: ea,
                got: eb,
                context: context.to_string(),
            });
        }
    }
    Ok(())
}

pub(crate) fn expect_rank<T: Element>(t: &Tensor<T>, rank: usize, context: &str) -> Result<()> {
    if t.shape().len() != rank {
        return Err(TensorError::RankMismatch {
            expected: rank,
            got: t.shape().len(),
            context: context.to_string(),
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn leaf_construction_and_accessors() {
        let t: Tensor<f32> = Tensor::from_vec(vec![2, 3], vec![1.0; 6], true);
        assert_eq!(t.shape(), &[2, 3]);
        assert_eq!(t.numel(), 6);
        assert!(t.requires_grad());
        assert!(t.grad().is_none());
    }

    #[test]
    #[should_panic(expected = "does not match shape")]
    fn length_shape_invariant_enforced() {
        let _: Tensor<f32> = Tensor::from_vec(vec![2, 3], vec![0.0; 5], false);
    }

    #[test]
    fn grad_accumulates_additively() {
        let t: Tensor<f64> = Tensor::from_vec(vec![3], vec![0.0; 3], true);
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), vec![2.0, 3.0, 4.0]);
        t.zero_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn shape_check_names_offending_axis() {
        let a: Tensor<f32> = Tensor::zeros(vec![1, 2, 4]);
        let b: Tensor<f32> = Tensor::zeros(vec![1, 3, 4]);
        let err = check_same_shape(&a, &b, "add").unwrap_err();
        match err {
            TensorError::ShapeMismatch { axis, expected, got, .. } => {
                assert_eq!((axis, expected, got), (1, 2, 3));
            }
            other => panic!("unexpected error {other:?}"),
        }
    }
}
