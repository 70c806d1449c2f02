use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, RwLock, RwLockReadGuard};

use rand::Rng;

use super::ops::Op;
use crate::error::{Error, Result};

/// Scalar type the engine runs on. Training and inference use `f32`;
/// gradient-check tests instantiate everything with `f64`.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + std::fmt::Debug
    + std::fmt::Display
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

static NEXT_ID: AtomicU64 = AtomicU64::new(0);

pub(crate) struct Inner<T: Real> {
    pub(crate) id: u64,
    pub(crate) shape: Vec<usize>,
    pub(crate) data: RwLock<Vec<T>>,
    pub(crate) grad: RwLock<Option<Vec<T>>>,
    pub(crate) requires_grad: bool,
    pub(crate) op: Option<Op<T>>,
}

/// Dense n-dimensional float tensor participating in a reverse-mode gradient
/// tape. Data is row-major and immutable after forward creation; only the
/// optimizer writes leaf data in place between steps. Cloning is cheap (Arc).
pub struct Tensor<T: Real> {
    pub(crate) inner: Arc<Inner<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<T: Real> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("id", &self.inner.id)
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad)
            .finish()
    }
}

// Dropping the last handle to a long op chain must not recurse through every
// parent. Disassemble the graph iteratively instead.
impl<T: Real> Drop for Inner<T> {
    fn drop(&mut self) {
        let mut stack: Vec<Op<T>> = self.op.take().into_iter().collect();
        while let Some(op) = stack.pop() {
            for parent in op.into_parents() {
                if let Some(mut inner) = Arc::into_inner(parent.inner) {
                    if let Some(parent_op) = inner.op.take() {
                        stack.push(parent_op);
                    }
                }
            }
        }
    }
}

impl<T: Real> Tensor<T> {
    /// Core constructor. `requires_grad` marks a trainable leaf.
    pub fn new(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("new", format!("zero extent in shape {shape:?}")));
        }
        if numel != data.len() {
            return Err(Error::shape(
                "new",
                format!("shape {shape:?} wants {numel} elements, got {}", data.len()),
            ));
        }
        Ok(Self::build(shape, data, requires_grad, None))
    }

    pub(crate) fn build(
        shape: Vec<usize>,
        data: Vec<T>,
        requires_grad: bool,
        op: Option<Op<T>>,
    ) -> Self {
        #[cfg(debug_assertions)]
        {
            if op.is_some() {
                debug_assert!(
                    data.iter().all(|v| v.is_finite()),
                    "non-finite value produced by forward op"
                );
            }
        }
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data: RwLock::new(data),
                grad: RwLock::new(None),
                requires_grad,
                op,
            }),
        }
    }

    pub fn constant(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        Self::new(shape, data, false)
    }

    pub fn param(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        Self::new(shape, data, true)
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::build(shape, vec![T::zero(); n], false, None)
    }

    pub fn scalar(v: T) -> Self {
        Self::build(vec![1], vec![v], false, None)
    }

    /// Seeded Gaussian init, sampled in f64 for cross-precision determinism.
    pub fn randn<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let g: f64 = sample_standard_normal(rng);
                T::from_f64(g * std)
            })
            .collect();
        Self::build(shape, data, false, None)
    }

    /// Truncated normal (redraw beyond two sigma).
    pub fn randn_truncated<R: Rng>(shape: Vec<usize>, std: f64, rng: &mut R) -> Self {
        let n: usize = shape.iter().product();
        let data = (0..n)
            .map(|_| {
                let mut g: f64 = sample_standard_normal(rng);
                while g.abs() > 2.0 {
                    g = sample_standard_normal(rng);
                }
                T::from_f64(g * std)
            })
            .collect();
        Self::build(shape, data, false, None)
    }

    /// Promote a leaf tensor to a trainable parameter.
    pub fn as_param(self) -> Self {
        assert!(self.inner.op.is_none(), "only leaf tensors become params");
        let data = self.inner.data.read().unwrap().clone();
        Self::build(self.inner.shape.clone(), data, true, None)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    /// 2-D accessor: (rows, cols). Scalars and 1-D tensors report cols = len.
    pub fn dims2(&self) -> (usize, usize) {
        match self.inner.shape.len() {
            1 => (1, self.inner.shape[0]),
            2 => (self.inner.shape[0], self.inner.shape[1]),
            _ => panic!("dims2 on {}-d tensor", self.inner.shape.len()),
        }
    }

    pub(crate) fn data_ref(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.inner.data.read().unwrap()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.read().unwrap().clone()
    }

    /// Scalar value of a single-element tensor.
    pub fn value(&self) -> T {
        let d = self.inner.data.read().unwrap();
        assert_eq!(d.len(), 1, "value() on non-scalar tensor");
        d[0]
    }

    /// In-place write of leaf data (optimizer updates, finite-difference probes).
    pub(crate) fn write_data(&self, f: impl FnOnce(&mut Vec<T>)) {
        let mut d = self.inner.data.write().unwrap();
        f(&mut d);
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.read().unwrap().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.write().unwrap() = None;
    }

    /// Accumulate (+=) into the stored gradient.
    pub(crate) fn accumulate_grad(&self, g: &[T]) {
        let mut slot = self.inner.grad.write().unwrap();
        match slot.as_mut() {
            Some(existing) => {
                for (e, &v) in existing.iter_mut().zip(g) {
                    *e += v;
                }
            }
            None => *slot = Some(g.to_vec()),
        }
    }

    pub(crate) fn op(&self) -> Option<&Op<T>> {
        self.inner.op.as_ref()
    }

    /// Constant copy cut off from the tape.
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), self.to_vec(), false, None)
    }

    pub fn is_finite(&self) -> bool {
        self.inner.data.read().unwrap().iter().all(|v| v.is_finite())
    }
}

/// Box-Muller standard normal from two uniform draws; keeps sampling
/// identical for f32 and f64 tensors built from the same rng stream.
pub(crate) fn sample_standard_normal<R: Rng>(rng: &mut R) -> f64 {
    loop {
        let u1: f64 = rng.gen::<f64>();
        let u2: f64 = rng.gen::<f64>();
        if u1 > 1e-300 {
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
