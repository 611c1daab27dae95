//! Fixed-rank tensors.
//!
//! Every value in the crate is a rank-4 tensor with extents
//! `(batch, channels, height, width)` stored contiguously in row-major
//! order, `w` fastest. Tensors are immutable after construction and cheap to
//! clone (the buffer is shared); operations allocate fresh outputs. Each
//! tensor carries a process-unique id, which is what the gradient graph
//! records, and a `requires_grad` flag marking it as a differentiation leaf.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Extents of a rank-4 tensor: batch, channels, height, width.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub b: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(b: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { b, c, h, w }
    }

    /// The shape of a scalar: `(1, 1, 1, 1)`.
    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn numel(&self) -> usize {
        self.b * self.c * self.h * self.w
    }

    /// Elements in one `(height, width)` plane.
    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub const fn is_scalar(&self) -> bool {
        self.b == 1 && self.c == 1 && self.h == 1 && self.w == 1
    }

    /// Flat row-major offset of `(b, c, h, w)`.
    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> usize {
        debug_assert!(b < self.b && c < self.c && h < self.h && w < self.w);
        ((b * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.b, self.c, self.h, self.w)
    }
}

pub type TensorId = u64;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

fn fresh_id() -> TensorId {
    NEXT_ID.fetch_add(1, Ordering::Relaxed)
}

/// Immutable rank-4 tensor with a shared buffer.
#[derive(Clone)]
pub struct Tensor<T: Scalar> {
    shape: Shape,
    data: Arc<Vec<T>>,
    requires_grad: bool,
    id: TensorId,
}

impl<T: Scalar> Tensor<T> {
    /// A non-leaf tensor from a row-major buffer.
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        Self::checked(shape, data, false)
    }

    /// A differentiation leaf (`requires_grad` set) from a row-major buffer.
    pub fn param(shape: Shape, data: Vec<T>) -> Result<Self> {
        Self::checked(shape, data, true)
    }

    fn checked(shape: Shape, data: Vec<T>, requires_grad: bool) -> Result<Self> {
        if data.len() != shape.numel() {
            return Err(Error::invalid(
                "tensor",
                format!(
                    "buffer holds {} elements but shape {} needs {}",
                    data.len(),
                    shape,
                    shape.numel()
                ),
            ));
        }
        Ok(Self::from_vec(shape, data, requires_grad))
    }

    pub(crate) fn from_vec(shape: Shape, data: Vec<T>, requires_grad: bool) -> Self {
        debug_assert_eq!(data.len(), shape.numel());
        Tensor {
            shape,
            data: Arc::new(data),
            requires_grad,
            id: fresh_id(),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::from_vec(shape, vec![T::zero(); shape.numel()], false)
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Self::from_vec(shape, vec![value; shape.numel()], false)
    }

    /// Builds a tensor by evaluating `f` at every `(b, c, h, w)` in row-major
    /// order.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.b {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(b, c, h, w));
                    }
                }
            }
        }
        Self::from_vec(shape, data, false)
    }

    /// A single-plane `(1, 1, h, w)` tensor from nested rows. Convenient for
    /// small literals; rows must have equal length.
    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if h == 0 || w == 0 {
            return Err(Error::invalid("tensor", "from_rows needs a non-empty grid"));
        }
        let mut data = Vec::with_capacity(h * w);
        for row in rows {
            if row.len() != w {
                return Err(Error::invalid("tensor", "from_rows rows differ in length"));
            }
            data.extend(row.iter().map(|&v| T::from_f64(v)));
        }
        Ok(Self::from_vec(Shape::new(1, 1, h, w), data, false))
    }

    /// Same buffer under a new shape with equal element count. Shares the
    /// underlying allocation; the result is a fresh tensor id.
    pub(crate) fn with_shape_shared(&self, shape: Shape, requires_grad: bool) -> Self {
        debug_assert_eq!(shape.numel(), self.shape.numel());
        Tensor {
            shape,
            data: Arc::clone(&self.data),
            requires_grad,
            id: fresh_id(),
        }
    }

    /// The same values as a fresh differentiation leaf (new id).
    pub fn to_param(&self) -> Self {
        Tensor {
            shape: self.shape,
            data: Arc::clone(&self.data),
            requires_grad: true,
            id: fresh_id(),
        }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.shape.numel()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn id(&self) -> TensorId {
        self.id
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    /// Value at `(b, c, h, w)`.
    #[inline]
    pub fn at(&self, b: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.at(b, c, h, w)]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "Tensor{} id={} requires_grad={}",
            self.shape, self.id, self.requires_grad
        )
    }
}
