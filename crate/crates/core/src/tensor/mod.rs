//! NCHW tensors, zero-padded 2-D convolution and reverse-mode differentiation.
//!
//! [`Tensor`] is an immutable-by-convention value type: every operation
//! returns a fresh tensor. Storage is always contiguous row-major
//! `(n, c, h, w)`; there are no strided views.
//!
//! Convolution follows the deep-learning convention (cross-correlation, no
//! kernel flip) with symmetric zero padding of `(s - 1) / 2`, so the spatial
//! size of the input is preserved.

mod conv;
mod tape;

use std::cell::Cell;
use std::fmt;

use num_traits::Float;

use crate::error::{Error, Result};

pub use conv::conv2d_backward;
pub use tape::{Eager, Gradients, Graph, Tape, Var};

thread_local! {
    static NUM_THREADS: Cell<usize> = const { Cell::new(1) };
}

/// Sets the number of worker threads the calling thread uses for
/// batch-parallel convolution.
///
/// Results are bitwise reproducible for a fixed thread count. The default
/// is one.
pub fn set_num_threads(n: usize) {
    NUM_THREADS.with(|t| t.set(n.max(1)));
}

pub fn num_threads() -> usize {
    NUM_THREADS.with(|t| t.get())
}

/// Floating-point element type of a [`Tensor`].
///
/// Implemented for `f32` (training) and `f64` (gradient checks).
pub trait Scalar:
    Float + Default + fmt::Debug + fmt::Display + Send + Sync + std::iter::Sum + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;

    fn as_f64(self) -> f64;

    /// `c = alpha * a * b + beta * c` for row-major `c` of shape `m × n`.
    ///
    /// `a` is `m × k` and `b` is `k × n`, both addressed through explicit
    /// row/column strides so transposed operands need no copy.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        a_strides: (usize, usize),
        b: &[Self],
        b_strides: (usize, usize),
        beta: Self,
        c: &mut [Self],
    );
}

#[allow(clippy::too_many_arguments)]
fn check_gemm_bounds(
    m: usize,
    k: usize,
    n: usize,
    a_len: usize,
    (rsa, csa): (usize, usize),
    b_len: usize,
    (rsb, csb): (usize, usize),
    c_len: usize,
) {
    if m == 0 || n == 0 {
        return;
    }
    if k > 0 {
        assert!(
            (m - 1) * rsa + (k - 1) * csa < a_len,
            "gemm: lhs out of bounds"
        );
        assert!(
            (k - 1) * rsb + (n - 1) * csb < b_len,
            "gemm: rhs out of bounds"
        );
    }
    assert!(m * n <= c_len, "gemm: output out of bounds");
}

macro_rules! impl_scalar {
    ($t:ty, $name:literal, $gemm:path) => {
        impl Scalar for $t {
            const NAME: &'static str = $name;

            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }

            #[inline]
            fn as_f64(self) -> f64 {
                self as f64
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                a_strides: (usize, usize),
                b: &[Self],
                b_strides: (usize, usize),
                beta: Self,
                c: &mut [Self],
            ) {
                check_gemm_bounds(m, k, n, a.len(), a_strides, b.len(), b_strides, c.len());
                // SAFETY: every element addressed by the strides was bounds
                // checked above and `c` is uniquely borrowed.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        a_strides.0 as isize,
                        a_strides.1 as isize,
                        b.as_ptr(),
                        b_strides.0 as isize,
                        b_strides.1 as isize,
                        beta,
                        c.as_mut_ptr(),
                        n as isize,
                        1,
                    )
                }
            }
        }
    };
}

impl_scalar!(f32, "f32", matrixmultiply::sgemm);
impl_scalar!(f64, "f64", matrixmultiply::dgemm);

/// Dimensions of a 4-D tensor in `(n, c, h, w)` order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub const fn new(n: usize, c: usize, h: usize, w: usize) -> Self {
        Shape { n, c, h, w }
    }

    /// Shape of a per-channel vector that broadcasts over `(n, c, h, w)`.
    pub const fn channel_vector(c: usize) -> Self {
        Shape::new(1, c, 1, 1)
    }

    pub const fn scalar() -> Self {
        Shape::new(1, 1, 1, 1)
    }

    pub const fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub const fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        ((n * self.c + c) * self.h + h) * self.w + w
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}x{}x{}", self.n, self.c, self.h, self.w)
    }
}

/// A dense 4-D array in row-major NCHW layout.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::DimensionMismatch {
                op: "Tensor::new",
                expected: shape.len(),
                found: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self::filled(Shape::scalar(), value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..shape.n {
            for c in 0..shape.c {
                for h in 0..shape.h {
                    for w in 0..shape.w {
                        data.push(f(n, c, h, w));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.shape.index(n, c, h, w)]
    }

    /// Contiguous slice holding batch item `n`.
    pub fn item(&self, n: usize) -> &[T] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.expect_same_shape(other, op)?;
        Ok(Tensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub(crate) fn expect_same_shape(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape,
                rhs: other.shape,
            });
        }
        Ok(())
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn relu(&self) -> Self {
        self.map(relu_scalar)
    }

    /// Subtracts a per-channel vector of shape `(1, c, 1, 1)`.
    pub fn sub_channel(&self, v: &Self) -> Result<Self> {
        self.broadcast_channel(v, "sub_channel", |a, b| a - b)
    }

    /// Adds a per-channel vector of shape `(1, c, 1, 1)`.
    pub fn add_channel(&self, v: &Self) -> Result<Self> {
        self.broadcast_channel(v, "add_channel", |a, b| a + b)
    }

    fn broadcast_channel(&self, v: &Self, op: &'static str, f: impl Fn(T, T) -> T) -> Result<Self> {
        if v.shape != Shape::channel_vector(self.shape.c) {
            return Err(Error::ShapeMismatch {
                op,
                lhs: self.shape,
                rhs: v.shape,
            });
        }
        let plane = self.shape.plane();
        let mut data = Vec::with_capacity(self.len());
        for (i, chunk) in self.data.chunks(plane.max(1)).enumerate() {
            let b = v.data[i % self.shape.c];
            data.extend(chunk.iter().map(|&a| f(a, b)));
        }
        Ok(Tensor {
            shape: self.shape,
            data,
        })
    }

    /// Sums each channel over batch and space into a `(1, c, 1, 1)` vector.
    pub fn channel_sums(&self) -> Self {
        let plane = self.shape.plane();
        let mut out = vec![T::zero(); self.shape.c];
        for (i, chunk) in self.data.chunks(plane.max(1)).enumerate() {
            let acc = &mut out[i % self.shape.c];
            for &v in chunk {
                *acc = *acc + v;
            }
        }
        Tensor {
            shape: Shape::channel_vector(self.shape.c),
            data: out,
        }
    }

    /// Sum of all elements, accumulated in 64-bit.
    pub fn sum_f64(&self) -> f64 {
        self.data.iter().map(|v| v.as_f64()).sum()
    }

    /// Mean of squared differences, accumulated in 64-bit.
    pub fn mse(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other, "mse")?;
        if self.is_empty() {
            return Err(Error::Empty("mse of empty tensors"));
        }
        let sum: f64 = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| {
                let d = a.as_f64() - b.as_f64();
                d * d
            })
            .sum();
        Ok(sum / self.len() as f64)
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &v| if v.abs() > m { v.abs() } else { m })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    /// Zero-padded, size-preserving 2-D cross-correlation.
    ///
    /// `kernel` has shape `(out_channels, in_channels, s, s)` with `s` odd;
    /// `bias`, when present, is a `(1, out_channels, 1, 1)` vector.
    pub fn conv2d(&self, kernel: &Self, bias: Option<&Self>) -> Result<Self> {
        let out = conv::conv2d_forward(self, kernel)?;
        match bias {
            Some(b) => out.add_channel(b),
            None => Ok(out),
        }
    }
}

#[inline]
pub(crate) fn relu_scalar<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        v
    } else {
        T::zero()
    }
}
