//! Dense N×C×H×W tensors and the reverse-mode tape that differentiates them.

mod graph;
mod io;
mod kernels;

pub use graph::{BinaryOp, Gradients, Graph, LogMode, Reduction, Resample, UnaryOp, Var};
pub use io::{decode_tensor, encode_tensor, read_tensor, write_tensor, TENSOR_MAGIC};
pub use kernels::OutOfBounds;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Batch, channels, height, width.
pub type Shape = [usize; 4];

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

/// Plain tensor value. Carries no graph state; the [`Graph`] owns
/// differentiation records and gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: Shape, data: Vec<T>) -> Result<Self> {
        if data.len() != numel(&shape) {
            return Err(Error::InvalidShape {
                op: "from_vec",
                reason: format!("{} values for shape {:?}", data.len(), shape),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: Shape, value: T) -> Self {
        Tensor {
            shape,
            data: vec![value; numel(&shape)],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Self::full([1, 1, 1, 1], value)
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> T) -> Self {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(numel(&shape));
        for ni in 0..n {
            for ci in 0..c {
                for hi in 0..h {
                    for wi in 0..w {
                        data.push(f(ni, ci, hi, wi));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, h: usize, w: usize) -> usize {
        let [_, cs, hs, ws] = self.shape;
        ((n * cs + c) * hs + h) * ws + w
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, h: usize, w: usize) -> T {
        self.data[self.index(n, c, h, w)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, h: usize, w: usize, v: T) {
        let i = self.index(n, c, h, w);
        self.data[i] = v;
    }

    /// Single value of a one-element tensor.
    pub fn item(&self) -> T {
        self.data[0]
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(T, T) -> T) -> Result<Self> {
        self.check_same(other, "zip_map")?;
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

    pub fn check_same(&self, other: &Self, op: &'static str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                op,
                left: self.shape,
                right: other.shape,
            });
        }
        Ok(())
    }

    pub fn reshape(mut self, shape: Shape) -> Result<Self> {
        if numel(&shape) != self.data.len() {
            return Err(Error::InvalidShape {
                op: "reshape",
                reason: format!("{:?} into {:?}", self.shape, shape),
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn mean(&self) -> T {
        self.sum() / T::of(self.data.len() as f64)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Item `n` of the batch as a 1×C×H×W tensor.
    pub fn batch_item(&self, n: usize) -> Self {
        let [_, c, h, w] = self.shape;
        let len = c * h * w;
        Tensor {
            shape: [1, c, h, w],
            data: self.data[n * len..(n + 1) * len].to_vec(),
        }
    }

    /// Concatenates along the batch axis.
    pub fn stack(items: &[Tensor<T>]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::Empty("stack of zero tensors".into()))?;
        let [_, c, h, w] = first.shape;
        let mut data = Vec::new();
        let mut n = 0;
        for t in items {
            if t.shape[1..] != first.shape[1..] {
                return Err(Error::ShapeMismatch {
                    op: "stack",
                    left: first.shape,
                    right: t.shape,
                });
            }
            n += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor {
            shape: [n, c, h, w],
            data,
        })
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
        }
    }

    /// Largest absolute elementwise difference.
    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.check_same(other, "max_abs_diff")?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs().to_f64_lossy())
            .fold(0.0, f64::max))
    }
}
