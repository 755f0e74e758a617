//! Dense rank-4 `f32` tensor in `(batch, channels, height, width)` layout.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Errors raised by tensor construction and the numeric kernels.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("tensor dimension `{dim}` must be at least 1")]
    ZeroDim { dim: &'static str },
    #[error("data length {actual} does not match shape {shape} ({expected} elements)")]
    DataLength {
        shape: Shape,
        expected: usize,
        actual: usize,
    },
    #[error("shape mismatch in {dim}: expected {expected}, got {actual}")]
    DimMismatch {
        dim: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

pub type Result<T> = std::result::Result<T, TensorError>;

/// Four positive extents: batch, channels, height, width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Shape(pub [usize; 4]);

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        for (dim, v) in ["batch", "channels", "height", "width"]
            .into_iter()
            .zip([n, c, h, w])
        {
            if v == 0 {
                return Err(TensorError::ZeroDim { dim });
            }
        }
        Ok(Shape([n, c, h, w]))
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.0[0]
    }
    #[inline]
    pub fn c(&self) -> usize {
        self.0[1]
    }
    #[inline]
    pub fn h(&self) -> usize {
        self.0[2]
    }
    #[inline]
    pub fn w(&self) -> usize {
        self.0[3]
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn plane(&self) -> usize {
        self.h() * self.w()
    }

    pub fn with_channels(&self, c: usize) -> Shape {
        Shape([self.n(), c, self.h(), self.w()])
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let [n, c, h, w] = self.0;
        write!(f, "{n}x{c}x{h}x{w}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f32>) -> Result<Self> {
        let expected = shape.numel();
        if data.len() != expected {
            return Err(TensorError::DataLength {
                shape,
                expected,
                actual: data.len(),
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn from_vec(dims: [usize; 4], data: Vec<f32>) -> Result<Self> {
        let shape = Shape::new(dims[0], dims[1], dims[2], dims[3])?;
        Tensor::new(shape, data)
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.numel()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Tensor::full(shape, 0.0)
    }

    /// Builds a tensor by evaluating `f(b, c, y, x)` at every position.
    pub fn from_fn(shape: Shape, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let mut data = Vec::with_capacity(shape.numel());
        for b in 0..shape.n() {
            for c in 0..shape.c() {
                for y in 0..shape.h() {
                    for x in 0..shape.w() {
                        data.push(f(b, c, y, x));
                    }
                }
            }
        }
        Tensor { shape, data }
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    fn offset(&self, b: usize, c: usize, y: usize, x: usize) -> usize {
        let [n, ch, h, w] = self.shape.0;
        debug_assert!(
            b < n && c < ch && y < h && x < w,
            "index ({b},{c},{y},{x}) out of bounds for {}",
            self.shape
        );
        ((b * ch + c) * h + y) * w + x
    }

    #[inline]
    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.offset(b, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, b: usize, c: usize, y: usize, x: usize, v: f32) {
        let i = self.offset(b, c, y, x);
        self.data[i] = v;
    }

    /// The `h * w` slice holding channel `c` of batch element `b`.
    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (b * self.shape.c() + c) * p;
        &self.data[start..start + p]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Largest absolute elementwise difference. Panics on shape mismatch.
    pub fn max_abs_diff(&self, other: &Tensor) -> f32 {
        assert_eq!(self.shape, other.shape, "max_abs_diff on different shapes");
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max)
    }

    pub fn min_max(&self) -> (f32, f32) {
        self.data
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_zero_dims() {
        assert_eq!(
            Shape::new(1, 0, 4, 4),
            Err(TensorError::ZeroDim { dim: "channels" })
        );
        assert!(Tensor::from_vec([1, 1, 0, 1], vec![]).is_err());
    }

    #[test]
    fn rejects_wrong_length() {
        let err = Tensor::from_vec([1, 2, 2, 2], vec![0.0; 7]).unwrap_err();
        assert!(matches!(
            err,
            TensorError::DataLength {
                expected: 8,
                actual: 7,
                ..
            }
        ));
    }

    #[test]
    fn indexing_is_channel_major() {
        let t = Tensor::from_fn(Shape::new(2, 3, 4, 5).unwrap(), |b, c, y, x| {
            (b * 1000 + c * 100 + y * 10 + x) as f32
        });
        assert_eq!(t.at(1, 2, 3, 4), 1234.0);
        assert_eq!(t.plane(1, 2)[3 * 5 + 4], 1234.0);
        assert_eq!(t.data()[((1 * 3 + 2) * 4 + 3) * 5 + 4], 1234.0);
    }

    #[test]
    #[cfg(debug_assertions)]
    #[should_panic]
    fn out_of_bounds_access_panics_in_debug() {
        let t = Tensor::zeros(Shape::new(1, 1, 2, 2).unwrap());
        // x = 2 would alias into the next row without the debug check
        t.at(0, 0, 0, 2);
    }
}
