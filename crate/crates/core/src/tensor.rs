//! Dense `channels × height × width` image tensors of `f64`.

use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

pub type Shape = (usize, usize, usize);

/// Row-major rank-3 array; carrier for images, noise and predictor outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Shape,
    data: Vec<f64>,
}

impl ImageTensor {
    pub fn zeros(shape: Shape) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: Shape, value: f64) -> Self {
        assert!(
            shape.0 > 0 && shape.1 > 0 && shape.2 > 0,
            "tensor shape components must be positive: {shape:?}"
        );
        Self {
            shape,
            data: vec![value; shape.0 * shape.1 * shape.2],
        }
    }

    /// Wraps `data`, checking length against `shape` and rejecting non-finite entries.
    pub fn from_vec(shape: Shape, data: Vec<f64>) -> Result<Self> {
        if shape.0 == 0 || shape.1 == 0 || shape.2 == 0 {
            return Err(Error::Data(format!("shape components must be positive: {shape:?}")));
        }
        if data.len() != shape.0 * shape.1 * shape.2 {
            return Err(Error::Data(format!(
                "{} values do not fill shape {shape:?}",
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!("non-finite value at flat index {i}")));
        }
        Ok(Self { shape, data })
    }

    /// Single-element `1×1×1` tensor.
    pub fn scalar(value: f64) -> Self {
        Self::filled((1, 1, 1), value)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn channels(&self) -> usize {
        self.shape.0
    }

    pub fn height(&self) -> usize {
        self.shape.1
    }

    pub fn width(&self) -> usize {
        self.shape.2
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let plane = self.shape.1 * self.shape.2;
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                got: other.shape,
            });
        }
        Ok(())
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ImageTensor {
        ImageTensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, a: f64) -> ImageTensor {
        self.map(|v| a * v)
    }

    /// `a·self + b·other`, elementwise. Caller guarantees matching shapes.
    pub fn lincomb(&self, a: f64, other: &ImageTensor, b: f64) -> ImageTensor {
        debug_assert_eq!(self.shape, other.shape);
        ImageTensor {
            shape: self.shape,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&u, &v)| a * u + b * v)
                .collect(),
        }
    }

    /// `self += a·other`.
    pub fn axpy(&mut self, a: f64, other: &ImageTensor) {
        debug_assert_eq!(self.shape, other.shape);
        for (u, &v) in self.data.iter_mut().zip(&other.data) {
            *u += a * v;
        }
    }

    pub fn sub(&self, other: &ImageTensor) -> ImageTensor {
        self.lincomb(1.0, other, -1.0)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn max_abs_diff(&self, other: &ImageTensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

impl Index<(usize, usize, usize)> for ImageTensor {
    type Output = f64;

    fn index(&self, (c, y, x): (usize, usize, usize)) -> &f64 {
        &self.data[(c * self.shape.1 + y) * self.shape.2 + x]
    }
}

impl IndexMut<(usize, usize, usize)> for ImageTensor {
    fn index_mut(&mut self, (c, y, x): (usize, usize, usize)) -> &mut f64 {
        &mut self.data[(c * self.shape.1 + y) * self.shape.2 + x]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn from_vec_rejects_bad_input() {
        assert!(ImageTensor::from_vec((1, 2, 2), vec![0.0; 3]).is_err());
        assert!(ImageTensor::from_vec((0, 2, 2), vec![]).is_err());
        assert!(ImageTensor::from_vec((1, 1, 2), vec![0.0, f64::NAN]).is_err());
    }

    #[test]
    fn indexing_is_row_major() {
        let t = ImageTensor::from_vec((2, 2, 3), (0..12).map(f64::from).collect()).unwrap();
        assert_eq!(t[(0, 0, 2)], 2.0);
        assert_eq!(t[(0, 1, 0)], 3.0);
        assert_eq!(t[(1, 0, 0)], 6.0);
        assert_eq!(t.channel(1)[5], 11.0);
    }

    #[test]
    fn lincomb_and_axpy() {
        let a = ImageTensor::filled((1, 2, 2), 2.0);
        let b = ImageTensor::filled((1, 2, 2), 3.0);
        assert_eq!(a.lincomb(0.5, &b, 2.0).as_slice(), &[7.0; 4]);
        let mut c = a.clone();
        c.axpy(-1.0, &b);
        assert_eq!(c.as_slice(), &[-1.0; 4]);
        assert_eq!(a.max_abs_diff(&b), 1.0);
    }
}
