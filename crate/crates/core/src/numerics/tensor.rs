use alloc::vec;
use alloc::vec::Vec;
use core::fmt::Debug;

use num_traits::Float;

use crate::{Error, Result};

/// Real element type. `f64` is used for verification, `f32` for training.
pub trait Scalar: Float + Default + Debug + Send + Sync + core::iter::Sum + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    fn from_usize(v: usize) -> Self {
        Self::from_f64(v as f64)
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense row-major tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::shape("tensor", "dimensions must be positive"));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "tensor",
                alloc::format!("shape {:?} needs {} values, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Self::full(shape, T::one())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: vec![value; numel] }
    }

    pub fn scalar(value: T) -> Self {
        Tensor { shape: vec![1], data: vec![value] }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor { shape: shape.to_vec(), data: (0..numel).map(&mut f).collect() }
    }

    /// Builds a 2-D tensor from equal-length rows.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::shape("from_rows", "ragged rows"));
        }
        Self::new(vec![rows.len(), cols], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Size of the last axis.
    pub fn cols(&self) -> usize {
        *self.shape.last().unwrap_or(&1)
    }

    /// Number of rows when viewed as `[numel / cols, cols]`.
    pub fn rows(&self) -> usize {
        self.numel() / self.cols()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let c = self.cols();
        &self.data[i * c..(i + 1) * c]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|&v| f(v)).collect() }
    }

    /// Gathers rows of a 2-D view in the given order.
    pub fn gather_rows(&self, idx: &[usize]) -> Result<Self> {
        let (r, c) = (self.rows(), self.cols());
        let mut out = Vec::with_capacity(idx.len() * c);
        for &i in idx {
            if i >= r {
                return Err(Error::shape("gather_rows", alloc::format!("row {i} out of {r}")));
            }
            out.extend_from_slice(self.row(i));
        }
        if idx.is_empty() {
            return Err(Error::shape("gather_rows", "empty index list"));
        }
        Self::new(vec![idx.len(), c], out)
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (*a - *b).abs())
            .fold(T::zero(), T::max)
    }
}

/// Numerically stable softmax along `axis`.
pub fn softmax<T: Scalar>(x: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    if axis >= x.rank() {
        return Err(Error::invalid("axis", alloc::format!("{axis} for rank {}", x.rank())));
    }
    if !x.is_finite() {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let len = x.shape[axis];
    let inner: usize = x.shape[axis + 1..].iter().product();
    let outer: usize = x.shape[..axis].iter().product();
    let mut out = x.data.clone();
    for o in 0..outer {
        for i in 0..inner {
            let base = o * len * inner + i;
            softmax_strided(&mut out, base, len, inner);
        }
    }
    Ok(Tensor { shape: x.shape.clone(), data: out })
}

pub(crate) fn softmax_strided<T: Scalar>(buf: &mut [T], base: usize, len: usize, stride: usize) {
    let mut max = T::neg_infinity();
    for j in 0..len {
        max = max.max(buf[base + j * stride]);
    }
    let mut sum = T::zero();
    for j in 0..len {
        let e = (buf[base + j * stride] - max).exp();
        buf[base + j * stride] = e;
        sum = sum + e;
    }
    for j in 0..len {
        buf[base + j * stride] = buf[base + j * stride] / sum;
    }
}

/// `0.5·x·(1 + tanh(√(2/π)·(x + 0.044715·x³)))`
pub fn gelu_scalar<T: Scalar>(x: T) -> T {
    let (k, c) = gelu_consts::<T>();
    let half = T::from_f64(0.5);
    half * x * (T::one() + (k * (x + c * x * x * x)).tanh())
}

pub(crate) fn gelu_grad_scalar<T: Scalar>(x: T) -> T {
    let (k, c) = gelu_consts::<T>();
    let half = T::from_f64(0.5);
    let u = k * (x + c * x * x * x);
    let th = u.tanh();
    let du = k * (T::one() + T::from_f64(3.0) * c * x * x);
    half * (T::one() + th) + half * x * (T::one() - th * th) * du
}

fn gelu_consts<T: Scalar>() -> (T, T) {
    (T::from_f64(0.797_884_560_802_865_4), T::from_f64(0.044_715))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_length_and_zero_dims() {
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::<f64>::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn softmax_examples() {
        let s = softmax(&Tensor::new(vec![2], vec![0.0f64, 0.0]).unwrap(), 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5]);
        let s = softmax(&Tensor::new(vec![2], vec![0.0f64, 3.0f64.ln()]).unwrap(), 0).unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-15);
        assert!((s.data()[1] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_along_first_axis() {
        let x = Tensor::new(vec![2, 2], vec![0.0f64, 1.0, 0.0, 1.0]).unwrap();
        let s = softmax(&x, 0).unwrap();
        assert_eq!(s.data(), &[0.5, 0.5, 0.5, 0.5]);
        assert!(softmax(&x, 2).is_err());
    }

    #[test]
    fn softmax_rejects_non_finite() {
        let x = Tensor::new(vec![2], vec![0.0f64, f64::NAN]).unwrap();
        assert_eq!(softmax(&x, 0), Err(Error::NonFinite { op: "softmax" }));
    }

    #[test]
    fn gelu_examples() {
        assert_eq!(gelu_scalar(0.0f64), 0.0);
        assert!((gelu_scalar(10.0f64) - 10.0).abs() < 1e-6);
        assert!(gelu_scalar(-10.0f64).abs() < 1e-6);
    }

    #[test]
    fn gelu_derivative_matches_central_difference() {
        for &x in &[-3.0f64, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu_scalar(x + h) - gelu_scalar(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad_scalar(x)).abs() < 1e-8, "x={x}");
        }
    }
}
