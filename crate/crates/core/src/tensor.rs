//! Dense row-major tensors over `f32`/`f64` plus numerical utilities.

use crate::error::{Error, Result};
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;

/// Scalar element type: single precision for training, double precision for
/// the finite-difference oracle path. All transcendental methods route
/// through `libm`, so results do not depend on the host libm.
pub trait Scalar: Float + core::fmt::Debug + core::fmt::Display + Default + 'static {
    fn from_f64(x: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    fn from_f64(x: f64) -> Self {
        x as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(x: f64) -> Self {
        x
    }
    fn as_f64(self) -> f64 {
        self
    }
}

/// Dense tensor of real scalars in row-major order.
///
/// Invariant: `shape.iter().product() == data.len()`, and all scalars are
/// finite after any public operation completes successfully.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); len],
        }
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} wants {len} elements, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Errors with the given tensor name if any element is NaN/Inf.
    pub fn validate_finite(&self, name: &str) -> Result<()> {
        for (i, v) in self.data.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFinite(format!(
                    "{name}[{i}] = {v} (shape {:?})",
                    self.shape
                )));
            }
        }
        Ok(())
    }

    /// Converts element type, rounding through `f64`.
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }
}

/// `c = a @ b` for 2-D tensors, accumulated in a fixed sequential order.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ar, ac) = match a.shape() {
        [r, c] => (*r, *c),
        s => return Err(Error::ShapeMismatch(format!("matmul lhs must be 2-D, got {s:?}"))),
    };
    let (br, bc) = match b.shape() {
        [r, c] => (*r, *c),
        s => return Err(Error::ShapeMismatch(format!("matmul rhs must be 2-D, got {s:?}"))),
    };
    if ac != br {
        return Err(Error::ShapeMismatch(format!(
            "matmul inner dimensions disagree: lhs {:?} vs rhs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let mut out = Tensor::zeros(&[ar, bc]);
    crate::ops::matmul_nn(out.data_mut(), a.data(), b.data(), ar, ac, bc, false);
    Ok(out)
}

/// Central-difference gradient of a scalar-valued function of a tensor:
/// `(f(x + h e_j) - f(x - h e_j)) / (2 h)` per element, in double precision.
///
/// This is the independent oracle for the hand-derived backward pass; it must
/// never share code with it.
pub fn finite_diff_grad<F>(mut f: F, x: &Tensor<f64>, h: f64) -> Result<Tensor<f64>>
where
    F: FnMut(&Tensor<f64>) -> Result<f64>,
{
    let mut grad = Tensor::zeros(x.shape());
    let mut probe = x.clone();
    for j in 0..x.len() {
        let orig = probe.data()[j];
        probe.data_mut()[j] = orig + h;
        let fp = f(&probe)?;
        probe.data_mut()[j] = orig - h;
        let fm = f(&probe)?;
        probe.data_mut()[j] = orig;
        let g = (fp - fm) / (2.0 * h);
        if !g.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite difference at element {j}: f(+h)={fp}, f(-h)={fm}"
            )));
        }
        grad.data_mut()[j] = g;
    }
    Ok(grad)
}
