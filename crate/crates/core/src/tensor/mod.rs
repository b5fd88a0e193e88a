//! Dense row-major tensors and the convolution primitives built on them.
//!
//! Feature maps are `C×H×W` and kernels `C_out×(C/groups)×K_h×K_w`, channel
//! axis outermost. Every other module vectorizes tensors in this order.

mod conv;
mod io;
mod rng;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};

pub use self::conv::{conv, linear, sum_pool3d};
pub use self::io::{read_tensor, read_tensor_from, write_tensor, write_tensor_to, MAGIC, VERSION};
pub use self::rng::{random_tensor, SplitMix64};

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&e| e == 0) {
            return Err(shape_err(format!("zero extent in shape {shape:?}")));
        }
        let len = checked_len(&shape)?;
        if len != data.len() {
            return Err(shape_err(format!(
                "shape {shape:?} holds {len} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Builds a tensor from a function of the flat row-major index.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> f64) -> Self {
        assert!(shape.iter().all(|&e| e > 0), "zero extent in {shape:?}");
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    /// Flat offset of a multi-index. Panics on rank or bounds errors.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank");
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &e)| {
                assert!(i < e, "index {index:?} out of bounds for {:?}", self.shape);
                acc * e + i
            })
    }

    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    /// Elementwise `a·self + b·other`.
    pub fn lincomb(&self, a: f64, other: &Tensor, b: f64) -> Result<Self> {
        self.expect_shape(other.shape())?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&x, &y)| a * x + b * y)
                .collect(),
        })
    }

    pub fn sub(&self, other: &Tensor) -> Result<Self> {
        self.lincomb(1.0, other, -1.0)
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest elementwise difference, scaled by `max(1, max|reference|)`.
    pub fn max_rel_diff(&self, reference: &Tensor) -> Result<f64> {
        reference.expect_shape(self.shape())?;
        let scale = reference.max_abs().max(1.0);
        let diff = self
            .data
            .iter()
            .zip(&reference.data)
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        Ok(diff / scale)
    }

    pub fn expect_shape(&self, shape: &[usize]) -> Result<()> {
        if self.shape != shape {
            return Err(shape_err(format!(
                "expected shape {shape:?}, got {:?}",
                self.shape
            )));
        }
        Ok(())
    }

    pub(crate) fn expect_rank(&self, rank: usize, what: &str) -> Result<()> {
        if self.rank() != rank {
            return Err(shape_err(format!(
                "{what} must have rank {rank}, got shape {:?}",
                self.shape
            )));
        }
        Ok(())
    }
}

fn checked_len(shape: &[usize]) -> Result<usize> {
    shape.iter().try_fold(1usize, |acc, &e| {
        acc.checked_mul(e)
            .ok_or_else(|| Error::ExtentOverflow(format!("shape {shape:?} overflows usize")))
    })
}

/// Stride, zero padding and dilation per spatial axis (`[rows, cols]`),
/// plus the channel group count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ConvGeometry {
    pub stride: [usize; 2],
    pub padding: [usize; 2],
    pub dilation: [usize; 2],
    pub groups: usize,
}

impl Default for ConvGeometry {
    fn default() -> Self {
        Self::new(1, 0, 1)
    }
}

impl ConvGeometry {
    pub fn new(stride: usize, padding: usize, dilation: usize) -> Self {
        Self {
            stride: [stride; 2],
            padding: [padding; 2],
            dilation: [dilation; 2],
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride.contains(&0) || self.dilation.contains(&0) || self.groups == 0 {
            return Err(Error::InvalidGeometry(format!(
                "stride, dilation and groups must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }

    /// `floor((len + 2p − d(k−1) − 1)/s) + 1` along `axis`, or an error when
    /// the dilated window does not fit in the padded input.
    pub fn output_extent(&self, axis: usize, len: usize, kernel: usize) -> Result<usize> {
        self.validate()?;
        let padded = len + 2 * self.padding[axis];
        let span = self.dilation[axis] * (kernel - 1) + 1;
        if kernel == 0 || span > padded {
            return Err(Error::InvalidGeometry(format!(
                "window of extent {kernel} (dilation {}) exceeds padded input {padded} on axis {axis}",
                self.dilation[axis]
            )));
        }
        Ok((padded - span) / self.stride[axis] + 1)
    }

    pub fn output_hw(&self, hw: (usize, usize), kernel: (usize, usize)) -> Result<(usize, usize)> {
        Ok((
            self.output_extent(0, hw.0, kernel.0)?,
            self.output_extent(1, hw.1, kernel.1)?,
        ))
    }
}
