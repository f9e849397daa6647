//! Dense double-precision arrays and the handful of differentiable layers the
//! reward networks are built from.

mod activation;
pub mod checkpoint;
pub(crate) mod conv;
mod optim;

pub use activation::{leaky_relu, leaky_relu_backward, LEAKY_SLOPE};
pub use conv::{conv2d_backward, conv2d_forward, ConvGrads, ConvLayer};
pub use optim::{AdamConfig, Gradients, ParameterStore};

use crate::error::{Error, Result};

/// Row-major n-dimensional array. Feature maps use the `(channels, rows, cols)` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::Invalid(format!(
                "tensor shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(channels, rows, cols)` of a 3-d tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, r, w] => Ok((c, r, w)),
            _ => Err(Error::Invalid(format!(
                "expected a (channels, rows, cols) tensor, got shape {:?}",
                self.shape
            ))),
        }
    }

    pub fn plane_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Concatenates 3-d tensors with equal spatial extent along the channel axis.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Tensor> {
        let (_, rows, cols) = parts
            .first()
            .ok_or_else(|| Error::Invalid("nothing to concatenate".into()))?
            .dims3()?;
        let mut channels = 0;
        let mut data = Vec::new();
        for p in parts {
            let (c, r, w) = p.dims3()?;
            if (r, w) != (rows, cols) {
                return Err(Error::shape("concat_channels", &[rows, cols], &[r, w]));
            }
            channels += c;
            data.extend_from_slice(&p.data);
        }
        Tensor::from_vec(&[channels, rows, cols], data)
    }

    /// Copies channels `start..end` into a new tensor.
    pub fn slice_channels(&self, start: usize, end: usize) -> Result<Tensor> {
        let (c, r, w) = self.dims3()?;
        if start > end || end > c {
            return Err(Error::Invalid(format!(
                "channel range {start}..{end} out of bounds for {c} channels"
            )));
        }
        let n = r * w;
        Tensor::from_vec(&[end - start, r, w], self.data[start * n..end * n].to_vec())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// `self += scale * other`, elementwise.
    pub fn add_scaled(&mut self, other: &Tensor, scale: f64) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_scaled", &self.shape, &other.shape));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += scale * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, s: f64) {
        for v in &mut self.data {
            *v *= s;
        }
    }
}
