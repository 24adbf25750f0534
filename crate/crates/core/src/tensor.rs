//! Dense row-major `f32` tensors and the `TNSR` binary container.
//!
//! Layout of a `TNSR` blob:
//!
//! ```text
//! "TNSR" | dtype: u8 (0 = f32) | ndim: u8 | dims: ndim x u32 LE | payload: f32 LE, row-major
//! ```

use std::fs;
use std::path::Path;

use crate::error::TensorError;

const MAGIC: &[u8; 4] = b"TNSR";
const DTYPE_F32: u8 = 0;

/// Row-major multidimensional array of `f32` samples.
///
/// Images are `(C, H, W)` or `(H, W)`; point data is flat `(d)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

impl ImageTensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self, TensorError> {
        if shape.is_empty() {
            return Err(TensorError::EmptyShape);
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(TensorError::LengthMismatch {
                shape,
                len: data.len(),
            });
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(TensorError::NonFinite { index: pos });
        }
        Ok(Self { shape, data })
    }

    /// Flat `(d)` tensor.
    pub fn from_vec(data: Vec<f32>) -> Result<Self, TensorError> {
        let len = data.len();
        Self::new(vec![len], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn filled(shape: &[usize], value: f32) -> Self {
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Builds a tensor from `f64` values, rounding each to the nearest `f32`.
    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), values.iter().map(|&v| v as f32).collect())
    }

    #[inline]
    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    #[inline]
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|&v| v as f64).collect()
    }

    /// Same data, new shape with the same element count.
    pub fn reshaped(&self, shape: &[usize]) -> Result<Self, TensorError> {
        Self::new(shape.to_vec(), self.data.clone())
    }

    pub fn ensure_same_shape(&self, other: &ImageTensor) -> Result<(), TensorError> {
        if self.shape != other.shape {
            return Err(TensorError::ShapeMismatch {
                left: self.shape.clone(),
                right: other.shape.clone(),
            });
        }
        Ok(())
    }

    /// Spatial `(H, W)` of a single-channel image: `(H, W)` or `(1, H, W)`.
    pub fn as_2d(&self) -> Option<(usize, usize)> {
        match self.shape.as_slice() {
            [h, w] => Some((*h, *w)),
            [1, h, w] => Some((*h, *w)),
            _ => None,
        }
    }

    /// Encodes as a `TNSR` blob.
    pub fn to_tnsr_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(6 + 4 * self.shape.len() + 4 * self.data.len());
        out.extend_from_slice(MAGIC);
        out.push(DTYPE_F32);
        out.push(self.shape.len() as u8);
        for &d in &self.shape {
            out.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in &self.data {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_tnsr_bytes(bytes: &[u8]) -> Result<Self, TensorError> {
        if bytes.len() < 6 || &bytes[..4] != MAGIC {
            return Err(TensorError::Format("missing TNSR magic".into()));
        }
        if bytes[4] != DTYPE_F32 {
            return Err(TensorError::Format(format!(
                "unsupported dtype code {}",
                bytes[4]
            )));
        }
        let ndim = bytes[5] as usize;
        if ndim == 0 {
            return Err(TensorError::Format("zero-dimensional tensor".into()));
        }
        let header = 6 + 4 * ndim;
        if bytes.len() < header {
            return Err(TensorError::Format("truncated header".into()));
        }
        let shape: Vec<usize> = bytes[6..header]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let count = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| TensorError::Format("dimension overflow".into()))?;
        let payload = &bytes[header..];
        if payload.len() != count * 4 {
            return Err(TensorError::Format(format!(
                "payload is {} bytes, expected {}",
                payload.len(),
                count * 4
            )));
        }
        let data = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Self::new(shape, data)
    }

    pub fn write_tnsr(&self, path: impl AsRef<Path>) -> Result<(), TensorError> {
        fs::write(path, self.to_tnsr_bytes())?;
        Ok(())
    }

    pub fn read_tnsr(path: impl AsRef<Path>) -> Result<Self, TensorError> {
        let bytes = fs::read(path)?;
        Self::from_tnsr_bytes(&bytes)
    }
}
