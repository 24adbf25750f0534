use serde::{Deserialize, Serialize};

use crate::tensor::ImageTensor;

/// Value range the diffusion process runs in; datasets live in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PixelRange {
    /// Diffuse pixels as stored.
    Unit,
    /// Map `[0, 1]` to `[-1, 1]` before noising and back after denoising.
    #[default]
    Symmetric,
}

impl PixelRange {
    #[inline]
    pub fn encode_value(self, v: f32) -> f32 {
        match self {
            Self::Unit => v,
            Self::Symmetric => 2.0 * v - 1.0,
        }
    }

    #[inline]
    pub fn decode_value(self, v: f32) -> f32 {
        match self {
            Self::Unit => v,
            Self::Symmetric => (v + 1.0) * 0.5,
        }
    }

    pub fn encode(self, x: &ImageTensor) -> ImageTensor {
        self.map(x, |v| self.encode_value(v))
    }

    pub fn decode(self, z: &ImageTensor) -> ImageTensor {
        self.map(z, |v| self.decode_value(v))
    }

    fn map(self, x: &ImageTensor, f: impl Fn(f32) -> f32) -> ImageTensor {
        if self == Self::Unit {
            return x.clone();
        }
        let data = x.data().iter().map(|&v| f(v)).collect();
        ImageTensor::new(x.shape().to_vec(), data).expect("same shape, finite values")
    }
}
