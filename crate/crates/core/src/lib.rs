//! Black-box membership inference against diffusion models.
//!
//! An image is queried through a variation API (noise to step `t`, denoise
//! back) several times; members of the training set come back closer to the
//! original than nonmembers do.

pub mod attack;
pub mod diffusion;
pub mod error;
pub mod metrics;
pub mod tensor;
pub mod theory;
pub mod toy;
pub mod variation;

pub use tensor::ImageTensor;
