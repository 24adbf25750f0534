//! The black-box variation API `V(x, t)` and its implementations.

pub mod latent;
pub mod local;
pub mod remote;
pub mod seed;

pub use latent::{variation_latent, IdentityCodec, LatentCodec, LatentVariation, LinearCodec};
pub use local::{variation_local, IntervalPolicy, LocalVariation};
pub use remote::RemoteVariation;
pub use seed::{derive_seed, repeat_seeds};

use crate::error::VariationError;
use crate::tensor::ImageTensor;

/// Image in, image out: noise `x` to step `t` and denoise it with the target model.
///
/// Identical `(x, t, seed)` must give identical output.
pub trait VariationEndpoint: Send + Sync {
    fn vary(&self, x: &ImageTensor, t: usize, seed: u64) -> Result<ImageTensor, VariationError>;
}

impl<E: VariationEndpoint + ?Sized> VariationEndpoint for std::sync::Arc<E> {
    fn vary(&self, x: &ImageTensor, t: usize, seed: u64) -> Result<ImageTensor, VariationError> {
        (**self).vary(x, t, seed)
    }
}

impl<E: VariationEndpoint + ?Sized> VariationEndpoint for &E {
    fn vary(&self, x: &ImageTensor, t: usize, seed: u64) -> Result<ImageTensor, VariationError> {
        (**self).vary(x, t, seed)
    }
}
