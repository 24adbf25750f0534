use serde::{Deserialize, Serialize};

use super::VariationEndpoint;
use crate::diffusion::{
    ddim_sample, forward_noise, standard_normal, DenoiserModel, NoiseSchedule, PixelRange,
};
use crate::error::VariationError;
use crate::tensor::ImageTensor;

/// How an endpoint picks its DDIM sampling interval for a requested step `t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalPolicy {
    /// `max(1, t / 2)`.
    #[default]
    HalfStep,
    /// A fixed interval, capped at `t`.
    Fixed(usize),
}

impl IntervalPolicy {
    pub fn resolve(self, t: usize) -> usize {
        match self {
            Self::HalfStep => (t / 2).max(1),
            Self::Fixed(k) => k.clamp(1, t.max(1)),
        }
    }
}

/// Noise `x` to step `t` with seeded Gaussian noise and DDIM-denoise it back.
pub fn variation_local<M: DenoiserModel + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    x: &ImageTensor,
    t: usize,
    k: usize,
    seed: u64,
) -> Result<ImageTensor, VariationError> {
    let eps = standard_normal(x.shape(), seed);
    let x_t = forward_noise(x, t, &eps, sched)?;
    Ok(ddim_sample(&x_t, t, k, model, sched)?)
}

/// In-process variation API over a pixel-space model.
#[derive(Debug, Clone)]
pub struct LocalVariation<M> {
    model: M,
    sched: NoiseSchedule,
    interval: IntervalPolicy,
    range: PixelRange,
}

impl<M: DenoiserModel> LocalVariation<M> {
    pub fn new(model: M, sched: NoiseSchedule, interval: IntervalPolicy) -> Self {
        Self {
            model,
            sched,
            interval,
            range: PixelRange::Unit,
        }
    }

    /// Diffuse in `range` instead of raw pixel values.
    pub fn with_pixel_range(mut self, range: PixelRange) -> Self {
        self.range = range;
        self
    }

    pub fn pixel_range(&self) -> PixelRange {
        self.range
    }

    pub fn model(&self) -> &M {
        &self.model
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn interval(&self) -> IntervalPolicy {
        self.interval
    }
}

impl<M: DenoiserModel> VariationEndpoint for LocalVariation<M> {
    fn vary(&self, x: &ImageTensor, t: usize, seed: u64) -> Result<ImageTensor, VariationError> {
        let z = self.range.encode(x);
        let out = variation_local(&self.model, &self.sched, &z, t, self.interval.resolve(t), seed)?;
        Ok(self.range.decode(&out))
    }
}
