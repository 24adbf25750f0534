//! The loss-threshold baseline, which needs direct model access.

use crate::diffusion::{forward_noise, standard_normal, DenoiserModel, NoiseSchedule};
use crate::error::AttackError;
use crate::tensor::ImageTensor;

/// `-||eps - eps_theta(x_t, t)||^2` for seeded `eps`.
pub fn loss_baseline_score<M: DenoiserModel + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    x: &ImageTensor,
    t: usize,
    seed: u64,
) -> Result<f64, AttackError> {
    let eps = standard_normal(x.shape(), seed);
    let x_t = forward_noise(x, t, &eps, sched)?;
    let pred = model.predict_f64(&x_t, t)?;
    let sq: f64 = eps
        .data()
        .iter()
        .zip(&pred)
        .map(|(&e, &p)| (e as f64 - p).powi(2))
        .sum();
    Ok(-sq)
}
