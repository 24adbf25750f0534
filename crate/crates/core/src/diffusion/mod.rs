//! Noise schedules, forward noising and reverse samplers.

pub mod model;
pub mod oracle;
pub mod range;
pub mod sampler;
pub mod schedule;

pub use model::{DenoiserModel, ZeroDenoiser};
pub use oracle::{ErrorLaw, OracleDenoiser, OracleKind};
pub use range::PixelRange;
pub use sampler::{
    ddim_sample, ddim_step, ddim_timesteps, ddpm_step, forward_noise, noise_with_alpha_bar, standard_normal,
};
pub use schedule::{build_schedule, NoiseSchedule, ScheduleConfig};
