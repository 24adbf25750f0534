//! Forward noising and the DDIM / DDPM reverse updates.
//!
//! Arithmetic runs in `f64` and rounds to `f32` once per returned tensor.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::model::DenoiserModel;
use super::schedule::NoiseSchedule;
use crate::error::DiffusionError;
use crate::tensor::ImageTensor;

/// Seeded standard-normal tensor.
pub fn standard_normal(shape: &[usize], seed: u64) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let len: usize = shape.iter().product();
    let data: Vec<f32> = (0..len).map(|_| StandardNormal.sample(&mut rng)).collect();
    ImageTensor::new(shape.to_vec(), data).expect("normal samples are finite")
}

/// `sqrt(alpha_bar) * x + sqrt(1 - alpha_bar) * eps` for an explicit `alpha_bar`.
pub fn noise_with_alpha_bar(
    x: &ImageTensor,
    eps: &ImageTensor,
    alpha_bar: f64,
) -> Result<ImageTensor, DiffusionError> {
    x.ensure_same_shape(eps)?;
    let a = alpha_bar.sqrt();
    let s = (1.0 - alpha_bar).sqrt();
    let out: Vec<f64> = x
        .data()
        .iter()
        .zip(eps.data())
        .map(|(&xi, &ei)| a * xi as f64 + s * ei as f64)
        .collect();
    Ok(ImageTensor::from_f64(x.shape(), &out)?)
}

/// `x_t = sqrt(alpha_bar_t) x + sqrt(1 - alpha_bar_t) eps`.
pub fn forward_noise(
    x: &ImageTensor,
    t: usize,
    eps: &ImageTensor,
    sched: &NoiseSchedule,
) -> Result<ImageTensor, DiffusionError> {
    sched.check_step(t)?;
    noise_with_alpha_bar(x, eps, sched.alpha_bar(t))
}

/// Deterministic DDIM jump from step `t` to `t_prev` (`t_prev = 0` is clean data).
pub fn ddim_step<M: DenoiserModel + ?Sized>(
    x_t: &ImageTensor,
    t: usize,
    t_prev: usize,
    model: &M,
    sched: &NoiseSchedule,
) -> Result<ImageTensor, DiffusionError> {
    sched.check_step(t)?;
    if t_prev >= t {
        return Err(DiffusionError::StepOrder { t, t_prev });
    }
    let eps = model.predict_f64(x_t, t)?;
    if eps.len() != x_t.len() {
        return Err(DiffusionError::InputDim {
            expected: x_t.len(),
            got: eps.len(),
        });
    }
    let ab_t = sched.alpha_bar(t);
    let ab_prev = sched.alpha_bar(t_prev);
    let (a_t, s_t) = (ab_t.sqrt(), (1.0 - ab_t).sqrt());
    let (a_prev, s_prev) = (ab_prev.sqrt(), (1.0 - ab_prev).sqrt());
    let out: Vec<f64> = x_t
        .data()
        .iter()
        .zip(&eps)
        .map(|(&x, &e)| {
            let x0 = (x as f64 - s_t * e) / a_t;
            a_prev * x0 + s_prev * e
        })
        .collect();
    Ok(ImageTensor::from_f64(x_t.shape(), &out)?)
}

/// Step subsequence `t, t-k, t-2k, ...` ending at 0.
pub fn ddim_timesteps(t: usize, k: usize) -> Result<Vec<usize>, DiffusionError> {
    if k == 0 || k > t {
        return Err(DiffusionError::InvalidInterval { k, t });
    }
    let mut steps: Vec<usize> = (0..)
        .map(|i| t.saturating_sub(i * k))
        .take_while(|&s| s > 0)
        .collect();
    steps.push(0);
    Ok(steps)
}

/// Full DDIM reconstruction from step `t` to clean data with interval `k`.
pub fn ddim_sample<M: DenoiserModel + ?Sized>(
    x_t: &ImageTensor,
    t: usize,
    k: usize,
    model: &M,
    sched: &NoiseSchedule,
) -> Result<ImageTensor, DiffusionError> {
    sched.check_step(t)?;
    let steps = ddim_timesteps(t, k)?;
    let mut x = x_t.clone();
    for pair in steps.windows(2) {
        x = ddim_step(&x, pair[0], pair[1], model, sched)?;
    }
    Ok(x)
}

/// Ancestral DDPM update with variance fixed to `beta_t`; `noise` is ignored at `t = 1`.
pub fn ddpm_step<M: DenoiserModel + ?Sized>(
    x_t: &ImageTensor,
    t: usize,
    model: &M,
    sched: &NoiseSchedule,
    noise: &ImageTensor,
) -> Result<ImageTensor, DiffusionError> {
    sched.check_step(t)?;
    x_t.ensure_same_shape(noise)?;
    let eps = model.predict_f64(x_t, t)?;
    if eps.len() != x_t.len() {
        return Err(DiffusionError::InputDim {
            expected: x_t.len(),
            got: eps.len(),
        });
    }
    let beta = sched.beta(t);
    let coef = beta / (1.0 - sched.alpha_bar(t)).sqrt();
    let inv_sqrt_alpha = 1.0 / sched.alpha(t).sqrt();
    let sigma = if t == 1 { 0.0 } else { beta.sqrt() };
    let out: Vec<f64> = x_t
        .data()
        .iter()
        .zip(&eps)
        .zip(noise.data())
        .map(|((&x, &e), &z)| inv_sqrt_alpha * (x as f64 - coef * e) + sigma * z as f64)
        .collect();
    Ok(ImageTensor::from_f64(x_t.shape(), &out)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::model::ZeroDenoiser;
    use crate::diffusion::oracle::{ErrorLaw, OracleDenoiser};
    use crate::diffusion::schedule::build_schedule;
    use proptest::prelude::*;

    fn sched() -> NoiseSchedule {
        build_schedule(1000, 1e-4, 0.02).unwrap()
    }

    fn point(seed: u64, len: usize) -> ImageTensor {
        let n = standard_normal(&[len], seed);
        let data = n.data().iter().map(|v| 0.5 + 0.2 * v.clamp(-2.0, 2.0)).collect();
        ImageTensor::from_vec(data).unwrap()
    }

    #[test]
    fn unit_alpha_bar_is_identity() {
        let x = point(1, 8);
        let eps = standard_normal(&[8], 2);
        assert_eq!(noise_with_alpha_bar(&x, &eps, 1.0).unwrap(), x);
    }

    #[test]
    fn zero_signal_keeps_scaled_noise() {
        let s = sched();
        let x = ImageTensor::zeros(&[6]);
        let eps = standard_normal(&[6], 3);
        let t = 250;
        let out = forward_noise(&x, t, &eps, &s).unwrap();
        let scale = (1.0 - s.alpha_bar(t)).sqrt();
        for (o, e) in out.data().iter().zip(eps.data()) {
            assert_eq!(*o, (scale * *e as f64) as f32);
        }
    }

    #[test]
    fn forward_noise_variance_matches_schedule() {
        // Monte-Carlo estimate over 10^4 seeds; per-pixel variance = 1 - alpha_bar_t.
        let s = sched();
        let x = point(7, 4);
        let t = 300;
        let trials = 10_000;
        let mut sum = [0f64; 4];
        let mut sum_sq = [0f64; 4];
        for seed in 0..trials {
            let eps = standard_normal(&[4], 1_000 + seed);
            let xt = forward_noise(&x, t, &eps, &s).unwrap();
            for (i, v) in xt.data().iter().enumerate() {
                sum[i] += *v as f64;
                sum_sq[i] += (*v as f64).powi(2);
            }
        }
        let want = 1.0 - s.alpha_bar(t);
        for i in 0..4 {
            let mean = sum[i] / trials as f64;
            let var = (sum_sq[i] - trials as f64 * mean * mean) / (trials as f64 - 1.0);
            assert!(((var - want) / want).abs() < 0.05, "pixel {i}: {var} vs {want}");
        }
    }

    #[test]
    fn forward_noise_rejects_bad_inputs() {
        let s = sched();
        let x = point(1, 4);
        assert!(forward_noise(&x, 0, &standard_normal(&[4], 1), &s).is_err());
        assert!(forward_noise(&x, 1001, &standard_normal(&[4], 1), &s).is_err());
        assert!(forward_noise(&x, 5, &standard_normal(&[5], 1), &s).is_err());
    }

    #[test]
    fn ddim_inverts_exact_noise() {
        let s = sched();
        let x = point(11, 16);
        for t in [1, 10, 200, 500, 999, 1000] {
            let eps = standard_normal(&[16], t as u64);
            let xt = forward_noise(&x, t, &eps, &s).unwrap();
            let oracle = OracleDenoiser::memorized(vec![x.clone()], &s).unwrap();
            let out = ddim_step(&xt, t, 0, &oracle, &s).unwrap();
            for (o, w) in out.data().iter().zip(x.data()) {
                assert!((o - w).abs() <= 1e-5, "t={t}: {o} vs {w}");
            }
        }
    }

    #[test]
    fn zero_predictor_rescales() {
        let s = sched();
        let xt = standard_normal(&[5], 9);
        let (t, t_prev) = (400, 150);
        let out = ddim_step(&xt, t, t_prev, &ZeroDenoiser, &s).unwrap();
        let ratio = (s.alpha_bar(t_prev) / s.alpha_bar(t)).sqrt();
        for (o, x) in out.data().iter().zip(xt.data()) {
            assert!((*o as f64 - ratio * *x as f64).abs() < 1e-5);
        }
    }

    #[test]
    fn biased_predictor_error_law() {
        let s = sched();
        let x = point(5, 10);
        let b = 0.3;
        let oracle = OracleDenoiser::memorized(vec![x.clone()], &s)
            .unwrap()
            .with_error(ErrorLaw::Bias { value: b }, 0);
        for t in [20, 200, 600] {
            let eps = standard_normal(&[10], 77 + t as u64);
            let xt = forward_noise(&x, t, &eps, &s).unwrap();
            let out = ddim_step(&xt, t, 0, &oracle, &s).unwrap();
            let ab = s.alpha_bar(t);
            let want = -((1.0 - ab).sqrt() / ab.sqrt()) * b;
            for (o, xi) in out.data().iter().zip(x.data()) {
                let got = *o as f64 - *xi as f64;
                assert!(
                    (got - want).abs() < 1e-5 * (1.0 + want.abs()),
                    "t={t}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn step_order_and_range_errors() {
        let s = sched();
        let x = point(1, 3);
        assert!(ddim_step(&x, 10, 10, &ZeroDenoiser, &s).is_err());
        assert!(ddim_step(&x, 10, 11, &ZeroDenoiser, &s).is_err());
        assert!(ddim_step(&x, 1001, 0, &ZeroDenoiser, &s).is_err());
        assert!(ddim_sample(&x, 10, 0, &ZeroDenoiser, &s).is_err());
        assert!(ddim_sample(&x, 10, 11, &ZeroDenoiser, &s).is_err());
    }

    #[test]
    fn timestep_sequences() {
        assert_eq!(ddim_timesteps(10, 3).unwrap(), vec![10, 7, 4, 1, 0]);
        assert_eq!(ddim_timesteps(200, 100).unwrap(), vec![200, 100, 0]);
        assert_eq!(ddim_timesteps(5, 5).unwrap(), vec![5, 0]);
        for t in 1..60 {
            for k in 1..=t {
                let steps = ddim_timesteps(t, k).unwrap();
                assert_eq!(steps.len() - 1, t.div_ceil(k));
            }
        }
    }

    #[test]
    fn full_interval_is_single_step() {
        let s = sched();
        let x = point(3, 12);
        let oracle = OracleDenoiser::gaussian(x.clone(), 0.04, &s).unwrap();
        let xt = forward_noise(&x, 120, &standard_normal(&[12], 4), &s).unwrap();
        assert_eq!(
            ddim_sample(&xt, 120, 120, &oracle, &s).unwrap(),
            ddim_step(&xt, 120, 0, &oracle, &s).unwrap()
        );
    }

    #[test]
    fn unit_interval_matches_manual_fold() {
        let s = build_schedule(50, 1e-3, 0.05).unwrap();
        let x = point(3, 6);
        let oracle = OracleDenoiser::gaussian(x.clone(), 0.01, &s).unwrap();
        let xt = standard_normal(&[6], 8);
        let mut manual = xt.clone();
        for t in (1..=50).rev() {
            manual = ddim_step(&manual, t, t - 1, &oracle, &s).unwrap();
        }
        assert_eq!(ddim_sample(&xt, 50, 1, &oracle, &s).unwrap(), manual);
    }

    #[test]
    fn memorized_member_is_recovered_with_interval() {
        let s = sched();
        let x = point(21, 8);
        let oracle = OracleDenoiser::memorized(vec![x.clone()], &s).unwrap();
        let t = s.steps() / 5;
        let xt = forward_noise(&x, t, &standard_normal(&[8], 5), &s).unwrap();
        let out = ddim_sample(&xt, t, 7, &oracle, &s).unwrap();
        let err: f64 = out
            .data()
            .iter()
            .zip(x.data())
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = x.data().iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        assert!(err <= 1e-4 * norm, "{err}");
    }

    #[test]
    fn ddpm_terminal_step_is_deterministic() {
        let s = sched();
        let xt = standard_normal(&[4], 1);
        let a = ddpm_step(&xt, 1, &ZeroDenoiser, &s, &standard_normal(&[4], 2)).unwrap();
        let b = ddpm_step(&xt, 1, &ZeroDenoiser, &s, &standard_normal(&[4], 3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ddpm_zero_model_zero_noise() {
        let s = sched();
        let xt = standard_normal(&[4], 1);
        let t = 321;
        let out = ddpm_step(&xt, t, &ZeroDenoiser, &s, &ImageTensor::zeros(&[4])).unwrap();
        let scale = 1.0 / s.alpha(t).sqrt();
        for (o, x) in out.data().iter().zip(xt.data()) {
            assert!((*o as f64 - scale * *x as f64).abs() < 1e-6);
        }
    }

    #[test]
    fn ddpm_variance_is_beta() {
        let s = sched();
        let xt = point(2, 3);
        let t = 700;
        let trials = 10_000u64;
        let mut sum = [0f64; 3];
        let mut sum_sq = [0f64; 3];
        for seed in 0..trials {
            let z = standard_normal(&[3], 50_000 + seed);
            let out = ddpm_step(&xt, t, &ZeroDenoiser, &s, &z).unwrap();
            for (i, v) in out.data().iter().enumerate() {
                sum[i] += *v as f64;
                sum_sq[i] += (*v as f64).powi(2);
            }
        }
        let n = trials as f64;
        for i in 0..3 {
            let mean = sum[i] / n;
            let var = (sum_sq[i] - n * mean * mean) / (n - 1.0);
            assert!(((var - s.beta(t)) / s.beta(t)).abs() < 0.05, "{var}");
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn round_trip_exactness(seed in any::<u64>(), t in 1usize..=1000) {
            let s = sched();
            let x = point(seed, 6);
            let eps = standard_normal(&[6], seed ^ 0xabc);
            let xt = forward_noise(&x, t, &eps, &s).unwrap();
            let oracle = OracleDenoiser::memorized(vec![x.clone()], &s).unwrap();
            let out = ddim_step(&xt, t, 0, &oracle, &s).unwrap();
            for (o, w) in out.data().iter().zip(x.data()) {
                prop_assert!((o - w).abs() <= 1e-5);
            }
        }
    }
}
