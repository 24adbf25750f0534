//! Scores that only ever call the variation API.

use rayon::prelude::*;

use super::distance::DistanceFn;
use crate::error::AttackError;
use crate::tensor::ImageTensor;
use crate::variation::VariationEndpoint;

/// Elementwise mean of `seeds.len()` independent variations of `x`.
///
/// Calls run in parallel; the sum is taken in seed order.
pub fn averaged_variation<E: VariationEndpoint + ?Sized>(
    endpoint: &E,
    x: &ImageTensor,
    t: usize,
    seeds: &[u64],
) -> Result<ImageTensor, AttackError> {
    if seeds.is_empty() {
        return Err(AttackError::ZeroRepeats);
    }
    let outs = seeds
        .par_iter()
        .map(|&s| endpoint.vary(x, t, s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut acc = vec![0.0f64; x.len()];
    for out in &outs {
        x.ensure_same_shape(out)?;
        for (a, &v) in acc.iter_mut().zip(out.data()) {
            *a += v as f64;
        }
    }
    let n = seeds.len() as f64;
    let mean: Vec<f64> = acc.into_iter().map(|a| a / n).collect();
    Ok(ImageTensor::from_f64(x.shape(), &mean)?)
}

/// `-D(x, mean of n variations)`; larger means more member-like.
pub fn rediffuse_score<E: VariationEndpoint + ?Sized, D: DistanceFn + ?Sized>(
    endpoint: &E,
    x: &ImageTensor,
    t: usize,
    dist: &D,
    seeds: &[u64],
) -> Result<f64, AttackError> {
    let x_hat = averaged_variation(endpoint, x, t, seeds)?;
    Ok(-dist.dist(x, &x_hat)?)
}

/// `-D(x_hat_1, x_hat_2)` for two variations under distinct seeds.
pub fn rediffuse_plus_score<E: VariationEndpoint + ?Sized, D: DistanceFn + ?Sized>(
    endpoint: &E,
    x: &ImageTensor,
    t: usize,
    dist: &D,
    seeds: (u64, u64),
) -> Result<f64, AttackError> {
    if seeds.0 == seeds.1 {
        return Err(AttackError::IdenticalSeeds);
    }
    let (a, b) = rayon::join(|| endpoint.vary(x, t, seeds.0), || endpoint.vary(x, t, seeds.1));
    Ok(-dist.dist(&a?, &b?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attack::distance::Distance;
    use crate::diffusion::{build_schedule, ErrorLaw, OracleDenoiser};
    use crate::variation::{repeat_seeds, IntervalPolicy, LocalVariation};

    const L1: Distance = Distance::Lp { p: 1 };

    fn member() -> ImageTensor {
        ImageTensor::new(vec![1, 4, 4], (0..16).map(|i| i as f32 / 16.0).collect()).unwrap()
    }

    fn endpoint(law: ErrorLaw) -> LocalVariation<OracleDenoiser> {
        let sched = build_schedule(1000, 1e-4, 0.02).unwrap();
        let model = OracleDenoiser::memorized(vec![member()], &sched)
            .unwrap()
            .with_error(law, 7);
        LocalVariation::new(model, sched, IntervalPolicy::HalfStep)
    }

    #[test]
    fn single_repeat_is_plain_distance() {
        let e = endpoint(ErrorLaw::Gaussian { sigma: 0.1 });
        let x = member();
        let s = 42;
        let direct = -L1.dist(&x, &e.vary(&x, 200, s).unwrap()).unwrap();
        assert_eq!(rediffuse_score(&e, &x, 200, &L1, &[s]).unwrap(), direct);
    }

    #[test]
    fn oracle_member_scores_near_zero() {
        let e = endpoint(ErrorLaw::Exact);
        let x = member();
        assert!(rediffuse_score(&e, &x, 200, &L1, &repeat_seeds(1, 0, 10)).unwrap() >= -1e-3);
        assert!(rediffuse_plus_score(&e, &x, 200, &L1, (1, 2)).unwrap() >= -1e-3);
        let other = ImageTensor::filled(&[1, 4, 4], 0.9);
        assert!(rediffuse_score(&e, &other, 200, &L1, &repeat_seeds(1, 1, 10)).unwrap() < -0.1);
    }

    #[test]
    fn plus_score_is_symmetric_and_deterministic() {
        let e = endpoint(ErrorLaw::Gaussian { sigma: 0.2 });
        let x = ImageTensor::filled(&[1, 4, 4], 0.4);
        let a = rediffuse_plus_score(&e, &x, 200, &L1, (3, 9)).unwrap();
        assert_eq!(a, rediffuse_plus_score(&e, &x, 200, &L1, (3, 9)).unwrap());
        assert_eq!(a, rediffuse_plus_score(&e, &x, 200, &L1, (9, 3)).unwrap());
        assert!(matches!(
            rediffuse_plus_score(&e, &x, 200, &L1, (3, 3)),
            Err(AttackError::IdenticalSeeds)
        ));
    }

    #[test]
    fn zero_repeats_rejected() {
        let e = endpoint(ErrorLaw::Exact);
        assert!(matches!(
            rediffuse_score(&e, &member(), 200, &L1, &[]),
            Err(AttackError::ZeroRepeats)
        ));
    }

    #[test]
    fn averaging_shrinks_distance_at_root_n() {
        let e = endpoint(ErrorLaw::Gaussian { sigma: 0.5 });
        let x = member();
        let ns = [1usize, 4, 16, 64];
        let trials = 200;
        let means: Vec<f64> = ns
            .iter()
            .map(|&n| {
                (0..trials)
                    .map(|j| -rediffuse_score(&e, &x, 200, &L1, &repeat_seeds(n as u64, j, n)).unwrap())
                    .sum::<f64>()
                    / trials as f64
            })
            .collect();
        for w in means.windows(2) {
            assert!(w[1] <= w[0], "{means:?}");
        }
        let slope = crate::theory::loglog_slope(&ns.map(|n| n as f64), &means);
        assert!((slope + 0.5).abs() <= 0.15, "slope {slope}");
    }

    /// Everything in this file must go through the variation API only.
    #[test]
    fn black_box_purity() {
        let src = include_str!("blackbox.rs");
        let code = &src[..src.find("#[cfg(test)]").unwrap()];
        for forbidden in ["DenoiserModel", "predict", "diffusion::", "NoiseSchedule"] {
            assert!(!code.contains(forbidden), "black-box code mentions {forbidden}");
        }
    }
}
