//! Empirical checks of the single-jump error identity and of error concentration under averaging.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::averaged_variation;
use crate::diffusion::{ddim_sample, forward_noise, standard_normal, DenoiserModel, NoiseSchedule};
use crate::error::TheoryError;
use crate::tensor::ImageTensor;
use crate::variation::{derive_seed, repeat_seeds, VariationEndpoint};

pub const MIN_TRIALS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdentityResidual {
    /// Largest elementwise `|LHS - RHS|` over all trials.
    pub max_residual: f64,
    /// Largest elementwise `|LHS|`, i.e. the reconstruction error scale.
    pub max_abs_lhs: f64,
}

/// Compares `x_hat - x` with `sqrt(1 - ab) / sqrt(ab) * (eps - eps_theta(x_t, t))`
/// for the single-jump sampler (`k = t`).
pub fn identity_check<M: DenoiserModel + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    x: &ImageTensor,
    t: usize,
    trials: usize,
    seed: u64,
) -> Result<IdentityResidual, TheoryError> {
    let ab = sched.alpha_bar(t.min(sched.steps()));
    let ratio = (1.0 - ab).sqrt() / ab.sqrt();
    let per_trial = (0..trials as u64)
        .into_par_iter()
        .map(|j| -> Result<(f64, f64), TheoryError> {
            let eps = standard_normal(x.shape(), derive_seed(seed, j, 0));
            let x_t = forward_noise(x, t, &eps, sched)?;
            let x_hat = ddim_sample(&x_t, t, t, model, sched)?;
            let pred = model.predict_f64(&x_t, t)?;
            let mut worst = (0.0f64, 0.0f64);
            for (i, &p) in pred.iter().enumerate() {
                let lhs = x_hat.data()[i] as f64 - x.data()[i] as f64;
                let rhs = ratio * (eps.data()[i] as f64 - p);
                worst.0 = worst.0.max((lhs - rhs).abs());
                worst.1 = worst.1.max(lhs.abs());
            }
            Ok(worst)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_trial.into_iter().fold(
        IdentityResidual {
            max_residual: 0.0,
            max_abs_lhs: 0.0,
        },
        |acc, (r, l)| IdentityResidual {
            max_residual: acc.max_residual.max(r),
            max_abs_lhs: acc.max_abs_lhs.max(l),
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub n_values: Vec<usize>,
    pub beta: f64,
    /// Empirical `P(||x_hat_n - x|| >= beta)`.
    pub p_hat: Vec<f64>,
    /// Mean `||x_hat_n - x||` (Euclidean).
    pub mean_err: Vec<f64>,
    pub trials: usize,
}

impl ConcentrationReport {
    /// Two-column `n,p_hat` CSV.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "n,p_hat")?;
        for (n, p) in self.n_values.iter().zip(&self.p_hat) {
            writeln!(out, "{n},{p}")?;
        }
        Ok(())
    }

    pub fn mean_err_slope(&self) -> f64 {
        let ns: Vec<f64> = self.n_values.iter().map(|&n| n as f64).collect();
        loglog_slope(&ns, &self.mean_err)
    }
}

fn l2(a: &ImageTensor, b: &ImageTensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&u, &v)| (u as f64 - v as f64).powi(2))
        .sum::<f64>()
        .sqrt()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len().is_multiple_of(2) {
        (v[m - 1] + v[m]) / 2.0
    } else {
        v[m]
    }
}

/// Per-`n` reconstruction error and exceedance rate of the `n`-fold averaged variation.
///
/// `beta` defaults to the median single-variation error.
pub fn concentration_curve<E: VariationEndpoint + ?Sized>(
    endpoint: &E,
    x: &ImageTensor,
    t: usize,
    n_values: &[usize],
    beta: Option<f64>,
    trials: usize,
    seed: u64,
) -> Result<ConcentrationReport, TheoryError> {
    if trials < MIN_TRIALS {
        return Err(TheoryError::TooFewTrials(trials));
    }
    if n_values.is_empty() || n_values.contains(&0) {
        return Err(TheoryError::InvalidNValues);
    }
    let errors_for = |n: usize| -> Result<Vec<f64>, TheoryError> {
        (0..trials as u64)
            .into_par_iter()
            .map(|j| {
                let seeds = repeat_seeds(derive_seed(seed, n as u64, u32::MAX), j, n);
                Ok(l2(&averaged_variation(endpoint, x, t, &seeds)?, x))
            })
            .collect()
    };
    let errors = n_values
        .iter()
        .map(|&n| errors_for(n))
        .collect::<Result<Vec<_>, _>>()?;
    let beta = match beta {
        Some(b) => b,
        None => match n_values.iter().position(|&n| n == 1) {
            Some(i) => median(&errors[i]),
            None => median(&errors_for(1)?),
        },
    };
    Ok(ConcentrationReport {
        n_values: n_values.to_vec(),
        beta,
        p_hat: errors
            .iter()
            .map(|e| e.iter().filter(|&&v| v >= beta).count() as f64 / trials as f64)
            .collect(),
        mean_err: errors
            .iter()
            .map(|e| e.iter().sum::<f64>() / trials as f64)
            .collect(),
        trials,
    })
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}
