//! Closed-form noise predictors for known training distributions.
//!
//! These stand in for a perfectly trained network: a point mass (or a set of
//! memorized points) and an isotropic Gaussian both have an analytic posterior
//! mean of the injected noise.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::model::DenoiserModel;
use super::schedule::NoiseSchedule;
use crate::error::DiffusionError;
use crate::tensor::ImageTensor;
use crate::variation::seed::mix64;

/// Training distribution an [`OracleDenoiser`] is optimal for.
#[derive(Debug, Clone)]
pub enum OracleKind {
    Memorized(Vec<ImageTensor>),
    Gaussian { mean: ImageTensor, variance: f64 },
}

/// Perturbation added on top of the exact prediction.
///
/// The perturbation is a deterministic function of `(x_t, t, salt)`, so the
/// model stays pure while each fresh noisy input sees an independent draw.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum ErrorLaw {
    Exact,
    /// Centered Gaussian with per-element standard deviation `sigma`.
    Gaussian {
        sigma: f64,
    },
    /// Centered uniform on `[-half_width, half_width]` per element.
    Uniform {
        half_width: f64,
    },
    /// Constant offset `value` on every element.
    Bias {
        value: f64,
    },
}

#[derive(Debug, Clone)]
pub struct OracleDenoiser {
    kind: OracleKind,
    sqrt_alpha_bar: Vec<f64>,
    sqrt_one_minus: Vec<f64>,
    law: ErrorLaw,
    salt: u64,
}

impl OracleDenoiser {
    pub fn new(kind: OracleKind, sched: &NoiseSchedule) -> Result<Self, DiffusionError> {
        match &kind {
            OracleKind::Memorized(points) => {
                let first = points.first().ok_or(DiffusionError::EmptyPointSet)?;
                for p in points {
                    first.ensure_same_shape(p)?;
                }
            }
            OracleKind::Gaussian { variance, .. } => {
                if !(*variance > 0.0 && variance.is_finite()) {
                    return Err(DiffusionError::InvalidVariance(*variance));
                }
            }
        }
        Ok(Self {
            kind,
            sqrt_alpha_bar: (0..=sched.steps()).map(|t| sched.alpha_bar(t).sqrt()).collect(),
            sqrt_one_minus: (0..=sched.steps())
                .map(|t| (1.0 - sched.alpha_bar(t)).sqrt())
                .collect(),
            law: ErrorLaw::Exact,
            salt: 0,
        })
    }

    pub fn memorized(points: Vec<ImageTensor>, sched: &NoiseSchedule) -> Result<Self, DiffusionError> {
        Self::new(OracleKind::Memorized(points), sched)
    }

    pub fn gaussian(mean: ImageTensor, variance: f64, sched: &NoiseSchedule) -> Result<Self, DiffusionError> {
        Self::new(OracleKind::Gaussian { mean, variance }, sched)
    }

    pub fn with_error(mut self, law: ErrorLaw, salt: u64) -> Self {
        self.law = law;
        self.salt = salt;
        self
    }

    pub fn error_law(&self) -> ErrorLaw {
        self.law
    }

    fn reference_shape(&self) -> &[usize] {
        match &self.kind {
            OracleKind::Memorized(points) => points[0].shape(),
            OracleKind::Gaussian { mean, .. } => mean.shape(),
        }
    }

    fn exact(&self, x_t: &ImageTensor, t: usize) -> Vec<f64> {
        let a = self.sqrt_alpha_bar[t];
        let s = self.sqrt_one_minus[t];
        let x = x_t.data();
        match &self.kind {
            OracleKind::Memorized(points) if points.len() == 1 => x
                .iter()
                .zip(points[0].data())
                .map(|(&xt, &p)| (xt as f64 - a * p as f64) / s)
                .collect(),
            OracleKind::Memorized(points) => {
                let log_w: Vec<f64> = points
                    .iter()
                    .map(|p| {
                        let d2: f64 = x
                            .iter()
                            .zip(p.data())
                            .map(|(&xt, &pi)| (xt as f64 - a * pi as f64).powi(2))
                            .sum();
                        -d2 / (2.0 * s * s)
                    })
                    .collect();
                let max = log_w.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let w: Vec<f64> = log_w.iter().map(|l| (l - max).exp()).collect();
                let total: f64 = w.iter().sum();
                let mut out = vec![0.0; x.len()];
                for (p, wi) in points.iter().zip(&w) {
                    let wi = wi / total;
                    if wi == 0.0 {
                        continue;
                    }
                    for ((o, &xt), &pi) in out.iter_mut().zip(x).zip(p.data()) {
                        *o += wi * (xt as f64 - a * pi as f64) / s;
                    }
                }
                out
            }
            OracleKind::Gaussian { mean, variance } => {
                let denom = a * a * variance + s * s;
                x.iter()
                    .zip(mean.data())
                    .map(|(&xt, &m)| s * (xt as f64 - a * m as f64) / denom)
                    .collect()
            }
        }
    }

    fn perturb(&self, x_t: &ImageTensor, t: usize, pred: &mut [f64]) {
        match self.law {
            ErrorLaw::Exact => {}
            ErrorLaw::Bias { value } => pred.iter_mut().for_each(|p| *p += value),
            ErrorLaw::Gaussian { sigma } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.input_hash(x_t, t));
                for p in pred.iter_mut() {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *p += sigma * z;
                }
            }
            ErrorLaw::Uniform { half_width } => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.input_hash(x_t, t));
                let dist = Uniform::new_inclusive(-half_width, half_width).expect("half width is finite");
                for p in pred.iter_mut() {
                    *p += dist.sample(&mut rng);
                }
            }
        }
    }

    fn input_hash(&self, x_t: &ImageTensor, t: usize) -> u64 {
        let mut h = mix64(self.salt ^ (t as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        for v in x_t.data() {
            h = mix64(h ^ v.to_bits() as u64);
        }
        h
    }
}

impl DenoiserModel for OracleDenoiser {
    fn predict(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor, DiffusionError> {
        let pred = self.predict_f64(x_t, t)?;
        Ok(ImageTensor::from_f64(x_t.shape(), &pred)?)
    }

    fn predict_f64(&self, x_t: &ImageTensor, t: usize) -> Result<Vec<f64>, DiffusionError> {
        if t == 0 || t >= self.sqrt_alpha_bar.len() {
            return Err(DiffusionError::StepOutOfRange {
                step: t,
                max: self.sqrt_alpha_bar.len() - 1,
            });
        }
        let expected: usize = self.reference_shape().iter().product();
        if x_t.len() != expected {
            return Err(DiffusionError::InputDim {
                expected,
                got: x_t.len(),
            });
        }
        let mut pred = self.exact(x_t, t);
        self.perturb(x_t, t, &mut pred);
        Ok(pred)
    }

    fn parameter_count(&self) -> usize {
        match &self.kind {
            OracleKind::Memorized(points) => points.iter().map(|p| p.len()).sum(),
            OracleKind::Gaussian { mean, .. } => mean.len() + 1,
        }
    }

    fn input_len(&self) -> Option<usize> {
        Some(self.reference_shape().iter().product())
    }
}
