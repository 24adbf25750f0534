//! Image distances `D(x, x_hat)`: mean `L_p`, windowed SSIM and a learned one.

use serde::{Deserialize, Serialize};

use super::classifier::DiffClassifier;
use crate::error::AttackError;
use crate::tensor::ImageTensor;

pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const RANGE_SLACK: f32 = 1e-6;

pub trait DistanceFn: Send + Sync {
    fn name(&self) -> String;
    fn dist(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64, AttackError>;
}

/// Mean over elements of `|a_i - b_i|^p`.
pub fn dist_lp(a: &ImageTensor, b: &ImageTensor, p: u32) -> Result<f64, AttackError> {
    if !(1..=8).contains(&p) {
        return Err(AttackError::InvalidExponent(p));
    }
    a.ensure_same_shape(b)?;
    let total: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x as f64 - y as f64).abs().powi(p as i32))
        .sum();
    Ok(total / a.len() as f64)
}

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let g: Vec<f64> = g.iter().map(|v| v / s).collect();
    g.iter().flat_map(|&u| g.iter().map(move |&v| u * v)).collect()
}

fn ssim_from_moments(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    ((2.0 * mu_a * mu_b + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mu_a * mu_a + mu_b * mu_b + SSIM_C1) * (var_a + var_b + SSIM_C2))
}

/// Mean structural similarity over all valid 11x11 Gaussian windows.
///
/// Images narrower than the window use one global window with uniform weights.
pub fn ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64, AttackError> {
    a.ensure_same_shape(b)?;
    let (h, w) = a
        .as_2d()
        .ok_or_else(|| AttackError::NotTwoDimensional(a.shape().to_vec()))?;
    for &v in a.data().iter().chain(b.data()) {
        if !(-RANGE_SLACK..=1.0 + RANGE_SLACK).contains(&v) {
            return Err(AttackError::OutOfRange { value: v });
        }
    }
    let (xa, xb) = (a.to_f64(), b.to_f64());

    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        let n = xa.len() as f64;
        let mu_a = xa.iter().sum::<f64>() / n;
        let mu_b = xb.iter().sum::<f64>() / n;
        let var_a = xa.iter().map(|v| (v - mu_a).powi(2)).sum::<f64>() / n;
        let var_b = xb.iter().map(|v| (v - mu_b).powi(2)).sum::<f64>() / n;
        let cov = xa
            .iter()
            .zip(&xb)
            .map(|(u, v)| (u - mu_a) * (v - mu_b))
            .sum::<f64>()
            / n;
        return Ok(ssim_from_moments(mu_a, mu_b, var_a, var_b, cov));
    }

    let win = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for y0 in 0..=h - SSIM_WINDOW {
        for x0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dy in 0..SSIM_WINDOW {
                for dx in 0..SSIM_WINDOW {
                    let g = win[dy * SSIM_WINDOW + dx];
                    let i = (y0 + dy) * w + x0 + dx;
                    let (u, v) = (xa[i], xb[i]);
                    ma += g * u;
                    mb += g * v;
                    saa += g * u * u;
                    sbb += g * v * v;
                    sab += g * u * v;
                }
            }
            total += ssim_from_moments(ma, mb, saa - ma * ma, sbb - mb * mb, sab - ma * mb);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `1 - SSIM(a, b)`.
pub fn dist_ssim(a: &ImageTensor, b: &ImageTensor) -> Result<f64, AttackError> {
    Ok(1.0 - ssim(a, b)?)
}

/// Serializable choice of a fixed (untrained) distance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Distance {
    Lp {
        p: u32,
    },
    /// Inputs are clipped to `[0, 1]` first, as an image API would return them.
    Ssim,
}

impl Distance {
    pub fn validate(&self) -> Result<(), AttackError> {
        match *self {
            Self::Lp { p } if !(1..=8).contains(&p) => Err(AttackError::InvalidExponent(p)),
            _ => Ok(()),
        }
    }
}

fn clipped(x: &ImageTensor) -> ImageTensor {
    let data = x.data().iter().map(|v| v.clamp(0.0, 1.0)).collect();
    ImageTensor::new(x.shape().to_vec(), data).expect("same shape")
}

impl DistanceFn for Distance {
    fn name(&self) -> String {
        match self {
            Self::Lp { p } => format!("l{p}"),
            Self::Ssim => "ssim".into(),
        }
    }

    fn dist(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64, AttackError> {
        match *self {
            Self::Lp { p } => dist_lp(a, b, p),
            Self::Ssim => dist_ssim(&clipped(a), &clipped(b)),
        }
    }
}

/// `D(x, x_hat) = -f_R(|x - x_hat|)`.
impl DistanceFn for DiffClassifier {
    fn name(&self) -> String {
        "learned".into()
    }

    fn dist(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64, AttackError> {
        Ok(-self.member_probability(a, b)?)
    }
}

impl<D: DistanceFn + ?Sized> DistanceFn for &D {
    fn name(&self) -> String {
        (**self).name()
    }

    fn dist(&self, a: &ImageTensor, b: &ImageTensor) -> Result<f64, AttackError> {
        (**self).dist(a, b)
    }
}
