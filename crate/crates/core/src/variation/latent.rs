//! Latent-space variation: encode, noise and denoise the latent, decode.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use super::local::{variation_local, IntervalPolicy};
use super::VariationEndpoint;
use crate::diffusion::{DenoiserModel, NoiseSchedule};
use crate::error::{TensorError, VariationError};
use crate::tensor::ImageTensor;

pub trait LatentCodec: Send + Sync {
    fn encode(&self, x: &ImageTensor) -> Result<ImageTensor, VariationError>;
    fn decode(&self, z: &ImageTensor) -> Result<ImageTensor, VariationError>;
    fn latent_dim(&self) -> usize;
    /// Largest L2 round-trip error `|decode(encode(x)) - x|` over the samples
    /// the codec was built or probed with.
    fn round_trip_error(&self) -> f64;
}

/// Pass-through codec; latent and image coincide.
#[derive(Debug, Clone)]
pub struct IdentityCodec {
    dim: usize,
}

impl IdentityCodec {
    pub fn new(dim: usize) -> Self {
        Self { dim }
    }
}

impl LatentCodec for IdentityCodec {
    fn encode(&self, x: &ImageTensor) -> Result<ImageTensor, VariationError> {
        Ok(x.clone())
    }

    fn decode(&self, z: &ImageTensor) -> Result<ImageTensor, VariationError> {
        Ok(z.clone())
    }

    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn round_trip_error(&self) -> f64 {
        0.0
    }
}

/// Linear autoencoder `z = B (x - m)`, `x = B^T z + m` with orthonormal rows in `B`.
#[derive(Debug, Clone)]
pub struct LinearCodec {
    image_shape: Vec<usize>,
    mean: Vec<f64>,
    /// `latent_dim` rows of length `d`.
    basis: Vec<Vec<f64>>,
    round_trip: f64,
}

#[derive(Serialize, Deserialize)]
struct CodecDescriptor {
    image_shape: Vec<usize>,
    latent_dim: usize,
    round_trip_error: f64,
}

impl LinearCodec {
    /// Least-squares linear autoencoder (principal subspace) of `samples`.
    pub fn fit(samples: &[ImageTensor], latent_dim: usize) -> Result<Self, VariationError> {
        let first = samples
            .first()
            .ok_or_else(|| VariationError::Codec("no samples to fit".into()))?;
        let d = first.len();
        if latent_dim == 0 || latent_dim > d {
            return Err(VariationError::Codec(format!(
                "latent dimension {latent_dim} must lie in 1..={d}"
            )));
        }
        for s in samples {
            first.ensure_same_shape(s)?;
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, &v) in mean.iter_mut().zip(s.data()) {
                *m += v as f64;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);

        let mut cov = DMatrix::<f64>::zeros(d, d);
        for s in samples {
            let c: Vec<f64> = s.data().iter().zip(&mean).map(|(&v, m)| v as f64 - m).collect();
            for i in 0..d {
                if c[i] == 0.0 {
                    continue;
                }
                for j in i..d {
                    cov[(i, j)] += c[i] * c[j];
                }
            }
        }
        for i in 0..d {
            for j in 0..i {
                cov[(i, j)] = cov[(j, i)];
            }
        }
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        // Descending eigenvalue, index as tie-break for a reproducible basis.
        order.sort_by(|&a, &b| {
            eig.eigenvalues[b]
                .partial_cmp(&eig.eigenvalues[a])
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.cmp(&b))
        });
        let basis = order[..latent_dim]
            .iter()
            .map(|&c| {
                let col = eig.eigenvectors.column(c);
                // Sign convention: largest-magnitude entry positive.
                let pivot = col
                    .iter()
                    .cloned()
                    .fold(0.0f64, |acc, v| if v.abs() > acc.abs() { v } else { acc });
                let sign = if pivot < 0.0 { -1.0 } else { 1.0 };
                col.iter().map(|v| sign * v).collect()
            })
            .collect();
        Self::from_basis(first.shape().to_vec(), mean, basis, samples)
    }

    /// Codec from an explicit orthonormal basis; `probe` samples set the recorded round-trip error.
    pub fn from_basis(
        image_shape: Vec<usize>,
        mean: Vec<f64>,
        basis: Vec<Vec<f64>>,
        probe: &[ImageTensor],
    ) -> Result<Self, VariationError> {
        let d: usize = image_shape.iter().product();
        if mean.len() != d || basis.is_empty() || basis.iter().any(|r| r.len() != d) {
            return Err(VariationError::Codec("basis does not match image size".into()));
        }
        let mut codec = Self {
            image_shape,
            mean,
            basis,
            round_trip: 0.0,
        };
        let mut worst = 0.0f64;
        for x in probe {
            let back = codec.decode(&codec.encode(x)?)?;
            let err = x
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            worst = worst.max(err);
        }
        codec.round_trip = worst;
        Ok(codec)
    }

    pub fn image_shape(&self) -> &[usize] {
        &self.image_shape
    }

    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), VariationError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(TensorError::from)?;
        let d = self.mean.len();
        ImageTensor::from_f64(&[d], &self.mean)?.write_tnsr(dir.join("codec_mean.tnsr"))?;
        let flat: Vec<f64> = self.basis.iter().flatten().copied().collect();
        ImageTensor::from_f64(&[self.basis.len(), d], &flat)?.write_tnsr(dir.join("codec_basis.tnsr"))?;
        let desc = CodecDescriptor {
            image_shape: self.image_shape.clone(),
            latent_dim: self.basis.len(),
            round_trip_error: self.round_trip,
        };
        let json = serde_json::to_string_pretty(&desc).map_err(|e| VariationError::Codec(e.to_string()))?;
        fs::write(dir.join("codec.json"), json).map_err(TensorError::from)?;
        Ok(())
    }

    /// Loads a saved codec. Stored weights are `f32`, so the loaded basis is
    /// orthonormal only to single precision.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, VariationError> {
        let dir = dir.as_ref();
        let text = fs::read_to_string(dir.join("codec.json")).map_err(TensorError::from)?;
        let desc: CodecDescriptor =
            serde_json::from_str(&text).map_err(|e| VariationError::Codec(e.to_string()))?;
        let mean = ImageTensor::read_tnsr(dir.join("codec_mean.tnsr"))?.to_f64();
        let basis_t = ImageTensor::read_tnsr(dir.join("codec_basis.tnsr"))?;
        let d = mean.len();
        if basis_t.shape() != [desc.latent_dim, d] {
            return Err(VariationError::Codec(
                "basis shape disagrees with descriptor".into(),
            ));
        }
        let basis = basis_t.to_f64().chunks(d).map(|c| c.to_vec()).collect();
        Ok(Self {
            image_shape: desc.image_shape,
            mean,
            basis,
            round_trip: desc.round_trip_error,
        })
    }
}

impl LatentCodec for LinearCodec {
    fn encode(&self, x: &ImageTensor) -> Result<ImageTensor, VariationError> {
        if x.shape() != self.image_shape.as_slice() {
            return Err(VariationError::CodecShape {
                expected: self.image_shape.clone(),
                got: x.shape().to_vec(),
            });
        }
        let centered: Vec<f64> = x
            .data()
            .iter()
            .zip(&self.mean)
            .map(|(&v, m)| v as f64 - m)
            .collect();
        let z: Vec<f64> = self
            .basis
            .iter()
            .map(|row| row.iter().zip(&centered).map(|(b, c)| b * c).sum())
            .collect();
        Ok(ImageTensor::from_f64(&[z.len()], &z)?)
    }

    fn decode(&self, z: &ImageTensor) -> Result<ImageTensor, VariationError> {
        if z.len() != self.basis.len() {
            return Err(VariationError::LatentDim {
                codec: self.basis.len(),
                model: z.len(),
            });
        }
        let mut out = self.mean.clone();
        for (row, &zi) in self.basis.iter().zip(z.data()) {
            for (o, b) in out.iter_mut().zip(row) {
                *o += b * zi as f64;
            }
        }
        Ok(ImageTensor::from_f64(&self.image_shape, &out)?)
    }

    fn latent_dim(&self) -> usize {
        self.basis.len()
    }

    fn round_trip_error(&self) -> f64 {
        self.round_trip
    }
}

/// Encode, vary in latent space, decode.
pub fn variation_latent<M: DenoiserModel + ?Sized, C: LatentCodec + ?Sized>(
    model: &M,
    sched: &NoiseSchedule,
    codec: &C,
    x: &ImageTensor,
    t: usize,
    k: usize,
    seed: u64,
) -> Result<ImageTensor, VariationError> {
    if let Some(model_dim) = model.input_len() {
        if model_dim != codec.latent_dim() {
            return Err(VariationError::LatentDim {
                codec: codec.latent_dim(),
                model: model_dim,
            });
        }
    }
    let z = codec.encode(x)?;
    if z.len() != codec.latent_dim() {
        return Err(VariationError::LatentDim {
            codec: codec.latent_dim(),
            model: z.len(),
        });
    }
    let z_hat = variation_local(model, sched, &z, t, k, seed)?;
    codec.decode(&z_hat)
}

/// In-process variation API of a latent diffusion model.
pub struct LatentVariation<M, C> {
    model: M,
    codec: C,
    sched: NoiseSchedule,
    interval: IntervalPolicy,
}

impl<M: DenoiserModel, C: LatentCodec> LatentVariation<M, C> {
    pub fn new(
        model: M,
        codec: C,
        sched: NoiseSchedule,
        interval: IntervalPolicy,
    ) -> Result<Self, VariationError> {
        if let Some(model_dim) = model.input_len() {
            if model_dim != codec.latent_dim() {
                return Err(VariationError::LatentDim {
                    codec: codec.latent_dim(),
                    model: model_dim,
                });
            }
        }
        Ok(Self {
            model,
            codec,
            sched,
            interval,
        })
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub fn codec(&self) -> &C {
        &self.codec
    }
}

impl<M: DenoiserModel, C: LatentCodec> VariationEndpoint for LatentVariation<M, C> {
    fn vary(&self, x: &ImageTensor, t: usize, seed: u64) -> Result<ImageTensor, VariationError> {
        variation_latent(
            &self.model,
            &self.sched,
            &self.codec,
            x,
            t,
            self.interval.resolve(t),
            seed,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{build_schedule, standard_normal, OracleDenoiser};

    fn orthonormal_basis(d: usize, k: usize) -> Vec<Vec<f64>> {
        // Disjoint pairs of coordinates, each row (e_{2i} + e_{2i+1}) / sqrt(2).
        (0..k)
            .map(|i| {
                let mut row = vec![0.0; d];
                row[2 * i] = std::f64::consts::FRAC_1_SQRT_2;
                row[2 * i + 1] = std::f64::consts::FRAC_1_SQRT_2;
                row
            })
            .collect()
    }

    #[test]
    fn identity_codec_matches_pixel_variation() {
        let s = build_schedule(200, 1e-4, 0.02).unwrap();
        let x = ImageTensor::new(vec![2, 3], vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]).unwrap();
        let oracle = OracleDenoiser::gaussian(ImageTensor::filled(&[2, 3], 0.4), 0.05, &s).unwrap();
        let codec = IdentityCodec::new(6);
        for seed in 0..5 {
            let a = variation_latent(&oracle, &s, &codec, &x, 40, 20, seed).unwrap();
            let b = variation_local(&oracle, &s, &x, 40, 20, seed).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn exact_linear_codec_error_decomposition() {
        let s = build_schedule(1000, 1e-4, 0.02).unwrap();
        let d = 8;
        let basis = orthonormal_basis(d, 3);
        let mean = vec![0.5; d];
        // A member off the codec subspace: round trip loses its orthogonal part.
        let x = ImageTensor::from_vec(vec![0.6, 0.6, 0.3, 0.3, 0.8, 0.8, 0.2, 0.55]).unwrap();
        let codec = LinearCodec::from_basis(vec![d], mean, basis, std::slice::from_ref(&x)).unwrap();
        assert!(codec.round_trip_error() > 0.0);
        let z = codec.encode(&x).unwrap();
        let oracle = OracleDenoiser::memorized(vec![z], &s).unwrap();
        for seed in 0..10 {
            let out = variation_latent(&oracle, &s, &codec, &x, 200, 100, seed).unwrap();
            let err = out
                .data()
                .iter()
                .zip(x.data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt();
            assert!(err <= codec.round_trip_error() + 1e-4, "{err}");
        }
    }

    #[test]
    fn pca_codec_reconstructs_low_rank_data() {
        let base: Vec<ImageTensor> = (0..40)
            .map(|i| {
                let a = (i as f32 * 0.37).sin() * 0.2;
                let b = (i as f32 * 0.11).cos() * 0.2;
                ImageTensor::from_vec(
                    (0..10)
                        .map(|j| 0.5 + a * (j as f32 / 10.0) + b * ((j % 3) as f32 - 1.0) * 0.5)
                        .collect(),
                )
                .unwrap()
            })
            .collect();
        let codec = LinearCodec::fit(&base, 2).unwrap();
        assert!(codec.round_trip_error() < 1e-5, "{}", codec.round_trip_error());
        let dir = tempfile::tempdir().unwrap();
        codec.save(dir.path()).unwrap();
        let back = LinearCodec::load(dir.path()).unwrap();
        assert_eq!(back.latent_dim(), 2);
        let z = back.encode(&base[3]).unwrap();
        let r = back.decode(&z).unwrap();
        for (a, b) in r.data().iter().zip(base[3].data()) {
            assert!((a - b).abs() < 1e-4);
        }
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let s = build_schedule(100, 1e-4, 0.02).unwrap();
        let oracle = OracleDenoiser::memorized(vec![standard_normal(&[4], 1)], &s).unwrap();
        let codec = IdentityCodec::new(6);
        let x = ImageTensor::filled(&[6], 0.5);
        assert!(matches!(
            variation_latent(&oracle, &s, &codec, &x, 10, 5, 0),
            Err(VariationError::LatentDim { .. })
        ));
        assert!(LatentVariation::new(oracle, codec, s, IntervalPolicy::HalfStep).is_err());
    }
}
