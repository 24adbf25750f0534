//! MLP noise predictor over flattened images with a sinusoidal step embedding.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, NdFloat};
use num_traits::FromPrimitive;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Dense, Mlp};
use crate::diffusion::{DenoiserModel, NoiseSchedule, PixelRange, ScheduleConfig};
use crate::error::{DiffusionError, ToyError};
use crate::tensor::ImageTensor;

/// Sinusoidal features of `t`: `dim / 2` sines followed by `dim / 2` cosines.
pub fn time_embedding<F: NdFloat + FromPrimitive>(t: usize, dim: usize) -> Vec<F> {
    let half = dim / 2;
    let mut out = vec![F::zero(); dim];
    for i in 0..half {
        let freq = (-(10_000f64.ln()) * i as f64 / half.max(1) as f64).exp();
        let arg = t as f64 * freq;
        out[i] = F::from_f64(arg.sin()).unwrap();
        out[half + i] = F::from_f64(arg.cos()).unwrap();
    }
    out
}

/// Writes `[x, embed(t)]` rows for a batch.
pub(crate) fn build_inputs<F: NdFloat + FromPrimitive>(
    rows: &[(&[f32], usize)],
    data_len: usize,
    embed_dim: usize,
) -> Array2<F> {
    let mut input = Array2::zeros((rows.len(), data_len + embed_dim));
    for (r, (x, t)) in rows.iter().enumerate() {
        let mut row = input.row_mut(r);
        for (j, &v) in x.iter().enumerate() {
            row[j] = F::from_f32(v).unwrap();
        }
        for (j, e) in time_embedding::<F>(*t, embed_dim).into_iter().enumerate() {
            row[data_len + j] = e;
        }
    }
    input
}

/// What the network's output layer represents.
///
/// With `a = sqrt(ab)`, `s = sqrt(1 - ab)` and `x_t = a x0 + s eps`:
/// `CleanSample` outputs `x0` and `eps_hat = (x_t - a x0_hat) / s`;
/// `Velocity` outputs `v = a eps - s x0` and `eps_hat = a v_hat + s x_t`.
/// The training loss is the same noise MSE in every case.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Prediction {
    #[default]
    Noise,
    CleanSample,
    Velocity,
}

/// Architecture descriptor persisted next to the weight blobs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpArch {
    pub data_shape: Vec<usize>,
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
    #[serde(default)]
    pub prediction: Prediction,
    #[serde(default)]
    pub pixel_range: PixelRange,
    pub schedule: ScheduleConfig,
}

/// `(c_in, c_out)` with `eps_hat = c_in * x_t + c_out * net_output`.
pub(crate) fn head_coefficients(prediction: Prediction, sched: &NoiseSchedule, t: usize) -> (f64, f64) {
    match prediction {
        Prediction::Noise => (0.0, 1.0),
        Prediction::CleanSample => {
            let ab = sched.alpha_bar(t);
            let s = (1.0 - ab).sqrt();
            (1.0 / s, -ab.sqrt() / s)
        }
        Prediction::Velocity => {
            let ab = sched.alpha_bar(t);
            ((1.0 - ab).sqrt(), ab.sqrt())
        }
    }
}

impl MlpArch {
    pub fn data_len(&self) -> usize {
        self.data_shape.iter().product()
    }

    pub fn widths(&self) -> Vec<usize> {
        let d = self.data_len();
        let mut w = vec![d + self.time_embed_dim];
        w.extend(&self.hidden);
        w.push(d);
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpDenoiser {
    arch: MlpArch,
    net: Mlp<f32>,
    sched: NoiseSchedule,
}

impl MlpDenoiser {
    pub fn init<R: Rng>(arch: MlpArch, rng: &mut R) -> Result<Self, ToyError> {
        if arch.data_len() == 0 || !arch.time_embed_dim.is_multiple_of(2) {
            return Err(ToyError::InvalidConfig(
                "data shape must be nonempty and time_embed_dim even".into(),
            ));
        }
        if arch.hidden.contains(&0) {
            return Err(ToyError::InvalidConfig("hidden widths must be positive".into()));
        }
        let sched = arch.schedule.build()?;
        let net = Mlp::init(&arch.widths(), arch.activation, rng);
        Ok(Self { arch, net, sched })
    }

    pub fn from_parts(arch: MlpArch, net: Mlp<f32>) -> Result<Self, ToyError> {
        if net.widths() != arch.widths() || net.activation() != arch.activation {
            return Err(ToyError::Artifact("weights do not match architecture".into()));
        }
        let sched = arch.schedule.build()?;
        Ok(Self { arch, net, sched })
    }

    pub fn arch(&self) -> &MlpArch {
        &self.arch
    }

    pub fn net(&self) -> &Mlp<f32> {
        &self.net
    }

    pub fn schedule(&self) -> &NoiseSchedule {
        &self.sched
    }

    pub(crate) fn net_mut(&mut self) -> &mut Mlp<f32> {
        &mut self.net
    }

    /// Writes `model.json` and `layer_{i}_{weight,bias}.tnsr` into `dir`.
    pub fn save(&self, dir: impl AsRef<Path>) -> Result<(), ToyError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        fs::write(dir.join("model.json"), serde_json::to_string_pretty(&self.arch)?)?;
        for (i, layer) in self.net.layers().iter().enumerate() {
            let (r, c) = layer.weight.dim();
            let w = layer.weight.as_standard_layout().iter().copied().collect();
            ImageTensor::new(vec![r, c], w)?.write_tnsr(dir.join(format!("layer_{i}_weight.tnsr")))?;
            ImageTensor::new(vec![c], layer.bias.to_vec())?
                .write_tnsr(dir.join(format!("layer_{i}_bias.tnsr")))?;
        }
        Ok(())
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self, ToyError> {
        let dir = dir.as_ref();
        let arch: MlpArch = serde_json::from_str(&fs::read_to_string(dir.join("model.json"))?)?;
        let widths = arch.widths();
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for (i, w) in widths.windows(2).enumerate() {
            let weight = ImageTensor::read_tnsr(dir.join(format!("layer_{i}_weight.tnsr")))?;
            let bias = ImageTensor::read_tnsr(dir.join(format!("layer_{i}_bias.tnsr")))?;
            if weight.shape() != [w[0], w[1]] || bias.shape() != [w[1]] {
                return Err(ToyError::Artifact(format!("layer {i} has the wrong shape")));
            }
            layers.push(Dense {
                weight: Array2::from_shape_vec((w[0], w[1]), weight.into_data())
                    .map_err(|e| ToyError::Artifact(e.to_string()))?,
                bias: Array1::from(bias.into_data()),
            });
        }
        Self::from_parts(arch.clone(), Mlp::from_layers(layers, arch.activation))
    }
}

impl DenoiserModel for MlpDenoiser {
    fn predict(&self, x_t: &ImageTensor, t: usize) -> Result<ImageTensor, DiffusionError> {
        let eps = self.predict_f64(x_t, t)?;
        Ok(ImageTensor::from_f64(x_t.shape(), &eps)?)
    }

    fn predict_f64(&self, x_t: &ImageTensor, t: usize) -> Result<Vec<f64>, DiffusionError> {
        let d = self.arch.data_len();
        if x_t.len() != d {
            return Err(DiffusionError::InputDim {
                expected: d,
                got: x_t.len(),
            });
        }
        self.sched.check_step(t)?;
        let input = build_inputs::<f32>(&[(x_t.data(), t)], d, self.arch.time_embed_dim);
        let out = self.net.forward(input.view());
        let (c_in, c_out) = head_coefficients(self.arch.prediction, &self.sched, t);
        Ok(x_t
            .data()
            .iter()
            .zip(out.iter())
            .map(|(&x, &o)| c_in * x as f64 + c_out * o as f64)
            .collect())
    }

    fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    fn input_len(&self) -> Option<usize> {
        Some(self.arch.data_len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn arch() -> MlpArch {
        MlpArch {
            data_shape: vec![1, 4, 4],
            hidden: vec![8, 8],
            time_embed_dim: 16,
            activation: Activation::Silu,
            prediction: Prediction::Noise,
            pixel_range: PixelRange::Unit,
            schedule: ScheduleConfig::default(),
        }
    }

    #[test]
    fn embedding_is_bounded_and_distinct() {
        let a = time_embedding::<f64>(10, 16);
        let b = time_embedding::<f64>(11, 16);
        assert_eq!(a.len(), 16);
        assert!(a.iter().all(|v| v.abs() <= 1.0));
        assert_ne!(a, b);
        // Lowest frequency is 1: sin(t), cos(t).
        assert!((a[0] - 10f64.sin()).abs() < 1e-12 && (a[8] - 10f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn predict_keeps_shape_and_checks_dim() {
        let m = MlpDenoiser::init(arch(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let x = ImageTensor::filled(&[1, 4, 4], 0.3);
        assert_eq!(m.predict(&x, 5).unwrap().shape(), x.shape());
        assert!(matches!(
            m.predict(&ImageTensor::zeros(&[3]), 5),
            Err(DiffusionError::InputDim { expected: 16, got: 3 })
        ));
        assert_eq!(m.parameter_count(), (32 * 8 + 8) + (8 * 8 + 8) + (8 * 16 + 16));
    }

    #[test]
    fn heads_recover_noise_from_exact_outputs() {
        let sched = ScheduleConfig::default().build().unwrap();
        let (x0, eps) = (0.4f64, -1.3f64);
        for t in [1, 10, 200, 999] {
            let ab = sched.alpha_bar(t);
            let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
            let x_t = a * x0 + s * eps;
            for (p, out) in [
                (Prediction::Noise, eps),
                (Prediction::CleanSample, x0),
                (Prediction::Velocity, a * eps - s * x0),
            ] {
                let (c_in, c_out) = head_coefficients(p, &sched, t);
                assert!((c_in * x_t + c_out * out - eps).abs() < 1e-9, "{p:?} t={t}");
            }
        }
    }

    #[test]
    fn rejects_odd_embedding() {
        let mut a = arch();
        a.time_embed_dim = 3;
        assert!(MlpDenoiser::init(a, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn checkpoint_roundtrip() {
        let m = MlpDenoiser::init(arch(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = MlpDenoiser::load(dir.path()).unwrap();
        assert_eq!(back, m);
        let x = ImageTensor::filled(&[1, 4, 4], 0.7);
        assert_eq!(back.predict(&x, 200).unwrap(), m.predict(&x, 200).unwrap());
    }

    #[test]
    fn load_rejects_mismatched_weights() {
        let m = MlpDenoiser::init(arch(), &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        ImageTensor::zeros(&[3])
            .write_tnsr(dir.path().join("layer_1_bias.tnsr"))
            .unwrap();
        assert!(matches!(
            MlpDenoiser::load(dir.path()),
            Err(ToyError::Artifact(_))
        ));
    }
}
