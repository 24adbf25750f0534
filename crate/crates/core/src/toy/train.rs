//! Denoising score-matching training on member samples only.

use ndarray::{Array2, NdFloat};
use num_traits::FromPrimitive;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::dataset::{Dataset, MembershipSplit};
use super::denoiser::{build_inputs, head_coefficients, MlpArch, MlpDenoiser, Prediction};
use super::mlp::{Activation, Adam, Gradients, Mlp};
use crate::diffusion::{NoiseSchedule, PixelRange};
use crate::error::ToyError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub time_embed_dim: usize,
    pub activation: Activation,
    pub prediction: Prediction,
    pub pixel_range: PixelRange,
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![256, 256, 256],
            time_embed_dim: 16,
            activation: Activation::Silu,
            prediction: Prediction::Velocity,
            pixel_range: PixelRange::Symmetric,
            steps: 20_000,
            batch_size: 256,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ToyError> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(ToyError::InvalidConfig(
                "steps and batch_size must be positive".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(ToyError::InvalidConfig(format!(
                "learning_rate {} must be positive",
                self.learning_rate
            )));
        }
        Ok(())
    }
}

/// What happened during training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean squared noise-prediction error of each step's batch.
    pub loss_history: Vec<f64>,
    /// How many times each dataset index was read.
    pub sample_reads: Vec<usize>,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.loss_history[0]
    }

    /// Mean loss over the last `window` steps.
    pub fn final_loss(&self, window: usize) -> f64 {
        let w = window.clamp(1, self.loss_history.len());
        self.loss_history[self.loss_history.len() - w..]
            .iter()
            .sum::<f64>()
            / w as f64
    }
}

/// One training batch: network inputs, noise targets and per-row output heads.
pub struct Batch<F> {
    pub input: Array2<F>,
    pub target: Array2<F>,
    /// `(c_in, c_out)` per row; see [`super::denoiser::Prediction`].
    pub heads: Vec<(F, F)>,
}

/// Noise-prediction MSE over all elements and its parameter gradients.
pub fn denoising_loss_and_grads<F: NdFloat + FromPrimitive>(
    net: &Mlp<F>,
    batch: &Batch<F>,
) -> (F, Gradients<F>) {
    let cache = net.forward_cached(batch.input.view());
    let out = cache.output();
    let (rows, d) = out.dim();
    let n = F::from_usize(rows * d).unwrap();
    let two = F::from_f64(2.0).unwrap();
    let mut loss = F::zero();
    let mut d_out = Array2::zeros((rows, d));
    for r in 0..rows {
        let (c_in, c_out) = batch.heads[r];
        for j in 0..d {
            let eps_hat = c_in * batch.input[(r, j)] + c_out * out[(r, j)];
            let diff = eps_hat - batch.target[(r, j)];
            loss += diff * diff;
            d_out[(r, j)] = two * diff * c_out / n;
        }
    }
    (loss / n, net.backward(&cache, &d_out))
}

/// Draws one training batch: member rows noised to random steps, with their noise as target.
pub(crate) struct BatchSampler<'a> {
    ds: &'a Dataset,
    range: PixelRange,
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    reads: Vec<usize>,
}

impl<'a> BatchSampler<'a> {
    pub(crate) fn new(ds: &'a Dataset, members: &[usize], range: PixelRange, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order = members.to_vec();
        order.shuffle(&mut rng);
        Self {
            ds,
            range,
            order,
            cursor: 0,
            rng,
            reads: vec![0; ds.len()],
        }
    }

    fn next_index(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.cursor = 0;
        }
        self.cursor += 1;
        self.order[self.cursor - 1]
    }

    pub(crate) fn next_batch<F: NdFloat + FromPrimitive>(
        &mut self,
        size: usize,
        sched: &NoiseSchedule,
        embed_dim: usize,
        prediction: Prediction,
    ) -> Batch<F> {
        let d = self.ds.samples[0].len();
        let mut noisy = Vec::with_capacity(size);
        let mut target = Array2::zeros((size, d));
        let mut heads = Vec::with_capacity(size);
        for r in 0..size {
            let idx = self.next_index();
            self.reads[idx] += 1;
            let x = self.ds.samples[idx].data();
            let t = self.rng.random_range(1..=sched.steps());
            let (c_in, c_out) = head_coefficients(prediction, sched, t);
            heads.push((F::from_f64(c_in).unwrap(), F::from_f64(c_out).unwrap()));
            let ab = sched.alpha_bar(t);
            let (a, s) = (ab.sqrt(), (1.0 - ab).sqrt());
            let mut xt = Vec::with_capacity(d);
            for (j, &xi) in x.iter().enumerate() {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                let e = e as f32;
                target[(r, j)] = F::from_f32(e).unwrap();
                let xi = self.range.encode_value(xi);
                xt.push((a * xi as f64 + s * e as f64) as f32);
            }
            noisy.push((xt, t));
        }
        let rows: Vec<(&[f32], usize)> = noisy.iter().map(|(v, t)| (v.as_slice(), *t)).collect();
        Batch {
            input: build_inputs(&rows, d, embed_dim),
            target,
            heads,
        }
    }
}

/// Fits an [`MlpDenoiser`] to `ds.samples[split.members]`.
pub fn train_denoiser(
    ds: &Dataset,
    split: &MembershipSplit,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
) -> Result<(MlpDenoiser, TrainReport), ToyError> {
    cfg.validate()?;
    if ds.is_empty() {
        return Err(ToyError::EmptyDataset);
    }
    if split.members.is_empty() {
        return Err(ToyError::NoMembers);
    }
    if let Some(&bad) = split.members.iter().find(|&&i| i >= ds.len()) {
        return Err(ToyError::InvalidConfig(format!(
            "member index {bad} is out of range"
        )));
    }
    let shape = ds.samples[0].shape().to_vec();
    if ds.samples.iter().any(|s| s.shape() != shape.as_slice()) {
        return Err(ToyError::InvalidParams("samples have differing shapes".into()));
    }

    let arch = MlpArch {
        data_shape: shape,
        hidden: cfg.hidden.clone(),
        time_embed_dim: cfg.time_embed_dim,
        activation: cfg.activation,
        prediction: cfg.prediction,
        pixel_range: cfg.pixel_range,
        schedule: sched.config(),
    };
    let mut init_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut model = MlpDenoiser::init(arch, &mut init_rng)?;
    let mut opt = Adam::new(model.net(), cfg.learning_rate as f32);
    let mut sampler = BatchSampler::new(ds, &split.members, cfg.pixel_range, cfg.seed.wrapping_add(1));
    let mut loss_history = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let batch = sampler.next_batch::<f32>(cfg.batch_size, sched, cfg.time_embed_dim, cfg.prediction);
        let (loss, grads) = denoising_loss_and_grads(model.net(), &batch);
        if !loss.is_finite() {
            return Err(ToyError::NonFiniteLoss {
                step,
                loss: loss as f64,
            });
        }
        loss_history.push(loss as f64);
        opt.update(model.net_mut(), &grads);
    }

    Ok((
        model,
        TrainReport {
            loss_history,
            sample_reads: sampler.reads,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::{build_schedule, DenoiserModel};
    use crate::tensor::ImageTensor;
    use crate::toy::dataset::{gen_gmm_dataset, split_members, DatasetKind};
    use crate::variation::{IntervalPolicy, LocalVariation, VariationEndpoint};

    fn small_cfg(steps: usize) -> TrainConfig {
        TrainConfig {
            hidden: vec![32, 32],
            steps,
            batch_size: 32,
            seed: 11,
            ..TrainConfig::default()
        }
    }

    fn sched() -> NoiseSchedule {
        build_schedule(1000, 1e-4, 0.02).unwrap()
    }

    #[test]
    fn loss_trends_down() {
        let ds = gen_gmm_dataset(64, 4, 2, 0.02, 3).unwrap();
        let split = split_members(64, 3).unwrap();
        let (_, report) = train_denoiser(&ds, &split, &sched(), &small_cfg(600)).unwrap();
        let head: f64 = report.loss_history[..50].iter().sum::<f64>() / 50.0;
        assert!(
            report.final_loss(50) < head,
            "{} vs {head}",
            report.final_loss(50)
        );
    }

    #[test]
    fn never_reads_nonmembers() {
        let ds = gen_gmm_dataset(30, 3, 2, 0.05, 5).unwrap();
        let split = split_members(30, 5).unwrap();
        let cfg = small_cfg(40);
        let (_, report) = train_denoiser(&ds, &split, &sched(), &cfg).unwrap();
        for &i in &split.nonmembers {
            assert_eq!(report.sample_reads[i], 0);
        }
        assert_eq!(report.sample_reads.iter().sum::<usize>(), 40 * 32);
        // Epoch shuffling touches every member.
        assert!(split.members.iter().all(|&i| report.sample_reads[i] > 0));
    }

    #[test]
    fn training_is_deterministic() {
        let ds = gen_gmm_dataset(20, 3, 2, 0.05, 6).unwrap();
        let split = split_members(20, 6).unwrap();
        let (a, ra) = train_denoiser(&ds, &split, &sched(), &small_cfg(30)).unwrap();
        let (b, rb) = train_denoiser(&ds, &split, &sched(), &small_cfg(30)).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
    }

    #[test]
    fn overfits_a_single_point() {
        let member = ImageTensor::from_vec(vec![0.2, 0.8, 0.5, 0.3]).unwrap();
        let other = ImageTensor::from_vec(vec![0.7, 0.1, 0.9, 0.6]).unwrap();
        let ds = Dataset {
            kind: DatasetKind::Gmm {
                dims: 4,
                components: 1,
                sigma: 0.0,
            },
            samples: vec![member.clone(), other.clone()],
            labels: None,
            seed: 0,
        };
        let split = MembershipSplit {
            members: vec![0],
            nonmembers: vec![1],
        };
        let s = sched();
        let (model, _) = train_denoiser(&ds, &split, &s, &small_cfg(3000)).unwrap();
        let endpoint = LocalVariation::new(&model, s.clone(), IntervalPolicy::HalfStep)
            .with_pixel_range(model.arch().pixel_range);
        let err = |x: &ImageTensor| -> f64 {
            (0..8)
                .map(|seed| {
                    let out = endpoint.vary(x, 200, seed).unwrap();
                    out.data()
                        .iter()
                        .zip(x.data())
                        .map(|(a, b)| ((a - b) as f64).powi(2))
                        .sum::<f64>()
                        .sqrt()
                })
                .sum::<f64>()
                / 8.0
        };
        let (m, n) = (err(&member), err(&other));
        assert!(m < 0.1 * n, "member {m} nonmember {n}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        for prediction in [Prediction::Noise, Prediction::CleanSample, Prediction::Velocity] {
            check_gradient(prediction);
        }
    }

    fn check_gradient(prediction: Prediction) {
        let ds = gen_gmm_dataset(16, 6, 2, 0.05, 8).unwrap();
        let split = split_members(16, 8).unwrap();
        let s = sched();
        let cfg = TrainConfig {
            prediction,
            ..small_cfg(20)
        };
        let (model, _) = train_denoiser(&ds, &split, &s, &cfg).unwrap();
        let net: Mlp<f64> = model.net().cast();
        let mut sampler = BatchSampler::new(&ds, &split.members, PixelRange::Symmetric, 99);
        let batch = sampler.next_batch::<f64>(8, &s, 16, prediction);
        let (_, grads) = denoising_loss_and_grads(&net, &batch);

        let mut rng = ChaCha8Rng::seed_from_u64(123);
        let h = 1e-5;
        for _ in 0..10 {
            let layer = rng.random_range(0..net.layers().len());
            let (rows, cols) = net.layers()[layer].weight.dim();
            let (r, c) = (rng.random_range(0..rows), rng.random_range(0..cols));
            let mut plus = net.clone();
            plus.layers_mut()[layer].weight[(r, c)] += h;
            let mut minus = net.clone();
            minus.layers_mut()[layer].weight[(r, c)] -= h;
            let fd = (denoising_loss_and_grads(&plus, &batch).0 - denoising_loss_and_grads(&minus, &batch).0)
                / (2.0 * h);
            let an = grads.weights[layer][(r, c)];
            let rel = (fd - an).abs() / (fd.abs() + an.abs()).max(1e-8);
            assert!(rel <= 1e-3, "layer {layer} ({r},{c}): fd {fd} analytic {an}");
        }
    }

    #[test]
    fn small_input_perturbation_is_small() {
        let ds = gen_gmm_dataset(16, 8, 2, 0.05, 2).unwrap();
        let split = split_members(16, 2).unwrap();
        let (model, _) = train_denoiser(&ds, &split, &sched(), &small_cfg(200)).unwrap();
        let x = ds.samples[0].clone();
        let mut shifted = x.data().to_vec();
        shifted[3] += 1e-6;
        let y = ImageTensor::from_vec(shifted).unwrap();
        for t in [1, 200, 1000] {
            let a = model.predict(&x, t).unwrap();
            let b = model.predict(&y, t).unwrap();
            let diff: f32 = a
                .data()
                .iter()
                .zip(b.data())
                .map(|(u, v)| (u - v).powi(2))
                .sum::<f32>()
                .sqrt();
            assert!(diff < 1e-2, "t={t}: {diff}");
        }
    }

    #[test]
    fn divergence_is_reported() {
        let ds = Dataset {
            kind: DatasetKind::Gmm {
                dims: 4,
                components: 1,
                sigma: 0.0,
            },
            samples: vec![ImageTensor::filled(&[4], 1e30); 2],
            labels: None,
            seed: 0,
        };
        let split = split_members(2, 0).unwrap();
        let err = train_denoiser(&ds, &split, &sched(), &small_cfg(5)).unwrap_err();
        assert!(matches!(err, ToyError::NonFiniteLoss { step: 0, .. }), "{err}");
    }

    #[test]
    fn rejects_bad_inputs() {
        let ds = gen_gmm_dataset(4, 2, 1, 0.1, 0).unwrap();
        let empty = MembershipSplit {
            members: vec![],
            nonmembers: vec![0, 1, 2, 3],
        };
        assert!(matches!(
            train_denoiser(&ds, &empty, &sched(), &small_cfg(5)),
            Err(ToyError::NoMembers)
        ));
        let split = split_members(4, 0).unwrap();
        let mut cfg = small_cfg(5);
        cfg.learning_rate = 0.0;
        assert!(train_denoiser(&ds, &split, &sched(), &cfg).is_err());
        cfg = small_cfg(0);
        assert!(train_denoiser(&ds, &split, &sched(), &cfg).is_err());
    }
}
