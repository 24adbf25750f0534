//! Learned distance: a small network scoring `|x - x_hat|` as member-like.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::AttackError;
use crate::tensor::ImageTensor;
use crate::toy::mlp::{Activation, Adam, Mlp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            hidden: vec![64],
            epochs: 300,
            learning_rate: 1e-2,
            seed: 0,
        }
    }
}

/// Binary classifier over standardized absolute difference vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffClassifier {
    net: Mlp<f32>,
    mean: Vec<f32>,
    scale: Vec<f32>,
}

/// A trained classifier and the partition of the pairs it saw.
#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    pub classifier: DiffClassifier,
    pub train_indices: Vec<usize>,
    pub holdout_indices: Vec<usize>,
}

fn sigmoid(z: f32) -> f32 {
    1.0 / (1.0 + (-z).exp())
}

fn abs_diff(a: &ImageTensor, b: &ImageTensor) -> Result<Vec<f32>, AttackError> {
    a.ensure_same_shape(b)?;
    Ok(a.data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .collect())
}

impl DiffClassifier {
    pub fn feature_dim(&self) -> usize {
        self.mean.len()
    }

    fn standardize(&self, f: &mut [f32]) {
        for ((v, m), s) in f.iter_mut().zip(&self.mean).zip(&self.scale) {
            *v = (*v - m) / s;
        }
    }

    /// Member probability for the pair `(x, x_hat)`, in `[0, 1]`.
    pub fn member_probability(&self, x: &ImageTensor, x_hat: &ImageTensor) -> Result<f64, AttackError> {
        let mut f = abs_diff(x, x_hat)?;
        if f.len() != self.feature_dim() {
            return Err(AttackError::FeatureDim {
                expected: self.feature_dim(),
                got: f.len(),
            });
        }
        self.standardize(&mut f);
        let input = Array2::from_shape_vec((1, f.len()), f).expect("one row");
        let z = self.net.forward(input.view())[(0, 0)];
        Ok(sigmoid(z) as f64)
    }
}

/// Trains on a seeded `fraction` of `pairs`; the rest is held out.
pub fn train_distance_classifier(
    pairs: &[(ImageTensor, ImageTensor, bool)],
    fraction: f64,
    cfg: &ClassifierConfig,
) -> Result<TrainedClassifier, AttackError> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(AttackError::InvalidFraction(fraction));
    }
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order.shuffle(&mut rng);
    let cut = ((pairs.len() as f64 * fraction).round() as usize).clamp(1, pairs.len());
    let (train, holdout) = order.split_at(cut);
    let has = |label: bool| train.iter().any(|&i| pairs[i].2 == label);
    if !(has(true) && has(false)) {
        return Err(AttackError::SingleClassTraining);
    }

    let features = train
        .iter()
        .map(|&i| abs_diff(&pairs[i].0, &pairs[i].1))
        .collect::<Result<Vec<_>, _>>()?;
    let dim = features[0].len();
    if let Some(f) = features.iter().find(|f| f.len() != dim) {
        return Err(AttackError::FeatureDim {
            expected: dim,
            got: f.len(),
        });
    }
    let n = features.len() as f32;
    let mean: Vec<f32> = (0..dim)
        .map(|j| features.iter().map(|f| f[j]).sum::<f32>() / n)
        .collect();
    let scale: Vec<f32> = (0..dim)
        .map(|j| {
            let var = features.iter().map(|f| (f[j] - mean[j]).powi(2)).sum::<f32>() / n;
            var.sqrt().max(1e-6)
        })
        .collect();

    let mut widths = vec![dim];
    widths.extend(&cfg.hidden);
    widths.push(1);
    let mut clf = DiffClassifier {
        net: Mlp::init(&widths, Activation::Tanh, &mut rng),
        mean,
        scale,
    };
    let mut x = Array2::zeros((features.len(), dim));
    for (r, f) in features.iter().enumerate() {
        let mut f = f.clone();
        clf.standardize(&mut f);
        x.row_mut(r).assign(&ndarray::ArrayView1::from(&f));
    }
    let y: Vec<f32> = train.iter().map(|&i| pairs[i].2 as u8 as f32).collect();

    let mut opt = Adam::new(&clf.net, cfg.learning_rate as f32);
    for _ in 0..cfg.epochs {
        let cache = clf.net.forward_cached(x.view());
        // d/dz of mean binary cross-entropy with logits.
        let d = Array2::from_shape_fn((y.len(), 1), |(r, _)| {
            (sigmoid(cache.output()[(r, 0)]) - y[r]) / n
        });
        let grads = clf.net.backward(&cache, &d);
        opt.update(&mut clf.net, &grads);
    }

    Ok(TrainedClassifier {
        classifier: clf,
        train_indices: train.to_vec(),
        holdout_indices: holdout.to_vec(),
    })
}
