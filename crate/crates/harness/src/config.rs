//! Experiment configuration documents.

use std::path::{Path, PathBuf};

use rediffuse_core::attack::{ClassifierConfig, Distance, Method};
use rediffuse_core::diffusion::ScheduleConfig;
use rediffuse_core::toy::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::HarnessError;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "REDIFFUSE_OUTPUT_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NonmemberSource {
    /// The held-out half of the generated dataset.
    #[default]
    HeldOut,
    /// The held-out half re-rendered with a different texture.
    StyleShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Gmm {
        n: usize,
        dims: usize,
        components: usize,
        sigma: f32,
    },
    Shapes {
        n: usize,
        side: usize,
        #[serde(default)]
        nonmembers: NonmemberSource,
    },
}

impl DatasetConfig {
    pub fn len(&self) -> usize {
        match *self {
            Self::Gmm { n, .. } | Self::Shapes { n, .. } => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn nonmembers(&self) -> NonmemberSource {
        match *self {
            Self::Gmm { .. } => NonmemberSource::HeldOut,
            Self::Shapes { nonmembers, .. } => nonmembers,
        }
    }
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self::Shapes {
            n: 400,
            side: 16,
            nonmembers: NonmemberSource::HeldOut,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceKind {
    #[default]
    Lp,
    Ssim,
    /// A classifier over `|a - b|`, trained on a slice of the scored pairs.
    Learned,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    pub method: Method,
    pub n: usize,
    /// Defaults to `T / 5`.
    pub t: Option<usize>,
    /// Defaults to `t / 2`.
    pub k: Option<usize>,
    pub distance: DistanceKind,
    pub p: u32,
    /// Share of pairs used to fit the learned distance.
    pub train_fraction: f64,
    pub classifier: ClassifierConfig,
    /// Score through a remote variation service instead of the local model.
    pub endpoint: Option<String>,
    pub timeout_ms: u64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            method: Method::Rediffuse,
            n: 10,
            t: None,
            k: None,
            distance: DistanceKind::Lp,
            p: 1,
            train_fraction: 0.2,
            classifier: ClassifierConfig::default(),
            endpoint: None,
            timeout_ms: 30_000,
        }
    }
}

impl AttackConfig {
    pub fn resolved_t(&self, steps: usize) -> usize {
        self.t.unwrap_or((steps / 5).max(1))
    }

    pub fn resolved_k(&self, steps: usize) -> usize {
        let t = self.resolved_t(steps);
        self.k.unwrap_or((t / 2).max(1)).clamp(1, t)
    }

    /// Name recorded with every score.
    pub fn distance_name(&self) -> String {
        match self.distance {
            DistanceKind::Lp => format!("l{}", self.p),
            DistanceKind::Ssim => "ssim".into(),
            DistanceKind::Learned => "learned".into(),
        }
    }

    pub fn fixed_distance(&self) -> Option<Distance> {
        match self.distance {
            DistanceKind::Lp => Some(Distance::Lp { p: self.p }),
            DistanceKind::Ssim => Some(Distance::Ssim),
            DistanceKind::Learned => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub target_fpr: f64,
    pub tau: Option<f64>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            target_fpr: 0.01,
            tau: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub dataset: DatasetConfig,
    pub schedule: ScheduleConfig,
    pub training: TrainConfig,
    pub attack: AttackConfig,
    pub eval: EvalConfig,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            dataset: DatasetConfig::default(),
            schedule: ScheduleConfig::default(),
            training: TrainConfig::default(),
            attack: AttackConfig::default(),
            eval: EvalConfig::default(),
            output_dir: default_output_dir(),
        }
    }
}

pub fn default_output_dir() -> PathBuf {
    std::env::var_os(OUTPUT_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("runs"))
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self, HarnessError> {
        serde_json::from_str(text).map_err(|e| HarnessError::Config(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, HarnessError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON form, hex encoded.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(serde_json::to_vec(self).expect("config serializes"));
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |msg: String| Err(HarnessError::Config(msg));
        let steps = self.schedule.steps;
        self.schedule
            .build()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        self.training
            .validate()
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if self.dataset.len() < 2 {
            return bad(format!(
                "dataset needs at least 2 samples, got {}",
                self.dataset.len()
            ));
        }
        if let DatasetConfig::Gmm {
            dims,
            components,
            sigma,
            ..
        } = self.dataset
        {
            if dims == 0 || components == 0 || sigma.is_nan() || sigma <= 0.0 {
                return bad("gmm dims and components must be positive and sigma > 0".into());
            }
        }
        if let DatasetConfig::Shapes { side, .. } = self.dataset {
            if side < 4 {
                return bad(format!("shape side {side} is below 4"));
            }
        }
        let a = &self.attack;
        if a.n == 0 {
            return bad("attack.n must be at least 1".into());
        }
        let t = a.resolved_t(steps);
        if t == 0 || t > steps {
            return bad(format!("attack.t = {t} outside 1..={steps}"));
        }
        if let Some(k) = a.k {
            if k == 0 || k > t {
                return bad(format!("attack.k = {k} outside 1..={t}"));
            }
        }
        if let Some(d) = a.fixed_distance() {
            d.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        }
        if a.distance == DistanceKind::Ssim {
            let is_image = matches!(self.dataset, DatasetConfig::Shapes { .. });
            if !is_image {
                return bad("ssim distance needs a 2-D image dataset".into());
            }
        }
        if a.distance == DistanceKind::Learned {
            if !(a.train_fraction > 0.0 && a.train_fraction < 1.0) {
                return bad(format!(
                    "attack.train_fraction {} outside (0, 1)",
                    a.train_fraction
                ));
            }
            if a.method == Method::LossBaseline {
                return bad("loss_baseline does not use a distance".into());
            }
        }
        if a.endpoint.is_some() && a.method == Method::LossBaseline {
            return bad("loss_baseline needs the local model, not a remote endpoint".into());
        }
        if !(0.0..=1.0).contains(&self.eval.target_fpr) {
            return bad(format!("eval.target_fpr {} outside [0, 1]", self.eval.target_fpr));
        }
        if let Some(tau) = self.eval.tau {
            if !tau.is_finite() {
                return bad("eval.tau must be finite".into());
            }
        }
        Ok(())
    }
}
