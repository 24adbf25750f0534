//! Membership scores: ReDiffuse, ReDiffuse+ and the loss baseline.
//!
//! Every score is a negated distance, so larger always means more member-like.

pub mod blackbox;
pub mod classifier;
pub mod distance;
pub mod whitebox;

use serde::{Deserialize, Serialize};

pub use blackbox::{averaged_variation, rediffuse_plus_score, rediffuse_score};
pub use classifier::{train_distance_classifier, ClassifierConfig, DiffClassifier, TrainedClassifier};
pub use distance::{dist_lp, dist_ssim, ssim, Distance, DistanceFn};
pub use whitebox::loss_baseline_score;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Rediffuse,
    RediffusePlus,
    LossBaseline,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Rediffuse => "rediffuse",
            Self::RediffusePlus => "rediffuse_plus",
            Self::LossBaseline => "loss_baseline",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "rediffuse" => Ok(Self::Rediffuse),
            "rediffuse_plus" => Ok(Self::RediffusePlus),
            "loss_baseline" => Ok(Self::LossBaseline),
            other => Err(format!("unknown method {other:?}")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackParams {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub distance: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttackRecord {
    pub sample_id: u64,
    pub is_member: bool,
    pub method: Method,
    pub score: f64,
    pub params: AttackParams,
}

/// Member iff `score > -tau`; a score exactly at `-tau` is a nonmember.
pub fn classify_membership(score: f64, tau: f64) -> bool {
    score > -tau
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn threshold_rule() {
        assert!(classify_membership(-0.1, 0.5));
        assert!(!classify_membership(-0.9, 0.5));
        assert!(!classify_membership(-0.5, 0.5));
    }

    #[test]
    fn method_names_roundtrip() {
        for m in [Method::Rediffuse, Method::RediffusePlus, Method::LossBaseline] {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
        assert!("secmi".parse::<Method>().is_err());
    }
}
