//! ROC curve, AUC, attack success rate and TPR at a fixed FPR.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::attack::AttackRecord;
use crate::error::MetricsError;

/// Anything carrying a membership score and its ground-truth label.
pub trait Scored {
    fn score(&self) -> f64;
    fn is_member(&self) -> bool;
}

impl Scored for AttackRecord {
    fn score(&self) -> f64 {
        self.score
    }
    fn is_member(&self) -> bool {
        self.is_member
    }
}

impl Scored for (f64, bool) {
    fn score(&self) -> f64 {
        self.0
    }
    fn is_member(&self) -> bool {
        self.1
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocSummary {
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub asr: f64,
    pub target_fpr: f64,
    pub tpr_at_fpr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub accuracy_at_tau: Option<f64>,
}

/// Cumulative counts after each distinct threshold, highest first.
struct Sweep {
    members: usize,
    nonmembers: usize,
    /// `(true positives, false positives)` including the empty start.
    steps: Vec<(usize, usize)>,
}

fn sweep<S: Scored>(records: &[S]) -> Result<Sweep, MetricsError> {
    let mut scored: Vec<(f64, bool)> = Vec::with_capacity(records.len());
    for (i, r) in records.iter().enumerate() {
        if !r.score().is_finite() {
            return Err(MetricsError::NonFiniteScore(i));
        }
        scored.push((r.score(), r.is_member()));
    }
    let members = scored.iter().filter(|s| s.1).count();
    let nonmembers = scored.len() - members;
    if members == 0 || nonmembers == 0 {
        return Err(MetricsError::SingleClass);
    }
    scored.sort_by(|a, b| b.0.total_cmp(&a.0));
    let mut steps = vec![(0, 0)];
    let (mut tp, mut fp) = (0, 0);
    let mut i = 0;
    while i < scored.len() {
        let theta = scored[i].0;
        while i < scored.len() && scored[i].0 == theta {
            if scored[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        steps.push((tp, fp));
    }
    Ok(Sweep {
        members,
        nonmembers,
        steps,
    })
}

/// One point per distinct threshold (score >= theta), from (0, 0) to (1, 1).
pub fn roc_curve<S: Scored>(records: &[S]) -> Result<Vec<RocPoint>, MetricsError> {
    let s = sweep(records)?;
    Ok(s.steps
        .iter()
        .map(|&(tp, fp)| RocPoint {
            fpr: fp as f64 / s.nonmembers as f64,
            tpr: tp as f64 / s.members as f64,
        })
        .collect())
}

/// Area under a piecewise-linear curve.
pub fn trapezoid(points: &[RocPoint]) -> f64 {
    points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum()
}

/// Probability a random member outranks a random nonmember, ties counting half.
pub fn auc<S: Scored>(records: &[S]) -> Result<f64, MetricsError> {
    let s = sweep(records)?;
    // Each threshold group contributes its nonmembers against members ranked above,
    // plus half of the within-group member/nonmember pairs.
    let mut wins2: u128 = 0;
    for w in s.steps.windows(2) {
        let (tp0, fp0) = w[0];
        let (tp1, fp1) = w[1];
        let (dm, dn) = ((tp1 - tp0) as u128, (fp1 - fp0) as u128);
        wins2 += 2 * dn * tp0 as u128 + dm * dn;
    }
    Ok(wins2 as f64 / (2.0 * s.members as f64 * s.nonmembers as f64))
}

/// Brute-force double loop over all member/nonmember pairs.
pub fn auc_oracle<S: Scored>(records: &[S]) -> Result<f64, MetricsError> {
    let members: Vec<f64> = records
        .iter()
        .filter(|r| r.is_member())
        .map(|r| r.score())
        .collect();
    let nonmembers: Vec<f64> = records
        .iter()
        .filter(|r| !r.is_member())
        .map(|r| r.score())
        .collect();
    if members.is_empty() || nonmembers.is_empty() {
        return Err(MetricsError::SingleClass);
    }
    let mut wins = 0.0;
    for &m in &members {
        for &n in &nonmembers {
            if m > n {
                wins += 1.0;
            } else if m == n {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (members.len() * nonmembers.len()) as f64)
}

/// Best balanced accuracy `(tpr + 1 - fpr) / 2` over all thresholds.
pub fn asr<S: Scored>(records: &[S]) -> Result<f64, MetricsError> {
    Ok(roc_curve(records)?
        .iter()
        .map(|p| (p.tpr + 1.0 - p.fpr) / 2.0)
        .fold(0.0, f64::max))
}

/// Highest TPR among thresholds whose FPR does not exceed `target`.
pub fn tpr_at_fpr<S: Scored>(records: &[S], target: f64) -> Result<f64, MetricsError> {
    if !(0.0..=1.0).contains(&target) {
        return Err(MetricsError::InvalidTarget(target));
    }
    let s = sweep(records)?;
    // Integer comparison avoids 0.01 * 100 landing just below 1.
    let allowed = (target * s.nonmembers as f64 + 1e-9).floor() as usize;
    Ok(s.steps
        .iter()
        .filter(|&&(_, fp)| fp <= allowed)
        .map(|&(tp, _)| tp as f64 / s.members as f64)
        .fold(0.0, f64::max))
}

/// Raw accuracy of the rule `score > -tau`.
pub fn accuracy_at_tau<S: Scored>(records: &[S], tau: f64) -> f64 {
    let correct = records
        .iter()
        .filter(|r| crate::attack::classify_membership(r.score(), tau) == r.is_member())
        .count();
    correct as f64 / records.len().max(1) as f64
}

impl RocSummary {
    pub fn from_records<S: Scored>(
        records: &[S],
        target_fpr: f64,
        tau: Option<f64>,
    ) -> Result<Self, MetricsError> {
        Ok(Self {
            points: roc_curve(records)?,
            auc: auc(records)?,
            asr: asr(records)?,
            target_fpr,
            tpr_at_fpr: tpr_at_fpr(records, target_fpr)?,
            tau,
            accuracy_at_tau: tau.map(|t| accuracy_at_tau(records, t)),
        })
    }

    /// Two-column `fpr,tpr` CSV.
    pub fn write_points_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "fpr,tpr")?;
        for p in &self.points {
            writeln!(out, "{},{}", p.fpr, p.tpr)?;
        }
        Ok(())
    }
}
