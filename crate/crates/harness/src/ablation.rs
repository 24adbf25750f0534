//! One-parameter sweeps over a single trained model.

use std::fs;
use std::time::Instant;

use rediffuse_core::metrics::RocSummary;
use serde::{Deserialize, Serialize};

use crate::config::{DistanceKind, ExperimentConfig};
use crate::error::{HarnessError, Phase, PhaseExt};
use crate::runner::{evaluate, prepare, score_targets, write_run, Prepared, RunManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    N,
    T,
    K,
    P,
}

impl Axis {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::N => "n",
            Self::T => "t",
            Self::K => "k",
            Self::P => "p",
        }
    }
}

impl std::fmt::Display for Axis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Axis {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "n" => Ok(Self::N),
            "t" => Ok(Self::T),
            "k" => Ok(Self::K),
            "p" => Ok(Self::P),
            other => Err(format!("unknown ablation axis {other:?}; expected n, t, k or p")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub axis: Axis,
    pub value: usize,
    pub auc: f64,
    pub asr: f64,
    pub tpr_at_fpr: f64,
}

/// `cfg` with one attack parameter replaced.
pub fn with_axis(cfg: &ExperimentConfig, axis: Axis, value: usize) -> Result<ExperimentConfig, HarnessError> {
    let mut c = cfg.clone();
    match axis {
        Axis::N => c.attack.n = value,
        Axis::T => {
            c.attack.t = Some(value);
            c.attack.k = c.attack.k.map(|k| k.min(value));
        }
        Axis::K => c.attack.k = Some(value),
        Axis::P => {
            if c.attack.distance != DistanceKind::Lp {
                return Err(HarnessError::Config("axis p needs the lp distance".into()));
            }
            c.attack.p = u32::try_from(value).map_err(|_| HarnessError::Config(format!("p = {value}")))?;
        }
    }
    c.output_dir = cfg.output_dir.join(format!("{axis}_{value}"));
    c.validate()
        .map_err(|e| HarnessError::Config(format!("axis {axis} value {value}: {e}")))?;
    Ok(c)
}

/// Scores and evaluates one variant against an already trained model.
pub fn run_variant(
    cfg: &ExperimentConfig,
    prep: &Prepared,
    axis: Axis,
    value: usize,
) -> Result<(RunManifest, RocSummary), HarnessError> {
    let started = Instant::now();
    let c = with_axis(cfg, axis, value)?;
    let records = score_targets(&c, &prep.model, &prep.targets)?;
    let summary = evaluate(&c, &records)?;
    tracing::info!(%axis, value, auc = summary.auc, "ablation point");
    let manifest = write_run(&c, &c.output_dir, &prep.model_dir, &records, &summary, started)?;
    Ok((manifest, summary))
}

pub fn write_ablation_csv<W: std::io::Write>(out: W, rows: &[AblationRow]) -> Result<(), HarnessError> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r).phase(Phase::Write)?;
    }
    w.flush().phase(Phase::Write)
}

pub fn read_ablation_csv<R: std::io::Read>(input: R) -> Result<Vec<AblationRow>, HarnessError> {
    csv::Reader::from_reader(input)
        .deserialize()
        .map(|r| r.phase(Phase::Evaluate))
        .collect()
}

/// Trains once, then runs one scoring pass per value and writes `ablation.csv`.
pub fn run_ablation(
    cfg: &ExperimentConfig,
    axis: Axis,
    values: &[usize],
) -> Result<Vec<RunManifest>, HarnessError> {
    if values.is_empty() {
        return Err(HarnessError::Config("ablation needs at least one value".into()));
    }
    for &v in values {
        with_axis(cfg, axis, v)?;
    }
    fs::create_dir_all(&cfg.output_dir).phase(Phase::Write)?;
    let prep = prepare(cfg)?;
    let mut manifests = Vec::with_capacity(values.len());
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let (m, s) = run_variant(cfg, &prep, axis, v)?;
        rows.push(AblationRow {
            axis,
            value: v,
            auc: s.auc,
            asr: s.asr,
            tpr_at_fpr: s.tpr_at_fpr,
        });
        manifests.push(m);
    }
    let mut buf = Vec::new();
    write_ablation_csv(&mut buf, &rows)?;
    fs::write(cfg.output_dir.join("ablation.csv"), buf).phase(Phase::Write)?;
    Ok(manifests)
}
