//! The generate, split, train, score, evaluate pipeline.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rediffuse_core::attack::{
    averaged_variation, loss_baseline_score, train_distance_classifier, AttackParams, AttackRecord,
    DistanceFn, Method,
};
use rediffuse_core::diffusion::NoiseSchedule;
use rediffuse_core::metrics::RocSummary;
use rediffuse_core::toy::{
    gen_gmm_dataset, gen_shape_dataset, split_members, style_shift, train_denoiser, Dataset, MembershipSplit,
    MlpDenoiser, TrainReport,
};
use rediffuse_core::variation::{
    derive_seed, repeat_seeds, IntervalPolicy, LocalVariation, RemoteVariation, VariationEndpoint,
};
use rediffuse_core::ImageTensor;
use serde::{Deserialize, Serialize};

use crate::config::{DatasetConfig, ExperimentConfig, NonmemberSource};
use crate::error::{HarnessError, Phase, PhaseExt};
use crate::svg::plot_roc_svg;

/// Sample id stream used for the style-shift render seed.
const STYLE_STREAM: u64 = u64::MAX - 2;

pub const SCORES_HEADER: &str =
    "# scores are negated distances: larger means more member-like; member iff score > -tau";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config_hash: String,
    pub model: PathBuf,
    pub scores: PathBuf,
    pub metrics: PathBuf,
    pub roc_svg: PathBuf,
    pub wall_clock_secs: f64,
    pub version: String,
}

impl RunManifest {
    pub fn paths(&self) -> [&Path; 4] {
        [&self.model, &self.scores, &self.metrics, &self.roc_svg]
    }
}

/// One image the attack scores.
#[derive(Debug, Clone, PartialEq)]
pub struct Target {
    pub sample_id: u64,
    pub is_member: bool,
    pub image: ImageTensor,
}

/// Everything upstream of scoring; shared across ablation runs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub split: MembershipSplit,
    pub targets: Vec<Target>,
    pub model: MlpDenoiser,
    pub schedule: NoiseSchedule,
    pub report: TrainReport,
    pub model_dir: PathBuf,
}

pub fn generate(cfg: &ExperimentConfig) -> Result<Dataset, HarnessError> {
    match cfg.dataset {
        DatasetConfig::Gmm {
            n,
            dims,
            components,
            sigma,
        } => gen_gmm_dataset(n, dims, components, sigma, cfg.seed),
        DatasetConfig::Shapes { n, side, .. } => gen_shape_dataset(n, side, cfg.seed),
    }
    .phase(Phase::Generate)
}

/// Member rows use the originals. Nonmember rows use either the held-out
/// originals or their style-shifted renders, whose ids start at `ds.len()`.
pub fn attack_targets(
    cfg: &ExperimentConfig,
    ds: &Dataset,
    split: &MembershipSplit,
) -> Result<Vec<Target>, HarnessError> {
    let shifted = match cfg.dataset.nonmembers() {
        NonmemberSource::HeldOut => None,
        NonmemberSource::StyleShift => {
            Some(style_shift(ds, derive_seed(cfg.seed, STYLE_STREAM, 0)).phase(Phase::Generate)?)
        }
    };
    let mut targets: Vec<Target> = split
        .members
        .iter()
        .map(|&i| Target {
            sample_id: i as u64,
            is_member: true,
            image: ds.samples[i].clone(),
        })
        .collect();
    for &i in &split.nonmembers {
        targets.push(match &shifted {
            None => Target {
                sample_id: i as u64,
                is_member: false,
                image: ds.samples[i].clone(),
            },
            Some(s) => Target {
                sample_id: (ds.len() + i) as u64,
                is_member: false,
                image: s.samples[i].clone(),
            },
        });
    }
    targets.sort_by_key(|t| t.sample_id);
    Ok(targets)
}

/// Generates, splits, trains and saves the model under `output_dir/model`.
pub fn prepare(cfg: &ExperimentConfig) -> Result<Prepared, HarnessError> {
    cfg.validate()?;
    let schedule = cfg
        .schedule
        .build()
        .map_err(|e| HarnessError::Config(e.to_string()))?;
    let dataset = generate(cfg)?;
    let split = split_members(dataset.len(), cfg.seed).phase(Phase::Split)?;
    let targets = attack_targets(cfg, &dataset, &split)?;
    tracing::info!(samples = dataset.len(), steps = cfg.training.steps, "training");
    let (model, report) = train_denoiser(&dataset, &split, &schedule, &cfg.training).phase(Phase::Train)?;
    let model_dir = cfg.output_dir.join("model");
    model.save(&model_dir).phase(Phase::Write)?;
    fs::write(
        cfg.output_dir.join("train_report.json"),
        serde_json::to_string(&report).phase(Phase::Write)?,
    )
    .phase(Phase::Write)?;
    Ok(Prepared {
        dataset,
        split,
        targets,
        model,
        schedule,
        report,
        model_dir,
    })
}

/// Scores every target with the configured method, using the local model or
/// the configured remote endpoint.
pub fn score_targets(
    cfg: &ExperimentConfig,
    model: &MlpDenoiser,
    targets: &[Target],
) -> Result<Vec<AttackRecord>, HarnessError> {
    let steps = model.schedule().steps();
    let k = cfg.attack.resolved_k(steps);
    match &cfg.attack.endpoint {
        Some(url) => {
            let remote = RemoteVariation::new(url, cfg.attack.timeout_ms).phase(Phase::Score)?;
            score_with(cfg, &remote, Some(model), k, targets)
        }
        None => {
            let local = LocalVariation::new(model, model.schedule().clone(), IntervalPolicy::Fixed(k))
                .with_pixel_range(model.arch().pixel_range);
            score_with(cfg, &local, Some(model), k, targets)
        }
    }
}

/// Scores `targets` through `endpoint`; `model` is only touched by the loss baseline.
pub fn score_with<E: VariationEndpoint + ?Sized>(
    cfg: &ExperimentConfig,
    endpoint: &E,
    model: Option<&MlpDenoiser>,
    k: usize,
    targets: &[Target],
) -> Result<Vec<AttackRecord>, HarnessError> {
    let a = &cfg.attack;
    let t = a.resolved_t(cfg.schedule.steps);
    let params = AttackParams {
        n: a.n,
        t,
        k,
        distance: if a.method == Method::LossBaseline {
            "loss".into()
        } else {
            a.distance_name()
        },
    };
    let record = |target: &Target, score: f64| AttackRecord {
        sample_id: target.sample_id,
        is_member: target.is_member,
        method: a.method,
        score,
        params: params.clone(),
    };

    if a.method == Method::LossBaseline {
        let model = model.ok_or_else(|| HarnessError::Config("loss_baseline needs a model".into()))?;
        let range = model.arch().pixel_range;
        return targets
            .par_iter()
            .map(|tg| {
                let seed = derive_seed(cfg.seed, tg.sample_id, 0);
                loss_baseline_score(model, model.schedule(), &range.encode(&tg.image), t, seed)
                    .map(|s| record(tg, s))
            })
            .collect::<Result<Vec<_>, _>>()
            .phase(Phase::Score);
    }

    // The two images the distance compares, per target.
    let pairs = targets
        .par_iter()
        .map(|tg| match a.method {
            Method::Rediffuse => {
                let seeds = repeat_seeds(cfg.seed, tg.sample_id, a.n);
                averaged_variation(endpoint, &tg.image, t, &seeds).map(|x_hat| (tg.image.clone(), x_hat))
            }
            _ => {
                let s1 = derive_seed(cfg.seed, tg.sample_id, 0);
                let s2 = derive_seed(cfg.seed, tg.sample_id, 1);
                let (u, v) = rayon::join(
                    || endpoint.vary(&tg.image, t, s1),
                    || endpoint.vary(&tg.image, t, s2),
                );
                Ok((u?, v?))
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .phase(Phase::Score)?;

    if let Some(dist) = a.fixed_distance() {
        return targets
            .par_iter()
            .zip(&pairs)
            .map(|(tg, (u, v))| dist.dist(u, v).map(|d| record(tg, -d)))
            .collect::<Result<Vec<_>, _>>()
            .phase(Phase::Score);
    }

    // Learned distance: fit on a slice of the pairs and report only the rest.
    let labelled: Vec<(ImageTensor, ImageTensor, bool)> = pairs
        .into_iter()
        .zip(targets)
        .map(|((u, v), tg)| (u, v, tg.is_member))
        .collect();
    let mut clf_cfg = a.classifier.clone();
    clf_cfg.seed = derive_seed(cfg.seed, clf_cfg.seed, 2);
    let trained = train_distance_classifier(&labelled, a.train_fraction, &clf_cfg).phase(Phase::Score)?;
    let mut holdout = trained.holdout_indices.clone();
    holdout.sort_unstable();
    holdout
        .iter()
        .map(|&i| {
            let (u, v, _) = &labelled[i];
            trained.classifier.dist(u, v).map(|d| record(&targets[i], -d))
        })
        .collect::<Result<Vec<_>, _>>()
        .phase(Phase::Score)
}

#[derive(Serialize, Deserialize)]
struct ScoreRow {
    sample_id: u64,
    is_member: bool,
    method: Method,
    score: f64,
    n: usize,
    t: usize,
    k: usize,
    distance: String,
}

pub fn write_scores_csv<W: std::io::Write>(mut out: W, records: &[AttackRecord]) -> Result<(), HarnessError> {
    writeln!(out, "{SCORES_HEADER}").phase(Phase::Write)?;
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(ScoreRow {
            sample_id: r.sample_id,
            is_member: r.is_member,
            method: r.method,
            score: r.score,
            n: r.params.n,
            t: r.params.t,
            k: r.params.k,
            distance: r.params.distance.clone(),
        })
        .phase(Phase::Write)?;
    }
    w.flush().phase(Phase::Write)
}

pub fn read_scores_csv<R: std::io::Read>(input: R) -> Result<Vec<AttackRecord>, HarnessError> {
    let mut r = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(input);
    r.deserialize::<ScoreRow>()
        .map(|row| {
            let row = row.phase(Phase::Evaluate)?;
            Ok(AttackRecord {
                sample_id: row.sample_id,
                is_member: row.is_member,
                method: row.method,
                score: row.score,
                params: AttackParams {
                    n: row.n,
                    t: row.t,
                    k: row.k,
                    distance: row.distance,
                },
            })
        })
        .collect()
}

pub fn evaluate(cfg: &ExperimentConfig, records: &[AttackRecord]) -> Result<RocSummary, HarnessError> {
    RocSummary::from_records(records, cfg.eval.target_fpr, cfg.eval.tau).phase(Phase::Evaluate)
}

/// Writes scores, metrics, ROC plot and manifest into `dir`.
pub fn write_run(
    cfg: &ExperimentConfig,
    dir: &Path,
    model_dir: &Path,
    records: &[AttackRecord],
    summary: &RocSummary,
    started: Instant,
) -> Result<RunManifest, HarnessError> {
    fs::create_dir_all(dir).phase(Phase::Write)?;
    let scores = dir.join("scores.csv");
    let mut buf = Vec::new();
    write_scores_csv(&mut buf, records)?;
    fs::write(&scores, buf).phase(Phase::Write)?;
    let metrics = dir.join("metrics.json");
    fs::write(
        &metrics,
        serde_json::to_string_pretty(summary).phase(Phase::Write)?,
    )
    .phase(Phase::Write)?;
    let mut points = Vec::new();
    summary.write_points_csv(&mut points).phase(Phase::Write)?;
    fs::write(dir.join("roc_points.csv"), points).phase(Phase::Write)?;
    let roc_svg = dir.join("roc.svg");
    plot_roc_svg(&[(cfg.attack.method.to_string(), summary.clone())], &roc_svg)?;
    fs::write(dir.join("config.json"), cfg.to_json()).phase(Phase::Write)?;
    let manifest = RunManifest {
        config_hash: cfg.hash(),
        model: model_dir.to_path_buf(),
        scores,
        metrics,
        roc_svg,
        wall_clock_secs: started.elapsed().as_secs_f64(),
        version: env!("CARGO_PKG_VERSION").to_string(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest).phase(Phase::Write)?,
    )
    .phase(Phase::Write)?;
    Ok(manifest)
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunManifest, HarnessError> {
    let started = Instant::now();
    cfg.validate()?;
    fs::create_dir_all(&cfg.output_dir).phase(Phase::Write)?;
    let prep = prepare(cfg)?;
    let records = score_targets(cfg, &prep.model, &prep.targets)?;
    let summary = evaluate(cfg, &records)?;
    tracing::info!(auc = summary.auc, asr = summary.asr, "evaluated");
    write_run(cfg, &cfg.output_dir, &prep.model_dir, &records, &summary, started)
}

pub fn load_model(dir: impl AsRef<Path>) -> Result<MlpDenoiser, HarnessError> {
    MlpDenoiser::load(dir.as_ref())
        .map_err(|e| HarnessError::phase(Phase::Score, format!("{}: {e}", dir.as_ref().display())))
}
