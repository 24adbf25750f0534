use std::fs;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rediffuse_core::attack::Method;
use rediffuse_core::metrics::RocSummary;
use rediffuse_core::toy::{load_dataset, save_dataset, split_members, train_denoiser};
use rediffuse_harness::config::{default_output_dir, OUTPUT_DIR_ENV};
use rediffuse_harness::error::PhaseExt;
use rediffuse_harness::runner::{
    attack_targets, evaluate, generate, load_model, read_scores_csv, score_targets, write_run,
};
use rediffuse_harness::{
    plot_roc_svg, run_ablation, run_experiment, serve_variation_api, Axis, DatasetConfig, DistanceKind,
    ExperimentConfig, HarnessError, NonmemberSource, Phase, ServerConfig,
};

#[derive(Parser)]
#[command(
    name = "rediffuse",
    version,
    about = "Membership inference through a variation API"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a toy dataset and its member split.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory; defaults to <output-dir>/data.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a denoiser on the members of a saved dataset.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        /// Model directory; defaults to <output-dir>/model.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Serve the variation API for a saved model.
    Serve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        bind: SocketAddr,
        #[arg(long)]
        default_k: Option<usize>,
        #[arg(long)]
        default_t: Option<usize>,
        /// Linear codec directory; enables latent requests.
        #[arg(long)]
        codec: Option<PathBuf>,
    },
    /// Score a saved dataset against a model or a remote endpoint.
    Attack {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
    },
    /// Compute ROC metrics from a scores file.
    Eval {
        #[arg(long)]
        scores: PathBuf,
        #[arg(long, default_value_t = 0.01)]
        target_fpr: f64,
        /// Threshold for classify-mode accuracy: member iff score > -tau.
        #[arg(long)]
        tau: Option<f64>,
        /// Output directory; defaults to the scores file's directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Sweep one attack parameter over a single trained model.
    Ablate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<usize>,
    },
    /// Plot metrics files as ROC curves.
    Plot {
        /// `NAME=metrics.json`, or a path whose file stem is used as the name.
        #[arg(long = "metrics", required = true)]
        metrics: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate, train, score and evaluate in one go.
    Run {
        #[command(flatten)]
        cfg: ConfigArgs,
    },
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON experiment config; when given it replaces every other flag.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, env = OUTPUT_DIR_ENV)]
    output_dir: Option<PathBuf>,
    #[arg(long, default_value = "shapes", value_parser = ["shapes", "gmm"])]
    dataset: String,
    #[arg(long, default_value_t = 400)]
    samples: usize,
    #[arg(long, default_value_t = 16)]
    side: usize,
    #[arg(long, default_value_t = 2)]
    dims: usize,
    #[arg(long, default_value_t = 4)]
    components: usize,
    #[arg(long, default_value_t = 0.05)]
    sigma: f32,
    /// Re-render nonmembers with a different texture.
    #[arg(long)]
    style_shift: bool,
    #[arg(long = "T", default_value_t = 1000)]
    steps_t: usize,
    #[arg(long)]
    train_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    train_seed: Option<u64>,
    #[arg(long, default_value = "rediffuse")]
    method: Method,
    #[arg(long, default_value_t = 10)]
    n: usize,
    #[arg(long)]
    t: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value = "lp", value_parser = ["lp", "ssim", "learned"])]
    distance: String,
    #[arg(long, default_value_t = 1)]
    p: u32,
    /// Variation service base URL, e.g. http://127.0.0.1:8080.
    #[arg(long)]
    endpoint: Option<String>,
    #[arg(long, default_value_t = 0.01)]
    target_fpr: f64,
    #[arg(long)]
    tau: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig, HarnessError> {
        let cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => self.flag_config(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn flag_config(&self) -> ExperimentConfig {
        let mut cfg = ExperimentConfig {
            seed: self.seed,
            output_dir: self.output_dir.clone().unwrap_or_else(default_output_dir),
            ..Default::default()
        };
        cfg.dataset = if self.dataset == "gmm" {
            DatasetConfig::Gmm {
                n: self.samples,
                dims: self.dims,
                components: self.components,
                sigma: self.sigma,
            }
        } else {
            DatasetConfig::Shapes {
                n: self.samples,
                side: self.side,
                nonmembers: if self.style_shift {
                    NonmemberSource::StyleShift
                } else {
                    NonmemberSource::HeldOut
                },
            }
        };
        cfg.schedule.steps = self.steps_t;
        let tr = &mut cfg.training;
        if let Some(v) = self.train_steps {
            tr.steps = v;
        }
        if let Some(v) = self.batch_size {
            tr.batch_size = v;
        }
        if let Some(v) = self.learning_rate {
            tr.learning_rate = v;
        }
        if let Some(v) = self.train_seed {
            tr.seed = v;
        }
        let a = &mut cfg.attack;
        a.method = self.method;
        a.n = self.n;
        a.t = self.t;
        a.k = self.k;
        a.distance = match self.distance.as_str() {
            "ssim" => DistanceKind::Ssim,
            "learned" => DistanceKind::Learned,
            _ => DistanceKind::Lp,
        };
        a.p = self.p;
        a.endpoint = self.endpoint.clone();
        cfg.eval.target_fpr = self.target_fpr;
        cfg.eval.tau = self.tau;
        cfg
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    fs::write(path, serde_json::to_string_pretty(value).phase(Phase::Write)?).phase(Phase::Write)
}

fn run(cmd: Command) -> Result<(), HarnessError> {
    match cmd {
        Command::GenData { cfg, out } => {
            let cfg = cfg.resolve()?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("data"));
            let ds = generate(&cfg)?;
            let split = split_members(ds.len(), cfg.seed).phase(Phase::Split)?;
            save_dataset(&out, &ds, Some(&split)).phase(Phase::Write)?;
            println!("{}", out.display());
        }
        Command::Train { cfg, data, out } => {
            let cfg = cfg.resolve()?;
            let (ds, split) = load_dataset(&data).phase(Phase::Generate)?;
            let split = match split {
                Some(s) => s,
                None => split_members(ds.len(), cfg.seed).phase(Phase::Split)?,
            };
            let sched = cfg
                .schedule
                .build()
                .map_err(|e| HarnessError::Config(e.to_string()))?;
            let (model, report) = train_denoiser(&ds, &split, &sched, &cfg.training).phase(Phase::Train)?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("model"));
            model.save(&out).phase(Phase::Write)?;
            write_json(&out.join("train_report.json"), &report)?;
            println!("{}", out.display());
        }
        Command::Serve {
            model,
            bind,
            default_k,
            default_t,
            codec,
        } => serve_variation_api(&ServerConfig {
            model_dir: model,
            bind,
            default_k,
            default_t,
            codec_dir: codec,
        })?,
        Command::Attack { cfg, data, model } => {
            let started = Instant::now();
            let mut cfg = cfg.resolve()?;
            let (ds, split) = load_dataset(&data).phase(Phase::Generate)?;
            let split = match split {
                Some(s) => s,
                None => split_members(ds.len(), cfg.seed).phase(Phase::Split)?,
            };
            let m = load_model(&model)?;
            cfg.schedule = m.schedule().config();
            cfg.validate()?;
            let targets = attack_targets(&cfg, &ds, &split)?;
            let records = score_targets(&cfg, &m, &targets)?;
            let summary = evaluate(&cfg, &records)?;
            let manifest = write_run(&cfg, &cfg.output_dir, &model, &records, &summary, started)?;
            println!("{}", manifest.scores.display());
        }
        Command::Eval {
            scores,
            target_fpr,
            tau,
            out,
        } => {
            let file = fs::File::open(&scores)
                .map_err(|e| HarnessError::Config(format!("{}: {e}", scores.display())))?;
            let records = read_scores_csv(file)?;
            let summary = RocSummary::from_records(&records, target_fpr, tau).phase(Phase::Evaluate)?;
            let out = out.unwrap_or_else(|| scores.parent().map(Path::to_path_buf).unwrap_or_default());
            fs::create_dir_all(&out).phase(Phase::Write)?;
            write_json(&out.join("metrics.json"), &summary)?;
            let name = records.first().map(|r| r.method.to_string()).unwrap_or_default();
            plot_roc_svg(&[(name, summary.clone())], out.join("roc.svg"))?;
            println!(
                "auc {:.4} asr {:.4} tpr@{} {:.4}",
                summary.auc, summary.asr, target_fpr, summary.tpr_at_fpr
            );
        }
        Command::Ablate { cfg, axis, values } => {
            let cfg = cfg.resolve()?;
            run_ablation(&cfg, axis, &values)?;
            println!("{}", cfg.output_dir.join("ablation.csv").display());
        }
        Command::Plot { metrics, out } => {
            let mut named = Vec::with_capacity(metrics.len());
            for spec in &metrics {
                let (name, path) = match spec.split_once('=') {
                    Some((n, p)) => (n.to_string(), PathBuf::from(p)),
                    None => {
                        let p = PathBuf::from(spec);
                        let stem = p
                            .file_stem()
                            .map(|s| s.to_string_lossy().into_owned())
                            .unwrap_or_default();
                        (stem, p)
                    }
                };
                let text = fs::read_to_string(&path)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                let summary: RocSummary = serde_json::from_str(&text)
                    .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
                named.push((name, summary));
            }
            plot_roc_svg(&named, &out)?;
        }
        Command::Run { cfg } => {
            let cfg = cfg.resolve()?;
            let manifest = run_experiment(&cfg)?;
            println!("{}", manifest.metrics.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
