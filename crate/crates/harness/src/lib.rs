//! Config-driven experiments, ablation sweeps, ROC plots and the variation server.

pub mod ablation;
pub mod config;
pub mod error;
pub mod runner;
pub mod server;
pub mod svg;

pub use ablation::{run_ablation, AblationRow, Axis};
pub use config::{AttackConfig, DatasetConfig, DistanceKind, EvalConfig, ExperimentConfig, NonmemberSource};
pub use error::{HarnessError, Phase};
pub use runner::{run_experiment, RunManifest};
pub use server::{serve_variation_api, spawn_server, ServerConfig, ServerHandle, VariationService};
pub use svg::plot_roc_svg;
